//! Fixed-step RK4 integral curves of polynomial vector fields; a single
//! step for affine fields with nilpotent linear part, where RK4 is exact.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::field::VectorField;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSettings {
    /// Number of RK4 steps per unit of flow time.
    pub steps_per_unit: usize,
    /// Trajectories whose Euclidean norm exceeds this are reported as escaped.
    pub blowup_bound: f64,
}

impl Default for FlowSettings {
    fn default() -> Self {
        Self {
            steps_per_unit: 64,
            blowup_bound: 1e8,
        }
    }
}

impl FlowSettings {
    pub fn steps_for(&self, s: f64) -> usize {
        ((s.abs() * self.steps_per_unit as f64).ceil() as usize).max(1)
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `exp(sX)(z)`.
pub fn flow(x: &VectorField, s: f64, z: &[f64], settings: &FlowSettings) -> Result<Vec<f64>> {
    let n = x.dimension();
    if z.len() != n {
        return Err(LabError::DimensionMismatch {
            expected: n,
            actual: z.len(),
        });
    }
    let mut p = z.to_vec();
    if s == 0.0 {
        return Ok(p);
    }
    let steps = if x.exact_rk4() { 1 } else { settings.steps_for(s) };
    let dt = s / steps as f64;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for step in 0..steps {
        x.eval_into(&p, &mut k1);
        for i in 0..n {
            tmp[i] = p[i] + 0.5 * dt * k1[i];
        }
        x.eval_into(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = p[i] + 0.5 * dt * k2[i];
        }
        x.eval_into(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = p[i] + dt * k3[i];
        }
        x.eval_into(&tmp, &mut k4);
        for i in 0..n {
            p[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let r = norm(&p);
        if !r.is_finite() || r > settings.blowup_bound {
            return Err(LabError::FlowEscape {
                bound: settings.blowup_bound,
                norm: r,
                time: dt * (step + 1) as f64,
            });
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polynomial::Polynomial;

    #[test]
    fn constant_field_translates() {
        let dx = VectorField::coordinate(3, 0);
        let p = flow(&dx, 0.7, &[0.0; 3], &FlowSettings::default()).unwrap();
        assert!((p[0] - 0.7).abs() < 1e-15);
        assert_eq!(&p[1..], &[0.0, 0.0]);
    }

    #[test]
    fn kolmogorov_drift_closed_form() {
        let n = 3;
        let x0 = VectorField::new(vec![
            Polynomial::zero(n),
            Polynomial::variable(n, 0),
            Polynomial::constant(n, 1.0),
        ])
        .unwrap();
        let z = [0.4, -0.2, 0.1];
        let s = -0.37;
        let p = flow(&x0, s, &z, &FlowSettings::default()).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-14);
        assert!((p[1] - (-0.2 + s * 0.4)).abs() < 1e-14);
        assert!((p[2] - (0.1 + s)).abs() < 1e-14);
    }

    #[test]
    fn quadratic_field_escapes() {
        // x' = x^2 blows up at t = 1 from x = 1
        let x = Polynomial::variable(1, 0);
        let f = VectorField::new(vec![&x * &x]).unwrap();
        let err = flow(&f, 2.0, &[1.0], &FlowSettings::default()).unwrap_err();
        assert!(matches!(err, LabError::FlowEscape { .. }));
    }
}
