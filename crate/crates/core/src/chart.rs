//! Composite exponentials, the chart `E(z, h)`, its Newton inverse, the
//! quasi-distance and anisotropic dilations.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::filtration::Generators;
use crate::filtration::{select_graded_basis, GradedBasis, HormanderSystem, DEFAULT_RANK_TOL};
use crate::flow::{flow, FlowSettings};
use crate::word::{generator_degree, CommutatorWord};

pub const DEFAULT_CHART_RADIUS: f64 = 0.5;
pub const LOG_TOL: f64 = 1e-10;
pub const MAX_NEWTON: usize = 50;

/// A sequence of generator flows `(index, time)` in application order.
pub type FlowProgram = Vec<(usize, f64)>;

fn invert(program: &[(usize, f64)]) -> FlowProgram {
    program.iter().rev().map(|&(i, t)| (i, -t)).collect()
}

/// `C(a; word)` as a flow program, for `a >= 0`.
///
/// A leaf `S` flows for time `a^deg(S)`; a bracket `[A, B]` is
/// `C(B)^-1 C(A)^-1 C(B) C(A)`, the rightmost factor acting first.
pub fn composite_program(a: f64, word: &CommutatorWord) -> FlowProgram {
    match word {
        CommutatorWord::Leaf(i) => vec![(*i, a.powi(generator_degree(*i) as i32))],
        CommutatorWord::Bracket(l, r) => {
            let ca = composite_program(a, l);
            let cb = composite_program(a, r);
            let mut out = ca.clone();
            out.extend_from_slice(&cb);
            out.extend(invert(&ca));
            out.extend(invert(&cb));
            out
        }
    }
}

/// Flow program of `exp*(sigma W) = C(|sigma|^{1/d}; W)`, with the top-level
/// bracket swapped when `sigma < 0`. Leaves flow for time `sigma` directly.
pub fn exp_star_program(sigma: f64, word: &CommutatorWord) -> FlowProgram {
    if sigma == 0.0 {
        return Vec::new();
    }
    if let CommutatorWord::Leaf(i) = word {
        return vec![(*i, sigma)];
    }
    let a = sigma.abs().powf(1.0 / word.degree() as f64);
    if sigma > 0.0 {
        composite_program(a, word)
    } else {
        composite_program(a, &word.swapped())
    }
}

/// Right-nested word `[S_1, [S_2, ... S_l]]` for a generator list.
pub fn nested_word(generators: &[usize]) -> Result<CommutatorWord> {
    let (&last, rest) = generators
        .split_last()
        .ok_or_else(|| LabError::Input("empty generator list".into()))?;
    let mut w = CommutatorWord::leaf(last);
    for &g in rest.iter().rev() {
        w = CommutatorWord::bracket(CommutatorWord::leaf(g), w);
    }
    Ok(w)
}

pub fn run_program(
    generators: &Generators,
    program: &[(usize, f64)],
    z: &[f64],
    settings: &FlowSettings,
) -> Result<Vec<f64>> {
    let mut p = z.to_vec();
    for &(i, t) in program {
        if t == 0.0 {
            continue;
        }
        let field = generators
            .get(i)
            .ok_or_else(|| LabError::Input(format!("generator X{i} not defined")))?;
        p = flow(field, t, &p, settings)?;
    }
    Ok(p)
}

/// `C_l(a; S_1, ..., S_l)(z)` for the right-nested word over `gens`.
pub fn composite_flow(
    generators: &Generators,
    a: f64,
    gens: &[usize],
    z: &[f64],
    settings: &FlowSettings,
) -> Result<Vec<f64>> {
    let word = nested_word(gens)?;
    let program = if a >= 0.0 {
        composite_program(a, &word)
    } else {
        composite_program(-a, &word.swapped())
    };
    run_program(generators, &program, z, settings)
}

pub fn exp_star(
    generators: &Generators,
    sigma: f64,
    word: &CommutatorWord,
    z: &[f64],
    settings: &FlowSettings,
) -> Result<Vec<f64>> {
    run_program(generators, &exp_star_program(sigma, word), z, settings)
}

/// Options for the scaled Newton inverse.
#[derive(Clone, Debug, Default)]
pub struct LogOptions {
    /// Starting coordinates; zero if absent.
    pub guess: Option<Vec<f64>>,
    /// Per-coordinate scales; convergence is measured in `h_i / scale_i`.
    pub scales: Option<Vec<f64>>,
    /// Chord Jacobian; computed at the guess if absent.
    pub jacobian: Option<DMatrix<f64>>,
}

/// Closed-form inverse `(z, zeta) -> h` supplied by models with a known chart.
pub type ClosedLog = fn(&[f64], &[f64]) -> Vec<f64>;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChartDump {
    pub base_point: Vec<f64>,
    pub words: Vec<String>,
    pub degrees: Vec<u32>,
    pub homogeneous_dimension: u32,
    pub steps_per_unit: usize,
    pub blowup_bound: f64,
    pub radius: f64,
}

/// The chart `E(z, .)` at a base point together with its inverse.
#[derive(Clone, Debug)]
pub struct ExpChart {
    generators: Generators,
    basis: GradedBasis,
    settings: FlowSettings,
    radius: f64,
    closed_log: Option<ClosedLog>,
    /// Basis indices in application order: the last entry first, the drift last.
    order: Vec<usize>,
}

impl ExpChart {
    pub fn new(generators: Generators, basis: GradedBasis, settings: FlowSettings) -> Self {
        let drift = basis.drift_position();
        let mut order: Vec<usize> = (0..basis.len())
            .rev()
            .filter(|&k| Some(k) != drift)
            .collect();
        order.extend(drift);
        Self {
            generators,
            basis,
            settings,
            radius: DEFAULT_CHART_RADIUS,
            closed_log: None,
            order,
        }
    }

    /// Chart at `z` with the graded basis selected at `z`.
    pub fn at(system: &HormanderSystem, z: &[f64], settings: FlowSettings) -> Result<Self> {
        let filtration = system.filtration_at(z, DEFAULT_RANK_TOL)?;
        let basis = select_graded_basis(&filtration)?;
        Ok(Self::new(system.generators().clone(), basis, settings))
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }

    pub fn with_closed_log(mut self, log: ClosedLog) -> Self {
        self.closed_log = Some(log);
        self
    }

    pub fn has_closed_log(&self) -> bool {
        self.closed_log.is_some()
    }

    pub fn base_point(&self) -> &[f64] {
        &self.basis.base_point
    }

    pub fn basis(&self) -> &GradedBasis {
        &self.basis
    }

    pub fn generators(&self) -> &Generators {
        &self.generators
    }

    pub fn settings(&self) -> &FlowSettings {
        &self.settings
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dimension(&self) -> usize {
        self.basis.len()
    }

    pub fn degrees(&self) -> Vec<u32> {
        self.basis.degrees()
    }

    pub fn homogeneous_dimension(&self) -> u32 {
        self.basis.homogeneous_dimension
    }

    /// Same chart moved to another base point, keeping the basis words.
    pub fn rebased(&self, z: &[f64]) -> Self {
        let mut c = self.clone();
        c.basis.base_point = z.to_vec();
        c
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dimension() {
            return Err(LabError::DimensionMismatch {
                expected: self.dimension(),
                actual: v.len(),
            });
        }
        Ok(())
    }

    pub fn program(&self, h: &[f64]) -> FlowProgram {
        let mut out = Vec::new();
        for &k in &self.order {
            out.extend(exp_star_program(h[k], &self.basis.entries[k].word));
        }
        out
    }

    /// `E(z, h)` without the radius check.
    pub fn e_map_unchecked(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.check_len(h)?;
        run_program(
            &self.generators,
            &self.program(h),
            self.base_point(),
            &self.settings,
        )
    }

    pub fn e_map(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.check_len(h)?;
        let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > self.radius {
            return Err(LabError::ChartRadius {
                norm,
                radius: self.radius,
            });
        }
        self.e_map_unchecked(h)
    }

    /// Central-difference Jacobian of `h -> E(z, h)` with per-axis steps.
    pub fn jacobian_with_steps(&self, h: &[f64], steps: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dimension();
        let mut j = DMatrix::zeros(n, n);
        let mut probe = h.to_vec();
        for k in 0..n {
            probe[k] = h[k] + steps[k];
            let p = self.e_map_unchecked(&probe)?;
            probe[k] = h[k] - steps[k];
            let m = self.e_map_unchecked(&probe)?;
            probe[k] = h[k];
            for i in 0..n {
                j[(i, k)] = (p[i] - m[i]) / (2.0 * steps[k]);
            }
        }
        Ok(j)
    }

    pub fn jacobian(&self, h: &[f64]) -> Result<DMatrix<f64>> {
        self.jacobian_with_steps(h, &vec![1e-6; self.dimension()])
    }

    /// `|| B(z)^{-1} J(0) - Id ||_inf` where `B` has the basis fields as columns:
    /// `dE/dh_k = Y_k(z)`, so the chart is the identity in the basis frame.
    pub fn jacobian_identity_error(&self) -> Result<f64> {
        let n = self.dimension();
        let j = self.jacobian(&vec![0.0; n])?;
        let b = self.basis.frame_at(self.base_point());
        let lu = b.lu();
        let m = lu
            .solve(&j)
            .ok_or_else(|| LabError::Numeric("singular basis frame".into()))?;
        let d = m - DMatrix::<f64>::identity(n, n);
        Ok((0..n)
            .map(|i| (0..n).map(|k| d[(i, k)].abs()).sum::<f64>())
            .fold(0.0, f64::max))
    }

    /// `Log(zeta)`: the closed form when the model supplies one, otherwise
    /// damped Newton from `h = 0`.
    pub fn log_map(&self, zeta: &[f64]) -> Result<Vec<f64>> {
        self.log_map_with(zeta, &LogOptions::default())
    }

    pub fn log_map_with(&self, zeta: &[f64], opts: &LogOptions) -> Result<Vec<f64>> {
        self.check_len(zeta)?;
        match self.closed_log {
            Some(log) => Ok(log(self.base_point(), zeta)),
            None => self.log_map_newton(zeta, opts),
        }
    }

    /// Damped chord-Newton inverse with optional guess and axis scales.
    pub fn log_map_newton(&self, zeta: &[f64], opts: &LogOptions) -> Result<Vec<f64>> {
        let n = self.dimension();
        self.check_len(zeta)?;
        let scales = opts.scales.clone().unwrap_or_else(|| vec![1.0; n]);
        let mut h = opts.guess.clone().unwrap_or_else(|| vec![0.0; n]);
        let steps: Vec<f64> = scales.iter().map(|s| 1e-6 * s).collect();
        let scaled = opts.scales.is_some();

        let residual = |h: &[f64]| -> Result<DVector<f64>> {
            let p = self.e_map_unchecked(h)?;
            Ok(DVector::from_iterator(
                n,
                p.iter().zip(zeta).map(|(a, b)| a - b),
            ))
        };
        let mut r = residual(&h)?;
        let mut lu = match &opts.jacobian {
            Some(j) => j.clone().lu(),
            None => self.jacobian_with_steps(&h, &steps)?.lu(),
        };
        let size = |r: &DVector<f64>, lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>| {
            if scaled {
                match lu.solve(r) {
                    Some(d) => d
                        .iter()
                        .zip(&scales)
                        .map(|(v, s)| (v / s).abs())
                        .fold(0.0, f64::max),
                    None => f64::INFINITY,
                }
            } else {
                r.amax()
            }
        };
        let mut err = size(&r, &lu);
        let mut stalled = 0;
        for it in 0..MAX_NEWTON {
            if err < LOG_TOL {
                return Ok(h);
            }
            let delta = lu.solve(&r).ok_or_else(|| LabError::OutOfChart {
                residual: r.amax(),
                iterations: it,
            })?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial: Vec<f64> = h.iter().zip(delta.iter()).map(|(a, d)| a - t * d).collect();
                let rt = residual(&trial)?;
                let et = size(&rt, &lu);
                if et < err {
                    h = trial;
                    r = rt;
                    let ratio = et / err;
                    err = et;
                    accepted = true;
                    if ratio > 0.25 {
                        stalled += 1;
                    }
                    break;
                }
                t *= 0.5;
            }
            if !accepted || stalled >= 3 {
                lu = self.jacobian_with_steps(&h, &steps)?.lu();
                err = size(&r, &lu);
                stalled = 0;
                if !accepted && err >= LOG_TOL {
                    // one more try with a fresh Jacobian before giving up
                    let d = match lu.solve(&r) {
                        Some(d) => d,
                        None => break,
                    };
                    let trial: Vec<f64> = h.iter().zip(d.iter()).map(|(a, d)| a - d).collect();
                    let rt = residual(&trial)?;
                    let et = size(&rt, &lu);
                    if et < err {
                        h = trial;
                        r = rt;
                        err = et;
                    } else {
                        break;
                    }
                }
            }
        }
        if err < LOG_TOL {
            return Ok(h);
        }
        Err(LabError::OutOfChart {
            residual: r.amax(),
            iterations: MAX_NEWTON,
        })
    }

    /// `sum_i |h_i|^{1/deg_i}`.
    pub fn gauge(&self, h: &[f64]) -> f64 {
        h.iter()
            .zip(&self.basis.entries)
            .map(|(v, e)| v.abs().powf(1.0 / e.degree as f64))
            .sum()
    }

    pub fn quasi_distance(&self, zeta: &[f64]) -> Result<f64> {
        Ok(self.gauge(&self.log_map(zeta)?))
    }

    /// `delta_r(h)_i = r^{deg_i} h_i`.
    pub fn dilate_coords(&self, r: f64, h: &[f64]) -> Vec<f64> {
        h.iter()
            .zip(&self.basis.entries)
            .map(|(v, e)| v * r.powi(e.degree as i32))
            .collect()
    }

    pub fn dilate(&self, r: f64, zeta: &[f64]) -> Result<Vec<f64>> {
        if r <= 0.0 {
            return Err(LabError::Input(format!(
                "dilation factor must be positive, got {r}"
            )));
        }
        let h = self.log_map(zeta)?;
        self.e_map(&self.dilate_coords(r, &h))
    }

    pub fn dump(&self) -> ChartDump {
        ChartDump {
            base_point: self.base_point().to_vec(),
            words: self
                .basis
                .entries
                .iter()
                .map(|e| e.word.to_string())
                .collect(),
            degrees: self.degrees(),
            homogeneous_dimension: self.homogeneous_dimension(),
            steps_per_unit: self.settings.steps_per_unit,
            blowup_bound: self.settings.blowup_bound,
            radius: self.radius,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::VectorField;
    use crate::polynomial::Polynomial;

    fn kolmogorov() -> HormanderSystem {
        let n = 3;
        let x0 = VectorField::new(vec![
            Polynomial::zero(n),
            Polynomial::variable(n, 0),
            Polynomial::constant(n, 1.0),
        ])
        .unwrap();
        let g = Generators::new(Some(x0), vec![VectorField::coordinate(n, 0)]).unwrap();
        HormanderSystem::new(g, 6).unwrap()
    }

    #[test]
    fn kolmogorov_bracket_displacement_both_signs() {
        let sys = kolmogorov();
        let w = CommutatorWord::bracket(CommutatorWord::leaf(1), CommutatorWord::leaf(0));
        let s = FlowSettings::default();
        for sigma in [0.3, -0.3, 1e-4] {
            let p = exp_star(sys.generators(), sigma, &w, &[0.0; 3], &s).unwrap();
            assert!((p[1] - sigma).abs() < 1e-14, "{p:?}");
            assert!(p[0].abs() < 1e-14 && p[2].abs() < 1e-14);
        }
        assert_eq!(
            exp_star(sys.generators(), 0.0, &w, &[0.1, 0.2, 0.3], &s).unwrap(),
            vec![0.1, 0.2, 0.3]
        );
    }

    #[test]
    fn kolmogorov_chart_closed_form() {
        let chart = ExpChart::at(&kolmogorov(), &[0.0; 3], FlowSettings::default()).unwrap();
        let h = [0.2, -0.3, 0.1]; // (h1, h0, h3)
        let p = chart.e_map(&h).unwrap();
        assert!((p[0] - 0.2).abs() < 1e-14);
        assert!((p[1] - (0.1 + -0.3 * 0.2)).abs() < 1e-14);
        assert!((p[2] + 0.3).abs() < 1e-14);
        let back = chart.log_map(&p).unwrap();
        for (a, b) in back.iter().zip(&h) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(chart.jacobian_identity_error().unwrap() < 1e-6);
    }

    #[test]
    fn scaled_log_resolves_tiny_coordinates() {
        let chart = ExpChart::at(&kolmogorov(), &[0.0; 3], FlowSettings::default()).unwrap();
        let h = [3e-3, 1e-5, 2e-8];
        let p = chart.e_map(&h).unwrap();
        let opts = LogOptions {
            scales: Some(vec![1e-3, 1e-6, 1e-9]),
            ..Default::default()
        };
        let back = chart.log_map_with(&p, &opts).unwrap();
        assert!((back[2] - 2e-8).abs() < 1e-17);
    }
}
