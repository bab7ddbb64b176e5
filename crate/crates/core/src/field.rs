//! Polynomial vector fields and their Lie brackets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::polynomial::{Polynomial, Term};

/// A first-order differential operator `X = sum_j b_j(x) d/dx_j` on `R^n`
/// with polynomial coefficients `b_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    coefficients: Vec<Polynomial>,
    /// Affine with `A^4 = 0` for the linear part, so one RK4 step is exact.
    exact_rk4: bool,
}

fn affine_nilpotent(coefficients: &[Polynomial]) -> bool {
    let n = coefficients.len();
    if coefficients.iter().any(|c| c.total_degree() > 1) {
        return false;
    }
    let mut a = vec![vec![0.0; n]; n];
    for (i, c) in coefficients.iter().enumerate() {
        for (k, row) in a[i].iter_mut().enumerate() {
            *row = c.partial(k).eval(&vec![0.0; n]);
        }
    }
    let mul = |x: &Vec<Vec<f64>>, y: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| x[i][k] * y[k][j]).sum()).collect())
            .collect()
    };
    let a2 = mul(&a, &a);
    mul(&a2, &a2).iter().flatten().all(|v| *v == 0.0)
}

impl VectorField {
    fn from_polys(coefficients: Vec<Polynomial>) -> Self {
        let exact_rk4 = affine_nilpotent(&coefficients);
        Self {
            coefficients,
            exact_rk4,
        }
    }

    /// True when a single RK4 step reproduces the flow exactly.
    pub fn exact_rk4(&self) -> bool {
        self.exact_rk4
    }

    pub fn new(coefficients: Vec<Polynomial>) -> Result<Self> {
        let n = coefficients.len();
        if n == 0 {
            return Err(LabError::Input(
                "vector field needs at least one coefficient".into(),
            ));
        }
        for c in &coefficients {
            if c.dimension() != n {
                return Err(LabError::DimensionMismatch {
                    expected: n,
                    actual: c.dimension(),
                });
            }
        }
        Ok(Self::from_polys(coefficients))
    }

    pub fn zero(dimension: usize) -> Self {
        Self::from_polys(vec![Polynomial::zero(dimension); dimension])
    }

    /// The coordinate field `d/dx_index`.
    pub fn coordinate(dimension: usize, index: usize) -> Self {
        let mut c = vec![Polynomial::zero(dimension); dimension];
        c[index] = Polynomial::constant(dimension, 1.0);
        Self::from_polys(c)
    }

    pub fn dimension(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self) -> &[Polynomial] {
        &self.coefficients
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.iter().all(Polynomial::is_zero)
    }

    /// Coefficient vector `b(x)`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.eval(x)).collect()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.coefficients) {
            *o = c.eval(x);
        }
    }

    /// Exact action on a polynomial: `X p = sum_j b_j dp/dx_j`.
    pub fn apply_poly(&self, p: &Polynomial) -> Polynomial {
        let mut acc = Polynomial::zero(self.dimension());
        for (j, b) in self.coefficients.iter().enumerate() {
            if b.is_zero() {
                continue;
            }
            let dp = p.partial(j);
            if !dp.is_zero() {
                acc = &acc + &(b * &dp);
            }
        }
        acc
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_polys(self.coefficients.iter().map(|c| c.scale(s)).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::from_polys(
            self.coefficients
                .iter()
                .zip(&other.coefficients)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn from_terms(dimension: usize, coefficients: &[Vec<Term>]) -> Result<Self> {
        if coefficients.len() != dimension {
            return Err(LabError::DimensionMismatch {
                expected: dimension,
                actual: coefficients.len(),
            });
        }
        let polys = coefficients
            .iter()
            .map(|t| Polynomial::from_terms(dimension, t))
            .collect::<Result<Vec<_>>>()?;
        Self::new(polys)
    }

    pub fn to_terms(&self) -> Vec<Vec<Term>> {
        self.coefficients.iter().map(Polynomial::to_terms).collect()
    }
}

impl fmt::Display for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (j, c) in self.coefficients.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({c})d{}", j + 1)?;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// `[X, Y] = XY - YX`, computed coefficient-wise as `X(b^Y_k) - Y(b^X_k)`.
pub fn lie_bracket(x: &VectorField, y: &VectorField) -> Result<VectorField> {
    if x.dimension() != y.dimension() {
        return Err(LabError::DimensionMismatch {
            expected: x.dimension(),
            actual: y.dimension(),
        });
    }
    let coefficients = x
        .coefficients
        .iter()
        .zip(&y.coefficients)
        .map(|(bx, by)| &x.apply_poly(by) - &y.apply_poly(bx))
        .collect();
    Ok(VectorField::from_polys(coefficients))
}

/// Black-box scalar function evaluated at a point.
pub trait ScalarFunction: Sync {
    fn value(&self, x: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> ScalarFunction for F {
    fn value(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// Function argument for [`apply_field`]: exact polynomial or black box.
pub enum FieldArgument<'a> {
    Polynomial(&'a Polynomial),
    BlackBox(&'a dyn ScalarFunction),
}

/// Default central-difference step `1e-5 (1 + |z|)`.
pub fn fd_step(z: &[f64]) -> f64 {
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    1e-5 * (1.0 + norm)
}

/// Directional derivative `X f (z) = sum_j b_j(z) d_j f(z)`.
///
/// Polynomials are differentiated symbolically; black boxes by central
/// differences in each coordinate with step [`fd_step`].
pub fn apply_field(x: &VectorField, f: FieldArgument<'_>, z: &[f64]) -> Result<f64> {
    if z.len() != x.dimension() {
        return Err(LabError::DimensionMismatch {
            expected: x.dimension(),
            actual: z.len(),
        });
    }
    match f {
        FieldArgument::Polynomial(p) => {
            if p.dimension() != x.dimension() {
                return Err(LabError::DimensionMismatch {
                    expected: x.dimension(),
                    actual: p.dimension(),
                });
            }
            Ok(x.apply_poly(p).eval(z))
        }
        FieldArgument::BlackBox(g) => {
            let h = fd_step(z);
            let b = x.eval(z);
            let mut acc = 0.0;
            let mut probe = z.to_vec();
            for (j, bj) in b.iter().enumerate() {
                if *bj == 0.0 {
                    continue;
                }
                probe[j] = z[j] + h;
                let fp = g.value(&probe);
                probe[j] = z[j] - h;
                let fm = g.value(&probe);
                probe[j] = z[j];
                if !fp.is_finite() || !fm.is_finite() {
                    return Err(LabError::Numeric(format!(
                        "function not finite near {z:?} along coordinate {j}"
                    )));
                }
                acc += bj * (fp - fm) / (2.0 * h);
            }
            Ok(acc)
        }
    }
}

/// Serialized form of a field: one coefficient term list per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub coefficients: Vec<Vec<Term>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heisenberg() -> (VectorField, VectorField) {
        let n = 3;
        let x1 = Polynomial::variable(n, 0);
        let x2 = Polynomial::variable(n, 1);
        let one = Polynomial::constant(n, 1.0);
        let zero = Polynomial::zero(n);
        let a = VectorField::new(vec![one.clone(), zero.clone(), x2.scale(-0.5)]).unwrap();
        let b = VectorField::new(vec![zero, one, x1.scale(0.5)]).unwrap();
        (a, b)
    }

    #[test]
    fn constant_fields_commute() {
        let dx = VectorField::coordinate(2, 0);
        let dy = VectorField::coordinate(2, 1);
        assert!(lie_bracket(&dx, &dy).unwrap().is_zero());
    }

    #[test]
    fn heisenberg_bracket_is_vertical() {
        let (a, b) = heisenberg();
        let c = lie_bracket(&a, &b).unwrap();
        assert_eq!(c, VectorField::coordinate(3, 2));
    }

    #[test]
    fn kolmogorov_bracket() {
        // (x, y, t): X1 = dx, X0 = x dy + dt
        let n = 3;
        let x1 = VectorField::coordinate(n, 0);
        let x0 = VectorField::new(vec![
            Polynomial::zero(n),
            Polynomial::variable(n, 0),
            Polynomial::constant(n, 1.0),
        ])
        .unwrap();
        assert_eq!(
            lie_bracket(&x1, &x0).unwrap(),
            VectorField::coordinate(n, 1)
        );
    }

    #[test]
    fn bracket_dimension_mismatch() {
        let a = VectorField::coordinate(2, 0);
        let b = VectorField::coordinate(3, 0);
        assert!(matches!(
            lie_bracket(&a, &b),
            Err(LabError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn apply_field_examples() {
        let dx = VectorField::coordinate(1, 0);
        let x = Polynomial::variable(1, 0);
        let sq = &x * &x;
        assert_eq!(
            apply_field(&dx, FieldArgument::Polynomial(&sq), &[3.0]).unwrap(),
            6.0
        );

        let n = 3;
        let x0 = VectorField::new(vec![
            Polynomial::zero(n),
            Polynomial::variable(n, 0),
            Polynomial::constant(n, 1.0),
        ])
        .unwrap();
        let y = Polynomial::variable(n, 1);
        assert_eq!(
            apply_field(&x0, FieldArgument::Polynomial(&y), &[2.0, 0.0, 0.0]).unwrap(),
            2.0
        );
        let by_fd = apply_field(
            &x0,
            FieldArgument::BlackBox(&|p: &[f64]| p[1]),
            &[2.0, 0.0, 0.0],
        )
        .unwrap();
        assert!((by_fd - 2.0).abs() < 1e-9);

        let (a, _) = heisenberg();
        let x3 = Polynomial::variable(3, 2);
        assert_eq!(
            apply_field(&a, FieldArgument::Polynomial(&x3), &[1.0, 1.0, 0.0]).unwrap(),
            -0.5
        );
    }

    #[test]
    fn black_box_rejects_non_finite() {
        let dx = VectorField::coordinate(1, 0);
        let f = |p: &[f64]| p[0].ln();
        assert!(matches!(
            apply_field(&dx, FieldArgument::BlackBox(&f), &[0.0]),
            Err(LabError::Numeric(_))
        ));
    }
}
