//! Sparse multivariate polynomials with real coefficients.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// A polynomial in `dimension` variables stored as a map from exponent
/// multi-index to coefficient. Zero coefficients are never stored.
#[derive(Clone, PartialEq, Debug)]
pub struct Polynomial {
    dimension: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

/// One `{exponents, coeff}` entry of the field-file format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub exponents: Vec<u32>,
    pub coeff: f64,
}

impl Polynomial {
    pub fn zero(dimension: usize) -> Self {
        Self {
            dimension,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dimension: usize, c: f64) -> Self {
        let mut p = Self::zero(dimension);
        p.insert(vec![0; dimension], c);
        p
    }

    /// The coordinate function `x_index`.
    pub fn variable(dimension: usize, index: usize) -> Self {
        assert!(index < dimension, "variable index out of range");
        let mut e = vec![0; dimension];
        e[index] = 1;
        let mut p = Self::zero(dimension);
        p.insert(e, 1.0);
        p
    }

    pub fn monomial(coeff: f64, exponents: Vec<u32>) -> Self {
        let mut p = Self::zero(exponents.len());
        p.insert(exponents, coeff);
        p
    }

    pub fn from_terms(dimension: usize, terms: &[Term]) -> Result<Self> {
        let mut p = Self::zero(dimension);
        for t in terms {
            if t.exponents.len() != dimension {
                return Err(LabError::DimensionMismatch {
                    expected: dimension,
                    actual: t.exponents.len(),
                });
            }
            if !t.coeff.is_finite() {
                return Err(LabError::Input(format!(
                    "non-finite coefficient {}",
                    t.coeff
                )));
            }
            p.insert(t.exponents.clone(), t.coeff);
        }
        Ok(p)
    }

    pub fn to_terms(&self) -> Vec<Term> {
        self.terms
            .iter()
            .map(|(e, c)| Term {
                exponents: e.clone(),
                coeff: *c,
            })
            .collect()
    }

    fn insert(&mut self, exponents: Vec<u32>, coeff: f64) {
        match self.terms.entry(exponents) {
            Entry::Vacant(v) => {
                if coeff != 0.0 {
                    v.insert(coeff);
                }
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += coeff;
                if *o.get() == 0.0 {
                    o.remove();
                }
            }
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], f64)> {
        self.terms.iter().map(|(e, c)| (e.as_slice(), *c))
    }

    pub fn total_degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// Weighted degree of the highest term, with weight `w[i]` on variable `i`.
    pub fn weighted_degree(&self, weights: &[u32]) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().zip(weights).map(|(a, w)| a * w).sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut p = Self::zero(self.dimension);
        if s != 0.0 {
            for (e, c) in &self.terms {
                p.insert(e.clone(), c * s);
            }
        }
        p
    }

    /// Exact partial derivative with respect to variable `index`.
    pub fn partial(&self, index: usize) -> Self {
        let mut p = Self::zero(self.dimension);
        for (e, c) in &self.terms {
            if e[index] > 0 {
                let mut d = e.clone();
                let k = d[index];
                d[index] -= 1;
                p.insert(d, c * k as f64);
            }
        }
        p
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dimension);
        let mut acc = 0.0;
        for (e, c) in &self.terms {
            let mut v = *c;
            for (xi, &k) in x.iter().zip(e) {
                if k > 0 {
                    v *= xi.powi(k as i32);
                }
            }
            acc += v;
        }
        acc
    }

    fn check_dim(&self, other: &Self) {
        assert_eq!(
            self.dimension, other.dimension,
            "polynomial dimension mismatch"
        );
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.check_dim(rhs);
        let mut p = self.clone();
        for (e, c) in &rhs.terms {
            p.insert(e.clone(), *c);
        }
        p
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.check_dim(rhs);
        let mut p = self.clone();
        for (e, c) in &rhs.terms {
            p.insert(e.clone(), -*c);
        }
        p
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.check_dim(rhs);
        let mut p = Polynomial::zero(self.dimension);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &rhs.terms {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                p.insert(e, ca * cb);
            }
        }
        p
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (e, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{c}")?;
            for (i, k) in e.iter().enumerate() {
                match k {
                    0 => {}
                    1 => write!(f, "*x{}", i + 1)?,
                    _ => write!(f, "*x{}^{}", i + 1, k)?,
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cancellation_removes_terms() {
        let x = Polynomial::variable(2, 0);
        let d = &x - &x;
        assert!(d.is_zero());
        assert_eq!(d.num_terms(), 0);
    }

    #[test]
    fn product_and_derivative() {
        let x = Polynomial::variable(2, 0);
        let y = Polynomial::variable(2, 1);
        let p = &(&x * &x) * &y; // x^2 y
        assert_eq!(p.eval(&[3.0, 2.0]), 18.0);
        let px = p.partial(0);
        assert_eq!(px.eval(&[3.0, 2.0]), 12.0);
        assert!(p.partial(1).partial(1).is_zero());
        assert_eq!(p.total_degree(), 3);
        assert_eq!(p.weighted_degree(&[1, 3]), 5);
    }

    #[test]
    fn terms_reject_wrong_length() {
        let err = Polynomial::from_terms(
            2,
            &[Term {
                exponents: vec![1],
                coeff: 1.0,
            }],
        )
        .unwrap_err();
        assert!(matches!(err, LabError::DimensionMismatch { .. }));
    }
}
