//! Scalar test functions given as text, e.g. `sin(x)*y + t^2`.
//!
//! Variables are the model's coordinate names or the generic `x1..xn`.

use exmex::{Differentiate, Express, FlatEx};

use crate::error::{LabError, Result};
use crate::field::ScalarFunction;

#[derive(Clone, Debug)]
pub struct ScalarExpr {
    text: String,
    expr: FlatEx<f64>,
    slots: Vec<usize>,
}

impl ScalarExpr {
    pub fn parse(text: &str, names: &[&str]) -> Result<Self> {
        let expr = exmex::parse::<f64>(text).map_err(|e| LabError::Parse(e.to_string()))?;
        let n = names.len();
        let slots = expr
            .var_names()
            .iter()
            .map(|v| {
                if let Some(i) = names.iter().position(|m| m == v) {
                    return Ok(i);
                }
                v.strip_prefix('x')
                    .and_then(|d| d.parse::<usize>().ok())
                    .filter(|k| (1..=n).contains(k))
                    .map(|k| k - 1)
                    .ok_or_else(|| LabError::Parse(format!("unknown variable `{v}` in `{text}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            text: text.to_string(),
            expr,
            slots,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Symbolic `d/dz_k`.
    pub fn partial(&self, k: usize) -> Result<Self> {
        let Some(pos) = self.slots.iter().position(|&s| s == k) else {
            return Ok(Self {
                text: "0".into(),
                expr: exmex::parse::<f64>("0").map_err(|e| LabError::Parse(e.to_string()))?,
                slots: Vec::new(),
            });
        };
        let old: Vec<String> = self.expr.var_names().to_vec();
        let expr = self
            .expr
            .clone()
            .partial(pos)
            .map_err(|e| LabError::Parse(e.to_string()))?;
        let slots = expr
            .var_names()
            .iter()
            .map(|v| self.slots[old.iter().position(|o| o == v).expect("variable kept")])
            .collect();
        Ok(Self {
            text: expr.unparse().to_string(),
            expr,
            slots,
        })
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        let vars: Vec<f64> = self.slots.iter().map(|&i| z[i]).collect();
        self.expr.eval(&vars).unwrap_or(f64::NAN)
    }
}

impl ScalarFunction for ScalarExpr {
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_and_generic_variables() {
        let e = ScalarExpr::parse("sin(x)*y + x3^2", &["x", "y", "t"]).unwrap();
        let v = e.eval(&[0.5, 2.0, 3.0]);
        assert!((v - (0.5f64.sin() * 2.0 + 9.0)).abs() < 1e-14);
        let l = ScalarExpr::parse("log(exp(t)) - cos(0)", &["x", "y", "t"]).unwrap();
        assert!((l.eval(&[0.0, 0.0, 1.5]) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn partials_follow_the_coordinates() {
        let e = ScalarExpr::parse("sin(x)*t + t^2", &["x", "y", "t"]).unwrap();
        let dt = e.partial(2).unwrap();
        assert!((dt.eval(&[0.5, 9.0, 3.0]) - (0.5f64.sin() + 6.0)).abs() < 1e-14);
        let dxt = e.partial(0).unwrap().partial(2).unwrap();
        assert!((dxt.eval(&[0.5, 9.0, 3.0]) - 0.5f64.cos()).abs() < 1e-14);
        assert_eq!(e.partial(1).unwrap().eval(&[1.0, 1.0, 1.0]), 0.0);
    }

    #[test]
    fn rejects_unknown_names() {
        assert!(matches!(
            ScalarExpr::parse("z + 1", &["x", "t"]),
            Err(LabError::Parse(_))
        ));
        assert!(ScalarExpr::parse("x +* 1", &["x"]).is_err());
    }
}
