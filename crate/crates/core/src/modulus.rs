//! Moduli of continuity and the Dini integral `int_a^b omega(r)/r dr`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{LabError, Result};

type CustomFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ModulusOfContinuity {
    /// `omega = 0`.
    Zero,
    /// `r^alpha`.
    Power {
        alpha: f64,
    },
    /// `1 / log(e / r)`, continuous but not Dini.
    Log,
    /// Samples `(r_k, omega_k)`, interpolated as a power law between samples.
    Sampled {
        pairs: Vec<(f64, f64)>,
    },
    Custom {
        name: String,
        f: CustomFn,
    },
}

impl fmt::Debug for ModulusOfContinuity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Result of a Dini integral.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum DiniValue {
    Finite(f64),
    Divergent,
}

impl DiniValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            Self::Finite(v) => Some(v),
            Self::Divergent => None,
        }
    }
}

const RHO: f64 = 0.5;
const TAIL_FRACTION: f64 = 0.01;
const CUSTOM_FLOOR: f64 = 1e-12;

impl ModulusOfContinuity {
    pub fn custom(name: &str, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Custom {
            name: name.to_string(),
            f: Arc::new(f),
        }
    }

    /// `zero`, `pow:<alpha>`, `log`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        match spec {
            "zero" | "0" => return Ok(Self::Zero),
            "log" => return Ok(Self::Log),
            "lip" => return Ok(Self::Power { alpha: 1.0 }),
            _ => {}
        }
        if let Some(a) = spec.strip_prefix("pow:") {
            let alpha: f64 = a
                .parse()
                .map_err(|_| LabError::Parse(format!("bad exponent in `{spec}`")))?;
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(LabError::Input(format!("exponent {alpha} outside (0, 1]")));
            }
            return Ok(Self::Power { alpha });
        }
        Err(LabError::Parse(format!("unknown modulus `{spec}`")))
    }

    pub fn label(&self) -> String {
        match self {
            Self::Zero => "zero".into(),
            Self::Power { alpha } => format!("pow:{alpha}"),
            Self::Log => "log".into(),
            Self::Sampled { pairs } => format!("sampled({})", pairs.len()),
            Self::Custom { name, .. } => name.clone(),
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        match self {
            Self::Zero => 0.0,
            Self::Power { alpha } => r.powf(*alpha),
            Self::Log => 1.0 / (1.0 - r.ln()),
            Self::Sampled { pairs } => sampled_eval(pairs, r),
            Self::Custom { f, .. } => f(r),
        }
    }

    /// `int_a^b omega(r)/r dr`.
    pub fn dini_integral(&self, a: f64, b: f64) -> Result<DiniValue> {
        if !(0.0 <= a && a < b) {
            return Err(LabError::Input(format!(
                "need 0 <= a < b, got a = {a}, b = {b}"
            )));
        }
        Ok(match self {
            Self::Zero => DiniValue::Finite(0.0),
            Self::Power { alpha } => DiniValue::Finite((b.powf(*alpha) - a.powf(*alpha)) / alpha),
            Self::Log => {
                if a == 0.0 {
                    DiniValue::Divergent
                } else {
                    DiniValue::Finite((1.0 - a.ln()).ln() - (1.0 - b.ln()).ln())
                }
            }
            Self::Sampled { pairs } => {
                let mut pairs = pairs.clone();
                pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
                geometric_dini(|r| sampled_eval(&pairs, r), a, b, pairs[0].0)
            }
            Self::Custom { f, .. } => geometric_dini(|r| f(r), a, b, CUSTOM_FLOOR * b),
        })
    }
}

fn power_segment(r1: f64, w1: f64, r2: f64, w2: f64) -> f64 {
    // int_{r1}^{r2} w(r)/r dr with w a power law through both samples
    let l = (r2 / r1).ln();
    if w1 <= 0.0 || w2 <= 0.0 {
        return 0.5 * (w1 + w2) * l;
    }
    let p = (w2 / w1).ln() / l;
    if p.abs() < 1e-12 {
        w1 * l
    } else {
        (w2 - w1) / p
    }
}

fn sampled_eval(pairs: &[(f64, f64)], r: f64) -> f64 {
    let k = pairs.partition_point(|p| p.0 < r);
    if k < pairs.len() && pairs[k].0 == r {
        return pairs[k].1;
    }
    let (lo, hi) = if k == 0 {
        (0, 1.min(pairs.len() - 1))
    } else if k >= pairs.len() {
        return pairs[pairs.len() - 1].1;
    } else {
        (k - 1, k)
    };
    let (r1, w1) = pairs[lo];
    let (r2, w2) = pairs[hi];
    if lo == hi || w1 <= 0.0 || w2 <= 0.0 {
        return w1;
    }
    let p = (w2 / w1).ln() / (r2 / r1).ln();
    w1 * (r / r1).powf(p)
}

/// Geometric grid with ratio 1/2 from `b` down to `a` (or to `floor` when
/// `a = 0`, adding a power-law tail).
fn geometric_dini(w: impl Fn(f64) -> f64, a: f64, b: f64, floor: f64) -> DiniValue {
    let stop = if a > 0.0 { a } else { floor.min(b * RHO) };
    let mut total = 0.0;
    let mut hi = b;
    let mut w_hi = w(hi);
    let mut last_p = 0.0;
    while hi > stop {
        let lo = (hi * RHO).max(stop);
        let w_lo = w(lo);
        total += power_segment(lo, w_lo, hi, w_hi);
        if w_lo > 0.0 && w_hi > 0.0 {
            last_p = (w_hi / w_lo).ln() / (hi / lo).ln();
        }
        hi = lo;
        w_hi = w_lo;
    }
    if a > 0.0 {
        return DiniValue::Finite(total);
    }
    if w_hi <= 0.0 {
        return DiniValue::Finite(total);
    }
    if last_p <= 0.0 {
        return DiniValue::Divergent;
    }
    let tail = w_hi / last_p;
    if tail > TAIL_FRACTION * (total + tail) {
        return DiniValue::Divergent;
    }
    DiniValue::Finite(total + tail)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let p = ModulusOfContinuity::Power { alpha: 0.5 };
        assert_eq!(p.dini_integral(0.0, 1.0).unwrap(), DiniValue::Finite(2.0));
        let lip = ModulusOfContinuity::parse("lip").unwrap();
        assert_eq!(lip.dini_integral(0.0, 0.3).unwrap(), DiniValue::Finite(0.3));
        assert_eq!(
            ModulusOfContinuity::Log.dini_integral(0.0, 1.0).unwrap(),
            DiniValue::Divergent
        );
        let part = ModulusOfContinuity::Log
            .dini_integral(1e-3, 1.0)
            .unwrap()
            .finite()
            .unwrap();
        assert!((part - (1.0 + 1e3f64.ln()).ln()).abs() < 1e-14);
        assert!(p.dini_integral(0.5, 0.2).is_err());
    }

    #[test]
    fn sampled_power_matches_closed_form() {
        for alpha in [0.25, 0.5, 1.0] {
            let pairs: Vec<(f64, f64)> = (0..=40)
                .map(|k| {
                    let r = 10f64.powf(-(k as f64) * 0.4);
                    (r, r.powf(alpha))
                })
                .collect();
            let s = ModulusOfContinuity::Sampled { pairs };
            let v = s.dini_integral(0.0, 1.0).unwrap().finite().unwrap();
            assert!((v - 1.0 / alpha).abs() < 0.01 / alpha, "{alpha}: {v}");
        }
    }

    #[test]
    fn custom_log_diverges() {
        let c = ModulusOfContinuity::custom("log", |r| 1.0 / (1.0 - r.ln()));
        assert_eq!(c.dini_integral(0.0, 1.0).unwrap(), DiniValue::Divergent);
        let c = ModulusOfContinuity::custom("sqrt", |r| r.sqrt());
        let v = c.dini_integral(0.0, 1.0).unwrap().finite().unwrap();
        assert!((v - 2.0).abs() < 0.02);
    }
}
