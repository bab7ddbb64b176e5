//! Second-order anisotropic Taylor polynomial, remainder-order fits and the
//! half-order drift condition.

use rand::Rng;
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::Serialize;

use crate::chart::ExpChart;
use crate::error::{LabError, Result};
use crate::expr::ScalarExpr;
use crate::field::{ScalarFunction, VectorField};
use crate::filtration::Generators;
use crate::flow::{flow, FlowSettings};
use crate::polynomial::Polynomial;
use crate::stats::{linear_fit, log_space};
use crate::word::CommutatorWord;

/// Step of the flow-aligned central differences used for jets.
pub const JET_STEP: f64 = 1e-4;
pub const NOISE_FLOOR: f64 = 1e-12;

/// `u, X_i u, X_i X_j u, X_0 u` at a base point (`i, j = 1..m`, zero-based
/// storage).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JetData {
    pub base_point: Vec<f64>,
    pub u: f64,
    pub first: Vec<f64>,
    pub second: Vec<Vec<f64>>,
    pub drift: f64,
}

impl JetData {
    pub fn is_finite(&self) -> bool {
        self.u.is_finite()
            && self.drift.is_finite()
            && self.first.iter().all(|v| v.is_finite())
            && self.second.iter().flatten().all(|v| v.is_finite())
    }

    /// `[X_i, X_j] u` from the jet.
    pub fn bracket(&self, i: usize, j: usize) -> f64 {
        self.second[i - 1][j - 1] - self.second[j - 1][i - 1]
    }
}

/// Derivative of `u` along the flow of `field` at `z`.
pub fn flow_derivative(
    field: &crate::field::VectorField,
    u: &dyn Fn(&[f64]) -> Result<f64>,
    z: &[f64],
    step: f64,
    settings: &FlowSettings,
) -> Result<f64> {
    let p = flow(field, step, z, settings)?;
    let m = flow(field, -step, z, settings)?;
    Ok((u(&p)? - u(&m)?) / (2.0 * step))
}

fn finite(v: f64, z: &[f64]) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LabError::Numeric(format!("function not finite near {z:?}")))
    }
}

/// Jet by nested central differences along flows with step `step`.
pub fn jet_by_flows(
    generators: &Generators,
    u: &dyn ScalarFunction,
    z: &[f64],
    step: f64,
    settings: &FlowSettings,
) -> Result<JetData> {
    let m = generators.num_horizontal();
    let base = |p: &[f64]| finite(u.value(p), p);
    let first_at = |i: usize, p: &[f64]| {
        flow_derivative(&generators.horizontal()[i], &base, p, step, settings)
    };
    let mut first = Vec::with_capacity(m);
    let mut second = vec![vec![0.0; m]; m];
    for i in 0..m {
        first.push(first_at(i, z)?);
    }
    for i in 0..m {
        for j in 0..m {
            let inner = |p: &[f64]| first_at(j, p);
            second[i][j] = flow_derivative(&generators.horizontal()[i], &inner, z, step, settings)?;
        }
    }
    let drift = match generators.drift() {
        Some(x0) => flow_derivative(x0, &base, z, step, settings)?,
        None => 0.0,
    };
    Ok(JetData {
        base_point: z.to_vec(),
        u: base(z)?,
        first,
        second,
        drift,
    })
}

/// Exact jet of a polynomial.
pub fn jet_of_polynomial(generators: &Generators, u: &Polynomial, z: &[f64]) -> JetData {
    let m = generators.num_horizontal();
    let xs = generators.horizontal();
    let first_polys: Vec<Polynomial> = xs.iter().map(|x| x.apply_poly(u)).collect();
    let first = first_polys.iter().map(|p| p.eval(z)).collect();
    let second = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| xs[i].apply_poly(&first_polys[j]).eval(z))
                .collect()
        })
        .collect();
    let drift = generators
        .drift()
        .map_or(0.0, |x0| x0.apply_poly(u).eval(z));
    JetData {
        base_point: z.to_vec(),
        u: u.eval(z),
        first,
        second,
        drift,
    }
}

/// Exact jet of a text expression from its symbolic gradient and Hessian:
/// `X_i X_j u = a_i . D^2u . a_j + (D a_j . a_i) . Du`.
pub fn jet_of_expression(generators: &Generators, u: &ScalarExpr, z: &[f64]) -> Result<JetData> {
    let n = generators.dimension();
    if z.len() != n {
        return Err(LabError::DimensionMismatch {
            expected: n,
            actual: z.len(),
        });
    }
    let partials = (0..n).map(|k| u.partial(k)).collect::<Result<Vec<_>>>()?;
    let grad: Vec<f64> = partials.iter().map(|p| p.eval(z)).collect();
    let mut hess = vec![vec![0.0; n]; n];
    for (k, p) in partials.iter().enumerate() {
        for (l, h) in hess[k].iter_mut().enumerate() {
            *h = p.partial(l)?.eval(z);
        }
    }
    let along = |x: &VectorField| -> f64 {
        x.eval(z).iter().zip(&grad).map(|(a, g)| a * g).sum()
    };
    let xs = generators.horizontal();
    let m = xs.len();
    let a: Vec<Vec<f64>> = xs.iter().map(|x| x.eval(z)).collect();
    let mut second = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            let mut v = 0.0;
            for k in 0..n {
                for l in 0..n {
                    v += a[i][k] * a[j][l] * hess[k][l];
                    v += a[i][k] * xs[j].coefficients()[l].partial(k).eval(z) * grad[l];
                }
            }
            second[i][j] = v;
        }
    }
    let jet = JetData {
        base_point: z.to_vec(),
        u: u.eval(z),
        first: xs.iter().map(along).collect(),
        second,
        drift: generators.drift().map_or(0.0, along),
    };
    if !jet.is_finite() {
        return Err(LabError::Numeric(format!("jet of `{}` not finite at {z:?}", u.text())));
    }
    Ok(jet)
}

/// `max |u(zeta) - T(zeta)|` over `points` sampled `zeta = E(z, h)`,
/// `h` uniform in `[-extent, extent]^n`.
pub fn sampled_taylor_residual(
    u: &dyn ScalarFunction,
    jet: &JetData,
    chart: &ExpChart,
    points: usize,
    extent: f64,
    seed: u64,
    convention: TaylorConvention,
) -> Result<f64> {
    let n = chart.dimension();
    let mut rng = SplitMix64::seed_from_u64(seed);
    let hs: Vec<Vec<f64>> = (0..points)
        .map(|_| (0..n).map(|_| rng.random_range(-extent..extent)).collect())
        .collect();
    let worst = hs
        .par_iter()
        .map(|h| {
            let zeta = chart.e_map(h)?;
            Ok((u.value(&zeta) - taylor_eval_coords(jet, chart, h, convention)).abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(worst.into_iter().fold(0.0, f64::max))
}

/// How the mixed second-order terms are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TaylorConvention {
    /// Symmetric mixed terms plus `-1/2 h_i h_j [X_i, X_j] u` for `i` before
    /// `j` in the basis, matching the composition order of the chart.
    #[default]
    ChartOrdered,
    /// Symmetric mixed terms only.
    Verbatim,
}

/// `T(h)` in chart coordinates.
pub fn taylor_eval_coords(
    jet: &JetData,
    chart: &ExpChart,
    h: &[f64],
    convention: TaylorConvention,
) -> f64 {
    let basis = chart.basis();
    let m = jet.first.len();
    let pos: Vec<Option<usize>> = (1..=m).map(|i| basis.generator_position(i)).collect();
    let coord = |i: usize| pos[i].map_or(0.0, |k| h[k]);
    let mut t = jet.u;
    for (k, e) in basis.entries.iter().enumerate() {
        match (&e.word, e.degree) {
            (CommutatorWord::Leaf(0), 2) => t += h[k] * jet.drift,
            (CommutatorWord::Leaf(i), 1) => t += h[k] * jet.first[i - 1],
            (CommutatorWord::Bracket(a, b), 2) => {
                if let (CommutatorWord::Leaf(i), CommutatorWord::Leaf(j)) = (&**a, &**b) {
                    t += h[k] * jet.bracket(*i, *j);
                }
            }
            _ => {}
        }
    }
    for i in 0..m {
        for j in 0..m {
            t += 0.5 * coord(i) * coord(j) * jet.second[i][j];
        }
    }
    if convention == TaylorConvention::ChartOrdered {
        for i in 0..m {
            for j in 0..m {
                if let (Some(pi), Some(pj)) = (pos[i], pos[j]) {
                    if pi < pj {
                        t -= 0.5 * h[pi] * h[pj] * jet.bracket(i + 1, j + 1);
                    }
                }
            }
        }
    }
    t
}

pub fn taylor_eval(
    jet: &JetData,
    chart: &ExpChart,
    zeta: &[f64],
    convention: TaylorConvention,
) -> Result<f64> {
    let h = chart.log_map(zeta)?;
    Ok(taylor_eval_coords(jet, chart, &h, convention))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RemainderRow {
    pub radius: f64,
    pub direction: usize,
    pub remainder: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RemainderReport {
    pub radii: Vec<f64>,
    pub max_remainder: Vec<f64>,
    /// `None` when every remainder sits at the noise floor.
    pub slope: Option<f64>,
    pub exact: bool,
    pub rows: Vec<RemainderRow>,
}

/// `2n` signed coordinate directions plus `n` random ones, each normalized to
/// unit gauge.
pub fn sample_directions(chart: &ExpChart, seed: u64) -> Vec<Vec<f64>> {
    let n = chart.dimension();
    let mut dirs = Vec::with_capacity(3 * n);
    for k in 0..n {
        for sign in [1.0, -1.0] {
            let mut v = vec![0.0; n];
            v[k] = sign;
            dirs.push(v);
        }
    }
    let mut rng = SplitMix64::seed_from_u64(seed);
    for _ in 0..n {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = chart.gauge(&v);
        dirs.push(chart.dilate_coords(1.0 / g, &v));
    }
    dirs
}

pub fn default_radii() -> Vec<f64> {
    log_space(1e-3, 1e-1, 9)
}

pub fn remainder_order(
    u: &dyn ScalarFunction,
    chart: &ExpChart,
    radii: &[f64],
    seed: u64,
    convention: TaylorConvention,
) -> Result<RemainderReport> {
    let z = chart.base_point().to_vec();
    let jet = jet_by_flows(chart.generators(), u, &z, JET_STEP, chart.settings())?;
    remainder_order_with_jet(u, &jet, chart, radii, seed, convention)
}

pub fn remainder_order_with_jet(
    u: &dyn ScalarFunction,
    jet: &JetData,
    chart: &ExpChart,
    radii: &[f64],
    seed: u64,
    convention: TaylorConvention,
) -> Result<RemainderReport> {
    let dirs = sample_directions(chart, seed);
    let tasks: Vec<(f64, usize)> = radii
        .iter()
        .flat_map(|&r| (0..dirs.len()).map(move |d| (r, d)))
        .collect();
    let rows = tasks
        .par_iter()
        .map(|&(r, d)| {
            let h = chart.dilate_coords(r, &dirs[d]);
            let zeta = chart.e_map_unchecked(&h)?;
            let t = taylor_eval_coords(jet, chart, &h, convention);
            let v = finite(u.value(&zeta), &zeta)?;
            Ok(RemainderRow {
                radius: r,
                direction: d,
                remainder: (v - t).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_remainder: Vec<f64> = radii
        .iter()
        .map(|&r| {
            rows.iter()
                .filter(|row| row.radius == r)
                .map(|row| row.remainder)
                .fold(0.0, f64::max)
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = radii
        .iter()
        .zip(&max_remainder)
        .filter(|(_, m)| **m > NOISE_FLOOR)
        .map(|(r, m)| (r.ln(), m.ln()))
        .unzip();
    let slope = if xs.len() >= 2 {
        Some(linear_fit(&xs, &ys).slope)
    } else {
        None
    };
    Ok(RemainderReport {
        radii: radii.to_vec(),
        max_remainder,
        exact: slope.is_none(),
        slope,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct C2lReport {
    pub steps: Vec<f64>,
    /// Sup over samples and generators of the quotient, per step.
    pub sup_quotient: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

pub const C2L_TOL: f64 = 1e-2;

/// `sup_K max_i |X_i u(exp(s X_0) z) - X_i u(z)| / |s|^{1/2}` over a decreasing
/// grid of `s` (both signs).
pub fn c2l_mixed_check(
    u: &dyn ScalarFunction,
    generators: &Generators,
    samples: &[Vec<f64>],
    steps: &[f64],
    settings: &FlowSettings,
) -> Result<C2lReport> {
    let x0 = generators
        .drift()
        .ok_or_else(|| LabError::Input("half-order check needs a drift field".into()))?;
    let base = |p: &[f64]| finite(u.value(p), p);
    let xi_u = |i: usize, p: &[f64]| {
        flow_derivative(&generators.horizontal()[i], &base, p, JET_STEP, settings)
    };
    let m = generators.num_horizontal();
    let mut sup_quotient = Vec::with_capacity(steps.len());
    for &s in steps {
        let per_sample = samples
            .par_iter()
            .map(|z| {
                let mut q: f64 = 0.0;
                for sign in [1.0, -1.0] {
                    let moved = flow(x0, sign * s, z, settings)?;
                    for i in 0..m {
                        let d = (xi_u(i, &moved)? - xi_u(i, z)?).abs();
                        q = q.max(d / s.abs().sqrt());
                    }
                }
                Ok(q)
            })
            .collect::<Result<Vec<f64>>>()?;
        sup_quotient.push(per_sample.into_iter().fold(0.0, f64::max));
    }
    let last = sup_quotient.last().copied().unwrap_or(f64::INFINITY);
    let pass = last < C2L_TOL;
    Ok(C2lReport {
        steps: steps.to_vec(),
        sup_quotient,
        tolerance: C2L_TOL,
        pass,
    })
}
