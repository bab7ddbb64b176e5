//! Sampled checks of the flow and chart layer: commutator-of-flows order,
//! chart fidelity near the base point and the quasi-triangle constant.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::Serialize;

use crate::chart::{run_program, ExpChart, LogOptions};
use crate::error::{LabError, Result};
use crate::filtration::Generators;
use crate::flow::{flow, FlowSettings};
use crate::stats::{log_log_slope, log_space};
use crate::word::CommutatorWord;

pub const BRACKET_ORDER_MIN: f64 = 2.8;
pub const JACOBIAN_TOL: f64 = 1e-6;
pub const ROUND_TRIP_TOL: f64 = 1e-8;
/// Discrepancies below this count as round-off.
pub const EXACT_FLOOR: f64 = 1e-13;

pub fn default_amplitudes() -> Vec<f64> {
    log_space(1e-3, 1e-1, 9)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BracketPair {
    pub left: usize,
    pub right: usize,
    pub discrepancy: Vec<f64>,
    /// The discrepancy stays at round-off: the group law closes at step two.
    pub exact: bool,
    /// `None` when `exact`.
    pub slope: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BracketOrderReport {
    pub base_point: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub pairs: Vec<BracketPair>,
    pub min_slope: Option<f64>,
    pub threshold: f64,
    pub pass: bool,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `|exp(-aB) exp(-aA) exp(aB) exp(aA) z - exp(a^2 [A, B]) z|` over `amplitudes`.
pub fn bracket_discrepancy(
    generators: &Generators,
    left: usize,
    right: usize,
    z: &[f64],
    amplitudes: &[f64],
    settings: &FlowSettings,
) -> Result<Vec<f64>> {
    let bracket = generators.word_field(&CommutatorWord::bracket(
        CommutatorWord::leaf(left),
        CommutatorWord::leaf(right),
    ))?;
    amplitudes
        .iter()
        .map(|&a| {
            let program = [(left, a), (right, a), (left, -a), (right, -a)];
            let lhs = run_program(generators, &program, z, settings)?;
            let rhs = flow(&bracket, a * a, z, settings)?;
            Ok(euclid(&lhs, &rhs))
        })
        .collect()
}

/// Order of the commutator-of-flows approximation for every generator pair.
pub fn bracket_flow_order(
    generators: &Generators,
    z: &[f64],
    amplitudes: &[f64],
    settings: &FlowSettings,
) -> Result<BracketOrderReport> {
    let indices: Vec<usize> = generators
        .drift()
        .map(|_| 0)
        .into_iter()
        .chain(1..=generators.num_horizontal())
        .collect();
    let mut pairs = Vec::new();
    for (k, &left) in indices.iter().enumerate() {
        for &right in &indices[k + 1..] {
            let discrepancy =
                bracket_discrepancy(generators, left, right, z, amplitudes, settings)?;
            let exact = discrepancy.iter().all(|d| *d < EXACT_FLOOR);
            let slope = if exact {
                None
            } else {
                log_log_slope(amplitudes, &discrepancy)
            };
            pairs.push(BracketPair {
                left,
                right,
                discrepancy,
                exact,
                slope,
            });
        }
    }
    let min_slope = pairs
        .iter()
        .filter_map(|p| p.slope)
        .reduce(f64::min);
    Ok(BracketOrderReport {
        base_point: z.to_vec(),
        amplitudes: amplitudes.to_vec(),
        pass: pairs
            .iter()
            .all(|p| p.exact || p.slope.is_some_and(|s| s >= BRACKET_ORDER_MIN)),
        min_slope,
        threshold: BRACKET_ORDER_MIN,
        pairs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChartFidelityReport {
    pub base_point: Vec<f64>,
    pub ball_radius: f64,
    pub samples: usize,
    pub jacobian_error: f64,
    pub round_trip: f64,
    /// Newton inverse against `E`, reported separately when a closed `Log` exists.
    pub round_trip_newton: Option<f64>,
    pub pass: bool,
}

/// Uniform point of the Euclidean ball of radius `r` in `R^n`.
fn ball_point(rng: &mut SplitMix64, n: usize, r: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
            return v.into_iter().map(|x| x * r).collect();
        }
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Jacobian of `E` at `h = 0` and the `Log(E(h)) = h` round trip over the ball.
pub fn chart_fidelity(
    chart: &ExpChart,
    ball_radius: f64,
    samples: usize,
    seed: u64,
) -> Result<ChartFidelityReport> {
    let n = chart.dimension();
    let mut rng = SplitMix64::seed_from_u64(seed);
    let hs: Vec<Vec<f64>> = (0..samples)
        .map(|_| ball_point(&mut rng, n, ball_radius))
        .collect();
    let errors: Vec<(f64, Option<f64>)> = hs
        .par_iter()
        .map(|h| {
            let z = chart.e_map(h)?;
            let back = chart.log_map(&z)?;
            let newton = if chart.has_closed_log() {
                Some(max_diff(&chart.log_map_newton(&z, &LogOptions::default())?, h))
            } else {
                None
            };
            Ok((max_diff(&back, h), newton))
        })
        .collect::<Result<_>>()?;
    let round_trip = errors.iter().fold(0.0f64, |m, e| m.max(e.0));
    let round_trip_newton = chart
        .has_closed_log()
        .then(|| errors.iter().filter_map(|e| e.1).fold(0.0, f64::max));
    let jacobian_error = chart.jacobian_identity_error()?;
    Ok(ChartFidelityReport {
        base_point: chart.base_point().to_vec(),
        ball_radius,
        samples,
        pass: jacobian_error < JACOBIAN_TOL
            && round_trip < ROUND_TRIP_TOL
            && round_trip_newton.is_none_or(|e| e < ROUND_TRIP_TOL),
        jacobian_error,
        round_trip,
        round_trip_newton,
    })
}

/// `d(a, b)`, read in the chart rebased at `a`.
pub fn distance(chart: &ExpChart, a: &[f64], b: &[f64]) -> Result<f64> {
    chart.rebased(a).quasi_distance(b)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuasiMetricReport {
    pub neighborhood: f64,
    pub triples: usize,
    /// `max d(a, c) / (d(a, b) + d(b, c))`.
    pub triangle_constant: f64,
    /// `max d(a, b) / d(b, a)` over both orders.
    pub symmetry_constant: f64,
}

/// Triples `E(z, h)` with gauge `|h| <= neighborhood` around the chart base.
pub fn quasi_metric_constants(
    chart: &ExpChart,
    neighborhood: f64,
    triples: usize,
    seed: u64,
) -> Result<QuasiMetricReport> {
    if triples == 0 {
        return Err(LabError::Input("need at least one triple".into()));
    }
    let n = chart.dimension();
    let mut rng = SplitMix64::seed_from_u64(seed);
    let point = |rng: &mut SplitMix64| {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = chart.gauge(&v);
        let scale = neighborhood * rng.random_range(0.0..1.0f64) / g;
        chart.dilate_coords(scale, &v)
    };
    let hs: Vec<[Vec<f64>; 3]> = (0..triples)
        .map(|_| [point(&mut rng), point(&mut rng), point(&mut rng)])
        .collect();
    let ratios: Vec<(f64, f64)> = hs
        .par_iter()
        .map(|t| {
            let [a, b, c] = [&t[0], &t[1], &t[2]].map(|h| chart.e_map(h));
            let (a, b, c) = (a?, b?, c?);
            let ab = distance(chart, &a, &b)?;
            let bc = distance(chart, &b, &c)?;
            let ac = distance(chart, &a, &c)?;
            let ba = distance(chart, &b, &a)?;
            let tri = if ab + bc > 0.0 { ac / (ab + bc) } else { 0.0 };
            let sym = if ab > 0.0 && ba > 0.0 {
                (ab / ba).max(ba / ab)
            } else {
                1.0
            };
            Ok((tri, sym))
        })
        .collect::<Result<_>>()?;
    Ok(QuasiMetricReport {
        neighborhood,
        triples,
        triangle_constant: ratios.iter().fold(0.0f64, |m, r| m.max(r.0)),
        symmetry_constant: ratios.iter().fold(1.0f64, |m, r| m.max(r.1)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelOperator;

    #[test]
    fn commuting_heat_fields_are_exact() {
        let m = ModelOperator::by_name("heat").unwrap();
        let r = bracket_flow_order(m.generators(), &m.origin(), &default_amplitudes(), &FlowSettings::default())
            .unwrap();
        assert!(r.pairs.iter().all(|p| p.exact && p.discrepancy.iter().all(|d| *d == 0.0)));
        assert!(r.pass);
    }

    #[test]
    fn heat1_distance_closed_form() {
        let m = ModelOperator::by_name("heat1").unwrap();
        let chart = m.chart_at(&m.origin()).unwrap();
        let d = distance(&chart, &[0.0, 0.0], &[0.1, 0.04]).unwrap();
        assert!((d - 0.3).abs() < 1e-12, "{d}");
        assert_eq!(distance(&chart, &[0.1, 0.04], &[0.1, 0.04]).unwrap(), 0.0);
    }
}
