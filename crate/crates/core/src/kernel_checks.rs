//! Checks on fundamental solutions: validation oracles, power bounds in
//! `d_L`, annulus estimates, the representation formula and the boundedness
//! of second derivatives of cut-off potentials.

use std::collections::BTreeMap;

use gauss_quad::{GaussHermite, GaussLegendre};
use rand::Rng;
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::Serialize;

use crate::chart::ExpChart;
use crate::cutoff::{Cutoff, SmoothGauge};
use crate::diff::{d1, d2};
use crate::error::{LabError, Result};
use crate::field::{ScalarFunction, VectorField};
use crate::models::{Kernel, ModelOperator};
use crate::stats::spread;

fn kernel_of(model: &ModelOperator) -> Result<Kernel> {
    model
        .kernel
        .ok_or_else(|| LabError::Input(format!("model `{}` has no fundamental solution", model.name)))
}

/// Direction in chart coordinates with unit gauge, spread evenly in the
/// homogeneous coordinates `sign(h_i) |h_i|^{1/deg_i}`; with `future` the
/// drift coordinate is positive (`Gamma(z, pole)` is supported there).
pub fn random_direction(chart: &ExpChart, rng: &mut SplitMix64, future: bool) -> Vec<f64> {
    let degrees = chart.degrees();
    let drift = chart.basis().drift_position();
    let mut v: Vec<f64> = degrees
        .iter()
        .map(|&d| {
            let u: f64 = rng.random_range(-1.0..1.0);
            u.signum() * u.abs().powi(d as i32)
        })
        .collect();
    if future {
        if let Some(k) = drift {
            v[k] = v[k].abs().max(1e-3);
        }
    }
    let g = chart.gauge(&v);
    chart.dilate_coords(1.0 / g, &v)
}

fn step_for(d: f64, degree: u32) -> f64 {
    1e-3 * d.powi(degree as i32)
}

/// Parabolic length scale of `Gamma(., pole)` at `z`: `min(d, sqrt(s))`.
fn kernel_scale(kernel: Kernel, z: &[f64], pole: &[f64], d: f64) -> f64 {
    let s = z[kernel.time_index()] - pole[kernel.time_index()];
    if s > 0.0 {
        d.min(s.sqrt())
    } else {
        d
    }
}

/// Horizontal generators and the drift with their degrees.
fn operator_fields(model: &ModelOperator) -> (Vec<&VectorField>, Option<&VectorField>) {
    let g = model.generators();
    (g.horizontal().iter().collect(), g.drift())
}

/// `L_z f = sum a_ij X_i X_j f - X_0 f` at `z` by differences along flows,
/// with the size of the individual terms for relative comparisons.
fn apply_operator(
    model: &ModelOperator,
    f: &dyn Fn(&[f64]) -> f64,
    z: &[f64],
    scale: f64,
) -> Result<(f64, f64)> {
    let (xs, x0) = operator_fields(model);
    let settings = Default::default();
    let a = &model.coefficients;
    let mut value = 0.0;
    let mut size = 0.0;
    for i in 0..xs.len() {
        for j in 0..xs.len() {
            if a[(i, j)] == 0.0 {
                continue;
            }
            let v = a[(i, j)]
                * d2(xs[i], xs[j], f, z, step_for(scale, 1), step_for(scale, 1), &settings)?;
            value += v;
            size += v.abs();
        }
    }
    if let Some(x0) = x0 {
        let v = d1(x0, f, z, step_for(scale, 2), &settings)?;
        value -= v;
        size += v.abs();
    }
    Ok((value, size))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualReport {
    pub samples: usize,
    pub max_relative_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub const RESIDUAL_TOL: f64 = 1e-4;

/// Oracle (i): `L_z Gamma(z, zeta) = 0` away from the pole, at `samples`
/// points with `d_L(zeta, z)` in `[0.1, 0.5]` where `Gamma d^{q-2} > 1e-8`
/// (below that the kernel underflows and differences are meaningless).
pub fn gamma_residual_oracle(model: &ModelOperator, samples: usize, seed: u64) -> Result<ResidualReport> {
    let kernel = kernel_of(model)?;
    let mut rng = SplitMix64::seed_from_u64(seed);
    let chart0 = model.chart_at(&model.origin())?;
    let q = chart0.homogeneous_dimension() as i32;
    let n = model.dimension();
    let mut tasks: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::with_capacity(samples);
    let mut attempts = 0;
    while tasks.len() < samples {
        attempts += 1;
        if attempts > 1000 * samples {
            return Err(LabError::Numeric("no resolvable kernel samples".into()));
        }
        let pole: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let d = rng.random_range(0.1..0.5);
        let v = random_direction(&chart0, &mut rng, true);
        let z = chart0.rebased(&pole).e_map_unchecked(&chart0.dilate_coords(d, &v))?;
        if kernel.eval(&z, &pole) * d.powi(q - 2) > 1e-8 {
            tasks.push((pole, z, d));
        }
    }
    let worst = tasks
        .par_iter()
        .map(|(pole, z, d)| {
            let f = |p: &[f64]| kernel.eval(p, pole);
            let (value, size) = apply_operator(model, &f, z, 0.1 * kernel_scale(kernel, z, pole, *d))?;
            Ok(if size > 0.0 { value.abs() / size } else { 0.0 })
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(ResidualReport {
        samples,
        max_relative_residual: worst,
        tolerance: RESIDUAL_TOL,
        pass: worst < RESIDUAL_TOL,
    })
}

/// Test function `psi = exp(-|x|^2) (1 - t^2)^4` and `phi = -L psi`.
fn bump(kernel: Kernel, p: &[f64]) -> (f64, f64) {
    let ti = kernel.time_index();
    let t = p[ti];
    if t.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let r2: f64 = p[..ti].iter().map(|v| v * v).sum();
    let g = (-r2).exp();
    let b = (1.0 - t * t).powi(4);
    let db = -8.0 * t * (1.0 - t * t).powi(3);
    let psi = g * b;
    let l_psi = match kernel {
        // psi_xx - x psi_y - psi_t
        Kernel::Kolmogorov => (4.0 * p[0] * p[0] - 2.0 + 2.0 * p[0] * p[1]) * psi - g * db,
        Kernel::Heat { spatial } => {
            (4.0 * r2 - 2.0 * spatial as f64) * psi - g * db
        }
    };
    (psi, -l_psi)
}

/// `int Gamma(z, zeta) f(zeta) dzeta` as `int_0^S E[f(zeta(z, s, w))] ds`
/// with Gauss-Legendre in `s` and Gauss-Hermite in the noise.
pub fn kernel_potential(
    kernel: Kernel,
    f: &dyn Fn(&[f64]) -> f64,
    z: &[f64],
    horizon: f64,
    legendre: &GaussLegendre,
    hermite: &GaussHermite,
) -> f64 {
    let k = kernel.noise_dimension();
    let nodes: Vec<(f64, f64)> = hermite
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (x * 2f64.sqrt(), w / std::f64::consts::PI.sqrt()))
        .collect();
    let total = nodes.len().pow(k as u32);
    let mut noise = vec![0.0; k];
    legendre.integrate(0.0, horizon, |s| {
        if s <= 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for idx in 0..total {
            let mut rest = idx;
            let mut weight = 1.0;
            for slot in noise.iter_mut() {
                let (x, w) = nodes[rest % nodes.len()];
                rest /= nodes.len();
                *slot = x;
                weight *= w;
            }
            acc += weight * f(&kernel.backward_point(z, s, &noise));
        }
        acc
    })
}

fn quadrature(legendre: usize, hermite: usize) -> Result<(GaussLegendre, GaussHermite)> {
    let l = GaussLegendre::new(legendre).map_err(|e| LabError::Input(e.to_string()))?;
    let h = GaussHermite::new(hermite).map_err(|e| LabError::Input(e.to_string()))?;
    Ok((l, h))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvolutionReport {
    pub probes: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub const CONVOLUTION_TOL: f64 = 0.01;

/// Oracle (ii): `u = int Gamma phi` reproduces `psi` when `phi = -L psi`.
pub fn convolution_oracle(model: &ModelOperator, probes: usize, seed: u64) -> Result<ConvolutionReport> {
    let kernel = kernel_of(model)?;
    let (legendre, hermite) = quadrature(48, 20)?;
    let mut rng = SplitMix64::seed_from_u64(seed);
    let n = model.dimension();
    let points: Vec<Vec<f64>> = (0..probes)
        .map(|_| (0..n).map(|_| rng.random_range(-0.5..0.5)).collect())
        .collect();
    let phi = |p: &[f64]| bump(kernel, p).1;
    let worst = points
        .par_iter()
        .map(|z| {
            let horizon = z[kernel.time_index()] + 1.0;
            let u = kernel_potential(kernel, &phi, z, horizon, &legendre, &hermite);
            let psi = bump(kernel, z).0;
            (u - psi).abs() / psi.abs().max(1e-12)
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .fold(0.0, f64::max);
    Ok(ConvolutionReport {
        probes,
        max_relative_error: worst,
        tolerance: CONVOLUTION_TOL,
        pass: worst < CONVOLUTION_TOL,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundFamily {
    pub name: String,
    /// Power of `d_L` multiplying the quantity.
    pub exponent: i32,
    pub sup_small: f64,
    pub sup_large: f64,
    pub relative_change: f64,
    pub finite: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GammaBoundReport {
    pub model: String,
    pub homogeneous_dimension: u32,
    pub samples_small: usize,
    pub samples_large: usize,
    pub families: Vec<BoundFamily>,
    pub stability_tol: f64,
    pub pass: bool,
}

pub const STABILITY_TOL: f64 = 0.2;
const REFINE_STEPS: usize = 200;
const REFINE_STARTS: usize = 6;

/// Sampled sups of `Gamma d^{q-2}`, `|X_j Gamma| d^{q-1}`,
/// `|X_i X_j Gamma| d^q` and `|X_0 Gamma| d^q` over pairs with
/// `d_L in [1e-2, 1]`, at `samples` and `4 samples` pairs.
pub fn gamma_bound_check(model: &ModelOperator, samples: usize, seed: u64) -> Result<GammaBoundReport> {
    let kernel = kernel_of(model)?;
    let chart0 = model.chart_at(&model.origin())?;
    let q = chart0.homogeneous_dimension() as i32;
    let n = model.dimension();
    let (xs, x0) = operator_fields(model);
    let m = xs.len();
    let settings = Default::default();

    let mut names = vec![("gamma".to_string(), q - 2)];
    for j in 0..m {
        names.push((format!("X{}_gamma", j + 1), q - 1));
    }
    for i in 0..m {
        for j in 0..m {
            names.push((format!("X{}X{}_gamma", i + 1, j + 1), q));
        }
    }
    if x0.is_some() {
        names.push(("X0_gamma".to_string(), q));
    }

    let evaluate = |pole: &[f64], h: &[f64], d: f64| -> Result<Vec<f64>> {
        let z = chart0.rebased(pole).e_map_unchecked(h)?;
        let f = |p: &[f64]| kernel.eval(p, pole);
        let l = kernel_scale(kernel, &z, pole, d);
        let mut row = vec![f(&z) * d.powi(q - 2)];
        for x in &xs {
            row.push(d1(x, &f, &z, step_for(l, 1), &settings)?.abs() * d.powi(q - 1));
        }
        for xi in &xs {
            for xj in &xs {
                let v = d2(xi, xj, &f, &z, step_for(l, 1), step_for(l, 1), &settings)?;
                row.push(v.abs() * d.powi(q));
            }
        }
        if let Some(x0) = x0 {
            row.push(d1(x0, &f, &z, step_for(l, 2), &settings)?.abs() * d.powi(q));
        }
        Ok(row)
    };
    // random sampling followed by a shrinking local search around the best
    // sample of each family (direction only, gauge held fixed)
    let sample_sups = |count: usize, seed: u64| -> Result<Vec<f64>> {
        let mut rng = SplitMix64::seed_from_u64(seed);
        let tasks: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..count)
            .map(|_| {
                let pole: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
                let d = (rng.random_range(1e-2f64.ln()..0.0)).exp();
                let v = random_direction(&chart0, &mut rng, false);
                (pole, chart0.dilate_coords(d, &v), d)
            })
            .collect();
        let rows = tasks
            .par_iter()
            .map(|(pole, h, d)| evaluate(pole, h, *d))
            .collect::<Result<Vec<Vec<f64>>>>()?;
        (0..names.len())
            .into_par_iter()
            .map(|k| {
                let mut order: Vec<usize> = (0..rows.len()).collect();
                order.sort_by(|&a, &b| rows[b][k].total_cmp(&rows[a][k]));
                let mut sup: f64 = 0.0;
                for (start, &best) in order.iter().take(REFINE_STARTS).enumerate() {
                    let mut rng = SplitMix64::seed_from_u64(seed ^ ((k * REFINE_STARTS + start) as u64 + 1));
                    let (pole, h, d) = &tasks[best];
                    let mut v = chart0.dilate_coords(1.0 / d, h);
                    let mut value = rows[best][k];
                    let mut radius = 0.1;
                    for _ in 0..REFINE_STEPS {
                        let trial: Vec<f64> = v
                            .iter()
                            .map(|c| c + radius * rng.random_range(-1.0..1.0) * c.abs().max(1e-3))
                            .collect();
                        let g = chart0.gauge(&trial);
                        let trial = chart0.dilate_coords(1.0 / g, &trial);
                        let t = evaluate(pole, &chart0.dilate_coords(*d, &trial), *d)?[k];
                        if t > value {
                            value = t;
                            v = trial;
                        } else {
                            radius = (radius * 0.95).max(1e-4);
                        }
                    }
                    sup = sup.max(value);
                }
                Ok(sup)
            })
            .collect()
    };
    let small = sample_sups(samples, seed)?;
    let large = sample_sups(4 * samples, seed.wrapping_add(1))?;
    let families: Vec<BoundFamily> = names
        .into_iter()
        .zip(small.iter().zip(&large))
        .map(|((name, exponent), (&a, &b))| BoundFamily {
            name,
            exponent,
            sup_small: a,
            sup_large: b,
            relative_change: (b - a).abs() / b.max(f64::MIN_POSITIVE),
            finite: a.is_finite() && b.is_finite(),
        })
        .collect();
    let pass = families
        .iter()
        .all(|f| f.finite && f.relative_change <= STABILITY_TOL);
    Ok(GammaBoundReport {
        model: model.name.clone(),
        homogeneous_dimension: q as u32,
        samples_small: samples,
        samples_large: 4 * samples,
        families,
        stability_tol: STABILITY_TOL,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnnulusRow {
    pub radius: f64,
    /// `sup |X_i Gamma| R^{q-2+deg i}`, keyed by field name.
    pub gamma_derivatives: BTreeMap<String, f64>,
    /// `sup |Y_k eta_R| R^{deg k}`, keyed by basis word.
    pub cutoff_first: BTreeMap<String, f64>,
    /// `sup sum_j |X_j X_j eta_R| R^2`.
    pub cutoff_second: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnnulusReport {
    pub model: String,
    pub rows: Vec<AnnulusRow>,
    /// Largest max/min ratio across radii over all reported quantities.
    pub max_spread: f64,
    pub pass: bool,
}

/// Random points of gauge in `[lo, hi]` (relative), deterministic in `seed`.
fn shell_points(chart: &ExpChart, count: usize, lo: f64, hi: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v = random_direction(chart, &mut rng, false);
            chart.dilate_coords(rng.random_range(lo..hi), &v)
        })
        .collect()
}

/// Remark on annuli: `sup_{z in H_{R/2}, zeta in H_R \ H_{3R/4}} |X_i Gamma| R^{q-2+deg i}`
/// and the cut-off bounds, for each radius.
pub fn annulus_estimates(model: &ModelOperator, radii: &[f64], seed: u64) -> Result<AnnulusReport> {
    let kernel = kernel_of(model)?;
    let chart0 = model.chart_at(&model.origin())?;
    let q = chart0.homogeneous_dimension() as i32;
    let (xs, x0) = operator_fields(model);
    let settings = Default::default();
    let inner = shell_points(&chart0, 24, 0.0, 0.5, seed);
    let outer = shell_points(&chart0, 160, 0.75, 1.0, seed.wrapping_add(1));
    let smooth = SmoothGauge::new(&chart0.degrees());
    // cut-off probes: gauge of the smooth profile inside its transition band
    let band: Vec<Vec<f64>> = shell_points(&chart0, 400, 0.5, 1.0, seed.wrapping_add(2))
        .into_iter()
        .filter(|h| (0.75..1.0).contains(&smooth.eval(h)))
        .collect();

    let mut fields: Vec<(String, &VectorField, u32)> = xs
        .iter()
        .enumerate()
        .map(|(j, x)| (format!("X{}", j + 1), *x, 1))
        .collect();
    if let Some(x0) = x0 {
        fields.push(("X0".to_string(), x0, 2));
    }

    let mut rows = Vec::new();
    for &r in radii {
        let pairs: Vec<(usize, usize)> = (0..inner.len())
            .flat_map(|a| (0..outer.len()).map(move |b| (a, b)))
            .collect();
        let values = pairs
            .par_iter()
            .map(|&(a, b)| {
                let z = chart0.e_map_unchecked(&chart0.dilate_coords(r, &inner[a]))?;
                let zeta = chart0.e_map_unchecked(&chart0.dilate_coords(r, &outer[b]))?;
                let f = |p: &[f64]| kernel.eval(p, &zeta);
                fields
                    .iter()
                    .map(|(_, x, deg)| {
                        Ok(d1(x, &f, &z, step_for(r, *deg), &settings)?.abs()
                            * r.powi(q - 2 + *deg as i32))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let mut gamma_derivatives = BTreeMap::new();
        for (k, (name, _, _)) in fields.iter().enumerate() {
            let sup = values.iter().map(|v| v[k]).fold(0.0, f64::max);
            gamma_derivatives.insert(name.clone(), sup);
        }

        let cutoff = Cutoff::new(chart0.clone(), r);
        let entries = chart0.basis().entries.clone();
        let per_point = band
            .par_iter()
            .map(|h1| {
                let h = chart0.dilate_coords(r, h1);
                let firsts = entries
                    .iter()
                    .map(|e| Ok(cutoff.field_derivatives(&e.field, e.degree, &h)?.0.abs()))
                    .collect::<Result<Vec<f64>>>()?;
                let mut second = 0.0;
                for x in &xs {
                    second += cutoff.field_derivatives(x, 1, &h)?.1.abs();
                }
                Ok((firsts, second))
            })
            .collect::<Result<Vec<(Vec<f64>, f64)>>>()?;
        let mut cutoff_first = BTreeMap::new();
        for (k, e) in entries.iter().enumerate() {
            let sup = per_point.iter().map(|p| p.0[k]).fold(0.0, f64::max);
            cutoff_first.insert(e.word.to_string(), sup * r.powi(e.degree as i32));
        }
        let cutoff_second = per_point.iter().map(|p| p.1).fold(0.0, f64::max) * r * r;
        rows.push(AnnulusRow {
            radius: r,
            gamma_derivatives,
            cutoff_first,
            cutoff_second,
        });
    }
    let mut series: Vec<Vec<f64>> = Vec::new();
    for key in rows[0].gamma_derivatives.keys() {
        series.push(rows.iter().map(|r| r.gamma_derivatives[key]).collect());
    }
    for key in rows[0].cutoff_first.keys() {
        series.push(rows.iter().map(|r| r.cutoff_first[key]).collect());
    }
    series.push(rows.iter().map(|r| r.cutoff_second).collect());
    let max_spread = series
        .iter()
        .filter(|s| s.iter().all(|v| *v > 0.0))
        .map(|s| spread(s))
        .fold(1.0, f64::max);
    Ok(AnnulusReport {
        model: model.name.clone(),
        rows,
        max_spread,
        pass: max_spread < 2.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RepresentationProbe {
    pub point: Vec<f64>,
    pub exact: f64,
    /// Midpoint rule at `q_res`.
    pub midpoint: f64,
    /// Same rule with the step halved.
    pub refined: f64,
    /// Second-order extrapolation of the two.
    pub represented: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RepresentationReport {
    pub model: String,
    pub function: String,
    pub radius: f64,
    pub resolution: usize,
    pub probes: Vec<RepresentationProbe>,
    pub max_relative_error: f64,
    /// Largest change between resolution `q_res` and `2 q_res`.
    pub halving_change: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub const REPRESENTATION_TOL: f64 = 0.02;
pub const DEFAULT_Q_RES: usize = 48;

struct AnnulusCell {
    zeta: Vec<f64>,
    /// Cell edges mapped through the chart Jacobian, one per axis.
    edges: Vec<Vec<f64>>,
    /// Kernel sub-cells along each axis.
    counts: Vec<usize>,
    /// `u L eta + 2 sum a_ij X_i eta X_j u` times the cell measure, per point.
    weight: f64,
}

/// Kernel sample points per unit of degree along each axis of the box; the
/// kernel varies much faster than the cut-off factor near the pole time.
const KERNEL_RESOLUTION: usize = 192;

/// `dE/dh` at a cell center; through the closed-form logarithm when the
/// chart has one.
fn cell_jacobian(
    chart: &ExpChart,
    h: &[f64],
    zeta: &[f64],
    spacing: &[f64],
) -> Result<nalgebra::DMatrix<f64>> {
    let n = h.len();
    let mut jac = nalgebra::DMatrix::zeros(n, n);
    if chart.has_closed_log() {
        let delta = 1e-6;
        for k in 0..n {
            let mut p = zeta.to_vec();
            p[k] += delta;
            let a = chart.log_map(&p)?;
            p[k] -= 2.0 * delta;
            let b = chart.log_map(&p)?;
            for r in 0..n {
                jac[(r, k)] = (a[r] - b[r]) / (2.0 * delta);
            }
        }
        return jac
            .try_inverse()
            .ok_or_else(|| LabError::Numeric("singular chart Jacobian".into()));
    }
    for k in 0..n {
        let mut hk = h.to_vec();
        let step = 1e-4 * spacing[k];
        hk[k] += step;
        let pk = chart.e_map_unchecked(&hk)?;
        for r in 0..n {
            jac[(r, k)] = (pk[r] - zeta[r]) / step;
        }
    }
    Ok(jac)
}

/// Sum of the kernel over the sub-cell centers of a cell.
fn kernel_cell_sum(kernel: Kernel, z: &[f64], cell: &AnnulusCell) -> f64 {
    let n = cell.zeta.len();
    let mut p = vec![0.0; n];
    let mut total = 0.0;
    let count: usize = cell.counts.iter().product();
    for mut idx in 0..count {
        p.copy_from_slice(&cell.zeta);
        for (edge, &m) in cell.edges.iter().zip(&cell.counts) {
            let i = idx % m;
            idx /= m;
            let c = (i as f64 + 0.5) / m as f64 - 0.5;
            for (pr, e) in p.iter_mut().zip(edge) {
                *pr += c * e;
            }
        }
        total += kernel.eval(z, &p);
    }
    total / count as f64
}

fn annulus_cells(
    model: &ModelOperator,
    u: &dyn ScalarFunction,
    cutoff: &Cutoff,
    resolution: usize,
) -> Result<Vec<AnnulusCell>> {
    let chart = cutoff.chart();
    let r = cutoff.radius();
    let degrees = chart.degrees();
    let n = chart.dimension();
    let smooth = SmoothGauge::new(&degrees);
    let spacing: Vec<f64> = degrees
        .iter()
        .map(|&d| 2.0 * r.powi(d as i32) / resolution as f64)
        .collect();
    let volume: f64 = spacing.iter().product();
    let total = resolution.pow(n as u32);
    let centers: Vec<Vec<f64>> = (0..total)
        .filter_map(|mut idx| {
            let h: Vec<f64> = (0..n)
                .map(|k| {
                    let i = idx % resolution;
                    idx /= resolution;
                    -r.powi(degrees[k] as i32) + (i as f64 + 0.5) * spacing[k]
                })
                .collect();
            let g = smooth.eval(&h) / r;
            (0.75..1.0).contains(&g).then_some(h)
        })
        .collect();
    let (xs, x0) = operator_fields(model);
    let a = &model.coefficients;
    let settings = *chart.settings();
    let ustep = 1e-4 * r;
    centers
        .par_iter()
        .map(|h| {
            let zeta = chart.e_map_unchecked(h)?;
            let jac = cell_jacobian(chart, h, &zeta, &spacing)?;
            let det = jac.determinant().abs();
            let edges = (0..n)
                .map(|k| (0..n).map(|r| jac[(r, k)] * spacing[k]).collect())
                .collect();
            let uf = |p: &[f64]| u.value(p);
            let uv = u.value(&zeta);
            let mut first_eta = Vec::with_capacity(xs.len());
            let mut l_eta = 0.0;
            let mut second_eta = Vec::with_capacity(xs.len());
            for x in &xs {
                let (e1, e2) = cutoff.field_derivatives_at(x, 1, h, &zeta)?;
                first_eta.push(e1);
                second_eta.push(e2);
            }
            for i in 0..xs.len() {
                for j in 0..xs.len() {
                    if a[(i, j)] == 0.0 {
                        continue;
                    }
                    if i != j {
                        return Err(LabError::Input(
                            "representation check supports diagonal coefficients".into(),
                        ));
                    }
                    l_eta += a[(i, i)] * second_eta[i];
                }
            }
            if let Some(x0) = x0 {
                l_eta -= cutoff.field_derivatives_at(x0, 2, h, &zeta)?.0;
            }
            let mut cross = 0.0;
            for (i, x) in xs.iter().enumerate() {
                if first_eta[i] != 0.0 {
                    cross += a[(i, i)] * first_eta[i] * d1(x, &uf, &zeta, ustep, &settings)?;
                }
            }
            Ok(AnnulusCell {
                zeta,
                edges,
                weight: (uv * l_eta + 2.0 * cross) * det * volume,
                counts: degrees
                    .iter()
                    .map(|&d| (KERNEL_RESOLUTION * d as usize).div_ceil(resolution).max(1))
                    .collect(),
            })
        })
        .collect()
}

/// `u(z) = -int Gamma(z, zeta) L(eta_R u)(zeta) dzeta` for `L u = 0`, where
/// `L(eta u) = u L eta + 2 sum a_ii X_i eta X_i u` lives on the annulus.
///
/// Midpoint rule on the chart box at `resolution` and twice that; the
/// reported value is their second-order extrapolation and the check fails
/// when the two rules disagree by more than the tolerance.
pub fn representation_check(
    model: &ModelOperator,
    u: &dyn ScalarFunction,
    label: &str,
    radius: f64,
    resolution: usize,
) -> Result<RepresentationReport> {
    let kernel = kernel_of(model)?;
    let chart0 = model.chart_at(&model.origin())?;
    let cutoff = Cutoff::new(chart0.clone(), radius);
    let fine = annulus_cells(model, u, &cutoff, resolution)?;
    let refined = annulus_cells(model, u, &cutoff, 2 * resolution)?;
    let n = model.dimension();
    let drift = chart0.basis().drift_position();
    // probes at d_L <= R/2 along a few fixed directions, toward the future
    let mut probes_h: Vec<Vec<f64>> = vec![vec![0.0; n]];
    for k in 0..n {
        let mut h = vec![0.0; n];
        let deg = chart0.degrees()[k] as i32;
        h[k] = if Some(k) == drift { 1.0 } else { -1.0 } * (0.3 * radius).powi(deg);
        probes_h.push(h);
    }
    let scale = [0.5, 0.75, 1.0]
        .iter()
        .flat_map(|f| shell_points(&chart0, 8, 0.0, 1.0, 11).into_iter().map(move |h| (h, *f)))
        .map(|(h, f)| {
            chart0
                .e_map_unchecked(&chart0.dilate_coords(radius * f, &h))
                .map(|p| u.value(&p).abs())
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let integrate = |cells: &[AnnulusCell], z: &[f64]| -> f64 {
        -cells
            .par_iter()
            .map(|c| kernel_cell_sum(kernel, z, c) * c.weight)
            .sum::<f64>()
    };
    let mut probes = Vec::new();
    let mut halving_change: f64 = 0.0;
    for h in probes_h {
        let z = chart0.e_map_unchecked(&h)?;
        let exact = u.value(&z);
        let midpoint = integrate(&fine, &z);
        let refined_value = integrate(&refined, &z);
        let represented = (4.0 * refined_value - midpoint) / 3.0;
        let denom = exact.abs().max(scale).max(f64::MIN_POSITIVE);
        halving_change = halving_change.max((midpoint - refined_value).abs() / denom);
        probes.push(RepresentationProbe {
            point: z,
            exact,
            midpoint,
            refined: refined_value,
            represented,
            relative_error: (represented - exact).abs() / denom,
        });
    }
    let max_relative_error = probes.iter().map(|p| p.relative_error).fold(0.0, f64::max);
    Ok(RepresentationReport {
        model: model.name.clone(),
        function: label.to_string(),
        radius,
        resolution,
        probes,
        max_relative_error,
        halving_change,
        tolerance: REPRESENTATION_TOL,
        pass: max_relative_error < REPRESENTATION_TOL && halving_change < REPRESENTATION_TOL,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PotentialRow {
    pub radius: f64,
    /// `sup_z |X_i X_j P_R(z)|` over the probes, keyed `XiXj`.
    pub second_derivatives: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PotentialReport {
    pub model: String,
    pub rows: Vec<PotentialRow>,
    pub max_spread: f64,
    pub pass: bool,
}

/// Second derivatives of `P_R(z) = int Gamma(z, zeta) eta_R(zeta) dzeta` at
/// probes in `H_{R/2}`, by differences of the quadrature along flows.
pub fn second_derivative_potential_bound(
    model: &ModelOperator,
    radii: &[f64],
    seed: u64,
) -> Result<PotentialReport> {
    let kernel = kernel_of(model)?;
    let chart0 = model.chart_at(&model.origin())?;
    let (legendre, hermite) = quadrature(64, 24)?;
    let (xs, _) = operator_fields(model);
    let settings = Default::default();
    let ti = kernel.time_index();
    let probes = shell_points(&chart0, 4, 0.0, 0.5, seed);
    let mut rows = Vec::new();
    for &r in radii {
        let cutoff = Cutoff::new(chart0.clone(), r);
        let eta = |p: &[f64]| cutoff.eval(p).unwrap_or(0.0);
        let potential = |z: &[f64]| {
            let horizon = z[ti] + r * r;
            if horizon <= 0.0 {
                return 0.0;
            }
            kernel_potential(kernel, &eta, z, horizon, &legendre, &hermite)
        };
        let step = 0.05 * r;
        let mut second_derivatives = BTreeMap::new();
        for (i, xi) in xs.iter().enumerate() {
            for (j, xj) in xs.iter().enumerate() {
                let sup = probes
                    .par_iter()
                    .map(|h| {
                        let z = chart0.e_map_unchecked(&chart0.dilate_coords(r, h))?;
                        Ok(d2(xi, xj, &potential, &z, step, step, &settings)?.abs())
                    })
                    .collect::<Result<Vec<f64>>>()?
                    .into_iter()
                    .fold(0.0, f64::max);
                second_derivatives.insert(format!("X{}X{}", i + 1, j + 1), sup);
            }
        }
        rows.push(PotentialRow {
            radius: r,
            second_derivatives,
        });
    }
    let max_spread = rows[0]
        .second_derivatives
        .keys()
        .map(|k| rows.iter().map(|r| r.second_derivatives[k]).collect::<Vec<f64>>())
        .filter(|s| s.iter().all(|v| *v > 1e-9))
        .map(|s| spread(&s))
        .fold(1.0, f64::max);
    Ok(PotentialReport {
        model: model.name.clone(),
        rows,
        max_spread,
        pass: max_spread < 2.0,
    })
}
