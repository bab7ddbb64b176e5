//! Dirichlet problems `sum a_ij X_i X_j u - X_0 u = g` on cylinders
//! `H_R(z0)`, discretized on chart-coordinate grids with flow-aligned
//! stencils and relaxed slice by slice along the drift coordinate.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::chart::{ExpChart, LogOptions};
use crate::error::{LabError, Result};
use crate::field::VectorField;
use crate::flow::flow;
use crate::models::{eigen_range, ModelOperator};

pub const SOLVER_TOL: f64 = 1e-9;
pub const MAX_SWEEPS: usize = 50_000;
const MAX_PASSES: usize = 200;
/// Fractional grid offsets below this are snapped to the node.
const SNAP: f64 = 1e-7;

pub type PointFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
/// Borrowed right-hand side.
pub type RhsFn<'a> = dyn Fn(&[f64]) -> f64 + Sync + 'a;
pub type MatrixFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

#[derive(Clone)]
pub enum Coefficients {
    Constant(DMatrix<f64>),
    Variable(Arc<MatrixFn>),
}

impl Coefficients {
    pub fn at(&self, p: &[f64]) -> DMatrix<f64> {
        match self {
            Self::Constant(a) => a.clone(),
            Self::Variable(f) => f(p),
        }
    }
}

/// Nodes `h = i * (R/n)^deg` of the chart box with `d_L(z0, E(h)) < R`.
///
/// Nodes are stored row by row: all axes but the last form a dense prefix,
/// and the last (highest-degree) axis holds a symmetric interval per prefix.
pub struct CylinderGrid {
    chart: ExpChart,
    radius: f64,
    n: usize,
    degrees: Vec<u32>,
    spacing: Vec<f64>,
    extent: Vec<i64>,
    row_start: Vec<usize>,
    row_half: Vec<i64>,
    indices: Vec<i64>,
    points: Vec<f64>,
}

impl CylinderGrid {
    pub fn new(chart: ExpChart, radius: f64, n: usize) -> Result<Self> {
        if !(radius > 0.0) || n == 0 {
            return Err(LabError::Input(format!(
                "grid needs R > 0 and n > 0 (got R = {radius}, n = {n})"
            )));
        }
        let degrees = chart.degrees();
        let dim = degrees.len();
        let delta = radius / n as f64;
        let spacing: Vec<f64> = degrees.iter().map(|&d| delta.powi(d as i32)).collect();
        let extent: Vec<i64> = degrees.iter().map(|&d| (n as i64).pow(d)).collect();
        let prefix_count: usize = extent[..dim - 1]
            .iter()
            .map(|e| (2 * e + 1) as usize)
            .product();
        let last = dim - 1;
        let mut row_start = Vec::with_capacity(prefix_count + 1);
        let mut row_half = Vec::with_capacity(prefix_count);
        let mut indices = Vec::new();
        let mut total = 0usize;
        let mut idx = vec![0i64; dim];
        for p in 0..prefix_count {
            let mut rest = p;
            let mut partial = 0.0;
            for k in (0..last).rev() {
                let width = (2 * extent[k] + 1) as usize;
                idx[k] = (rest % width) as i64 - extent[k];
                rest /= width;
                partial += (idx[k] as f64 * spacing[k]).abs().powf(1.0 / degrees[k] as f64);
            }
            row_start.push(total);
            let limit = radius * (1.0 - 1e-12);
            let half = if partial >= limit {
                -1
            } else {
                let rem = limit - partial;
                let d = degrees[last] as f64;
                let mut m = (rem.powf(d) / spacing[last]).floor() as i64;
                while m >= 0 && (m as f64 * spacing[last]).powf(1.0 / d) >= rem {
                    m -= 1;
                }
                m.min(extent[last])
            };
            row_half.push(half);
            for j in -half..=half {
                idx[last] = j;
                indices.extend_from_slice(&idx);
            }
            total += (2 * half + 1).max(0) as usize;
        }
        row_start.push(total);
        let hs: Vec<Vec<f64>> = indices
            .chunks(dim)
            .map(|i| i.iter().zip(&spacing).map(|(&k, s)| k as f64 * s).collect())
            .collect();
        let points = hs
            .par_iter()
            .map(|h| chart.e_map_unchecked(h))
            .collect::<Result<Vec<Vec<f64>>>>()?
            .concat();
        Ok(Self {
            chart,
            radius,
            n,
            degrees,
            spacing,
            extent,
            row_start,
            row_half,
            indices,
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.dimension()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dimension(&self) -> usize {
        self.degrees.len()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn chart(&self) -> &ExpChart {
        &self.chart
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Flow step of the degree-1 generators; `step^2` for the drift.
    pub fn step(&self) -> f64 {
        self.radius / self.n as f64
    }

    pub fn index(&self, id: usize) -> &[i64] {
        let d = self.dimension();
        &self.indices[id * d..(id + 1) * d]
    }

    pub fn point(&self, id: usize) -> &[f64] {
        let d = self.dimension();
        &self.points[id * d..(id + 1) * d]
    }

    pub fn coords(&self, id: usize) -> Vec<f64> {
        self.index(id)
            .iter()
            .zip(&self.spacing)
            .map(|(&k, s)| k as f64 * s)
            .collect()
    }

    /// `d_L(z0, node)`.
    pub fn gauge(&self, id: usize) -> f64 {
        self.chart.gauge(&self.coords(id))
    }

    pub fn node_at(&self, idx: &[i64]) -> Option<usize> {
        let dim = self.dimension();
        let last = dim - 1;
        let mut p = 0usize;
        for k in 0..last {
            if idx[k].abs() > self.extent[k] {
                return None;
            }
            p = p * (2 * self.extent[k] + 1) as usize + (idx[k] + self.extent[k]) as usize;
        }
        let half = self.row_half[p];
        if idx[last].abs() > half {
            return None;
        }
        Some(self.row_start[p] + (idx[last] + half) as usize)
    }

    /// Node nearest to the chart center.
    pub fn center(&self) -> usize {
        self.node_at(&vec![0; self.dimension()])
            .expect("the center is always a node")
    }

    /// Chart coordinates of `p`, seeded with `guess` for the Newton inverse.
    pub fn locate(&self, p: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        self.chart.log_map_with(
            p,
            &LogOptions {
                guess: guess.map(|g| g.to_vec()),
                scales: Some(self.spacing.clone()),
                jacobian: None,
            },
        )
    }
}

/// Where a stencil sample reads its value.
#[derive(Clone, Debug, PartialEq)]
enum Target {
    Node(usize),
    Outside(Vec<f64>),
}

/// Multilinear interpolation of a point in grid coordinates.
fn resolve(grid: &CylinderGrid, p: &[f64], h: &[f64]) -> Result<Vec<(Target, f64)>> {
    let dim = grid.dimension();
    let frac: Vec<f64> = h.iter().zip(&grid.spacing).map(|(v, s)| v / s).collect();
    let mut base = vec![0i64; dim];
    let mut t = vec![0.0; dim];
    let mut exact = true;
    for k in 0..dim {
        let r = frac[k].round();
        if (frac[k] - r).abs() < SNAP {
            base[k] = r as i64;
        } else {
            exact = false;
            base[k] = frac[k].floor() as i64;
            t[k] = frac[k] - base[k] as f64;
        }
    }
    if exact {
        return Ok(vec![(
            grid.node_at(&base)
                .map_or_else(|| Target::Outside(p.to_vec()), Target::Node),
            1.0,
        )]);
    }
    let mut out = Vec::new();
    for corner in 0..(1usize << dim) {
        let mut idx = base.clone();
        let mut w = 1.0;
        for k in 0..dim {
            if t[k] == 0.0 {
                if corner >> k & 1 == 1 {
                    w = 0.0;
                }
                continue;
            }
            if corner >> k & 1 == 1 {
                idx[k] += 1;
                w *= t[k];
            } else {
                w *= 1.0 - t[k];
            }
        }
        if w == 0.0 {
            continue;
        }
        let target = match grid.node_at(&idx) {
            Some(id) => Target::Node(id),
            None => {
                let hc: Vec<f64> = idx
                    .iter()
                    .zip(&grid.spacing)
                    .map(|(&k, s)| k as f64 * s)
                    .collect();
                Target::Outside(grid.chart.e_map_unchecked(&hc)?)
            }
        };
        out.push((target, w));
    }
    Ok(out)
}

/// Stencil samples `(point, weight)` of `L` at a node, excluding the center
/// weight which is returned separately.
fn stencil_samples(
    model: &ModelOperator,
    a: &DMatrix<f64>,
    p: &[f64],
    s: f64,
) -> Result<(Vec<(Vec<f64>, f64)>, f64)> {
    let xs = model.generators().horizontal();
    let settings = Default::default();
    let mut samples = Vec::new();
    let mut center = 0.0;
    let m = xs.len();
    for i in 0..m {
        for j in 0..m {
            let c = a[(i, j)];
            if c == 0.0 {
                continue;
            }
            if i == j {
                for sign in [1.0, -1.0] {
                    samples.push((flow(&xs[i], sign * s, p, &settings)?, c / (s * s)));
                }
                center -= 2.0 * c / (s * s);
            } else {
                for si in [1.0, -1.0] {
                    let q = flow(&xs[i], si * s, p, &settings)?;
                    for sj in [1.0, -1.0] {
                        samples.push((
                            flow(&xs[j], sj * s, &q, &settings)?,
                            si * sj * c / (4.0 * s * s),
                        ));
                    }
                }
            }
        }
    }
    if let Some(x0) = model.generators().drift() {
        let tau = s * s;
        samples.push((flow(x0, -tau, p, &settings)?, 1.0 / tau));
        center -= 1.0 / tau;
    }
    Ok((samples, center))
}

/// Assembled discrete operator on one grid; reusable across right-hand
/// sides and boundary data.
pub struct DiscreteOperator {
    grid: Arc<CylinderGrid>,
    diag: Vec<f64>,
    offsets: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
    b_offsets: Vec<usize>,
    b_cols: Vec<u32>,
    b_weights: Vec<f64>,
    outside: Vec<Vec<f64>>,
    slices: Vec<Vec<u32>>,
    omega: f64,
    lambda: f64,
    big_lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OperatorSummary {
    pub radius: f64,
    pub resolution: usize,
    pub nodes: usize,
    pub boundary_samples: usize,
    pub slices: usize,
    pub relaxation: f64,
    /// Eigenvalue range of the coefficient matrix over the nodes.
    pub lambda: f64,
    pub big_lambda: f64,
}

impl DiscreteOperator {
    pub fn assemble(
        model: &ModelOperator,
        coefficients: &Coefficients,
        center: &[f64],
        radius: f64,
        n: usize,
    ) -> Result<Self> {
        let chart = model.chart_at(center)?;
        let grid = Arc::new(CylinderGrid::new(chart, radius, n)?);
        Self::on_grid(model, coefficients, grid)
    }

    pub fn on_grid(
        model: &ModelOperator,
        coefficients: &Coefficients,
        grid: Arc<CylinderGrid>,
    ) -> Result<Self> {
        let s = grid.step();
        let count = grid.len();
        let rows = (0..count)
            .into_par_iter()
            .map(|id| {
                let p = grid.point(id);
                let a = coefficients.at(p);
                let (lo, hi) = eigen_range(&a);
                let (samples, mut diag) = stencil_samples(model, &a, p, s)?;
                let h = grid.coords(id);
                let mut nodes: Vec<(u32, f64)> = Vec::new();
                let mut outside: Vec<(Vec<f64>, f64)> = Vec::new();
                for (q, w) in samples {
                    let hq = grid.locate(&q, Some(&h))?;
                    for (target, wt) in resolve(&grid, &q, &hq)? {
                        match target {
                            Target::Node(j) if j == id => diag += w * wt,
                            Target::Node(j) => match nodes.iter_mut().find(|e| e.0 == j as u32) {
                                Some(e) => e.1 += w * wt,
                                None => nodes.push((j as u32, w * wt)),
                            },
                            Target::Outside(pt) => outside.push((pt, w * wt)),
                        }
                    }
                }
                Ok((diag, nodes, outside, lo, hi))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut diag = Vec::with_capacity(count);
        let mut offsets = vec![0];
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        let mut b_offsets = vec![0];
        let mut b_cols = Vec::new();
        let mut b_weights = Vec::new();
        let mut outside_points = Vec::new();
        let mut lambda = f64::INFINITY;
        let mut big_lambda = f64::NEG_INFINITY;
        let mut jacobi: f64 = 0.0;
        for (id, (d, nodes, outside, lo, hi)) in rows.into_iter().enumerate() {
            if !(d < 0.0) {
                return Err(LabError::Numeric(format!(
                    "non-negative diagonal {d} at node {:?}",
                    grid.index(id)
                )));
            }
            lambda = lambda.min(lo);
            big_lambda = big_lambda.max(hi);
            jacobi = jacobi.max(nodes.iter().map(|e| e.1.abs()).sum::<f64>() / d.abs());
            diag.push(d);
            for (j, w) in nodes {
                cols.push(j);
                weights.push(w);
            }
            offsets.push(cols.len());
            for (pt, w) in outside {
                b_cols.push(outside_points.len() as u32);
                b_weights.push(w);
                outside_points.push(pt);
            }
            b_offsets.push(b_cols.len());
        }
        // slices of equal drift index, in increasing order
        let slices = match grid.chart().basis().drift_position() {
            Some(k) => {
                let ext = grid.extent[k];
                let mut slices = vec![Vec::new(); (2 * ext + 1) as usize];
                for id in 0..count {
                    slices[(grid.index(id)[k] + ext) as usize].push(id as u32);
                }
                slices.retain(|s| !s.is_empty());
                slices
            }
            None => vec![(0..count as u32).collect()],
        };
        let chain = (std::f64::consts::PI / (2 * grid.resolution() + 2) as f64).cos();
        let rho = (jacobi * chain).min(1.0 - 1e-6);
        let omega = 2.0 / (1.0 + (1.0 - rho * rho).sqrt());
        Ok(Self {
            grid,
            diag,
            offsets,
            cols,
            weights,
            b_offsets,
            b_cols,
            b_weights,
            outside: outside_points,
            slices,
            omega,
            lambda,
            big_lambda,
        })
    }

    pub fn grid(&self) -> &Arc<CylinderGrid> {
        &self.grid
    }

    pub fn summary(&self) -> OperatorSummary {
        OperatorSummary {
            radius: self.grid.radius(),
            resolution: self.grid.resolution(),
            nodes: self.grid.len(),
            boundary_samples: self.outside.len(),
            slices: self.slices.len(),
            relaxation: self.omega,
            lambda: self.lambda,
            big_lambda: self.big_lambda,
        }
    }

    /// Points outside the cylinder read by the stencils.
    pub fn boundary_points(&self) -> &[Vec<f64>] {
        &self.outside
    }

    pub fn solve(&self, boundary: Arc<PointFn>, rhs: &RhsFn) -> Result<GridSolution> {
        let g: Vec<f64> = (0..self.grid.len())
            .map(|id| rhs(self.grid.point(id)))
            .collect();
        self.solve_nodal(boundary, &g)
    }

    /// Solve with the right-hand side given at the nodes.
    pub fn solve_nodal(&self, boundary: Arc<PointFn>, g: &[f64]) -> Result<GridSolution> {
        let count = self.grid.len();
        let bvals: Vec<f64> = self.outside.iter().map(|p| boundary(p)).collect();
        let boundary_sup = bvals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut rhs = vec![0.0; count];
        for id in 0..count {
            let mut r = g[id];
            for e in self.b_offsets[id]..self.b_offsets[id + 1] {
                r -= self.b_weights[e] * bvals[self.b_cols[e] as usize];
            }
            rhs[id] = r;
        }
        let mut u = vec![0.0; count];
        let mut history = Vec::new();
        let mut sweeps = 0;
        for _ in 0..MAX_PASSES {
            for slice in &self.slices {
                let mut local = 0;
                loop {
                    let mut change: f64 = 0.0;
                    let mut size: f64 = 0.0;
                    for &id in slice {
                        let id = id as usize;
                        let mut acc = rhs[id];
                        for e in self.offsets[id]..self.offsets[id + 1] {
                            acc -= self.weights[e] * u[self.cols[e] as usize];
                        }
                        let new = acc / self.diag[id];
                        let delta = self.omega * (new - u[id]);
                        u[id] += delta;
                        change = change.max(delta.abs());
                        size = size.max(u[id].abs());
                    }
                    local += 1;
                    sweeps += 1;
                    if change <= 1e-13 * (1.0 + size) {
                        break;
                    }
                    if local >= MAX_SWEEPS {
                        return Err(LabError::SolverDivergence {
                            residual: change,
                            sweeps,
                            history,
                        });
                    }
                }
            }
            let residual = self.residual(&u, &rhs);
            history.push(residual);
            let scale = 1.0 + u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if residual < SOLVER_TOL * scale {
                return Ok(GridSolution {
                    grid: self.grid.clone(),
                    values: u,
                    boundary,
                    boundary_sup,
                    residual,
                    sweeps,
                });
            }
        }
        Err(LabError::SolverDivergence {
            residual: history.last().copied().unwrap_or(f64::INFINITY),
            sweeps,
            history,
        })
    }

    /// `max |(A u - rhs)_p / A_pp|`.
    fn residual(&self, u: &[f64], rhs: &[f64]) -> f64 {
        (0..u.len())
            .map(|id| {
                let mut acc = self.diag[id] * u[id] - rhs[id];
                for e in self.offsets[id]..self.offsets[id + 1] {
                    acc += self.weights[e] * u[self.cols[e] as usize];
                }
                (acc / self.diag[id]).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Nodal solution with the boundary data used outside the cylinder.
#[derive(Clone)]
pub struct GridSolution {
    grid: Arc<CylinderGrid>,
    values: Vec<f64>,
    boundary: Arc<PointFn>,
    boundary_sup: f64,
    residual: f64,
    sweeps: usize,
}

impl GridSolution {
    /// Wrap nodal values (e.g. a derivative field) for interpolation.
    pub fn from_nodal(grid: Arc<CylinderGrid>, values: Vec<f64>, outside: Arc<PointFn>) -> Self {
        Self {
            grid,
            values,
            boundary: outside,
            boundary_sup: 0.0,
            residual: 0.0,
            sweeps: 0,
        }
    }

    /// Node with the nearest grid coordinates, if inside the cylinder.
    pub fn nearest_node(&self, p: &[f64]) -> Option<usize> {
        let h = self.grid.locate(p, None).ok()?;
        let idx: Vec<i64> = h
            .iter()
            .zip(self.grid.spacing())
            .map(|(v, s)| (v / s).round() as i64)
            .collect();
        self.grid.node_at(&idx)
    }

    pub fn grid(&self) -> &Arc<CylinderGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// Largest boundary value read by the stencils.
    pub fn boundary_sup(&self) -> f64 {
        self.boundary_sup
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sup of `|u|` over nodes with `d_L < r`.
    pub fn sup_abs_within(&self, r: f64) -> f64 {
        (0..self.grid.len())
            .filter(|&id| self.grid.gauge(id) < r)
            .map(|id| self.values[id].abs())
            .fold(0.0, f64::max)
    }

    /// Value at any point: interpolated inside, boundary data outside.
    pub fn value_at(&self, p: &[f64]) -> f64 {
        let h = match self.grid.locate(p, None) {
            Ok(h) => h,
            Err(_) => return (self.boundary)(p),
        };
        match resolve(&self.grid, p, &h) {
            Ok(parts) => parts
                .into_iter()
                .map(|(t, w)| match t {
                    Target::Node(id) => w * self.values[id],
                    Target::Outside(q) => w * (self.boundary)(&q),
                })
                .sum(),
            Err(_) => (self.boundary)(p),
        }
    }

    pub fn value(&self, id: usize) -> f64 {
        self.values[id]
    }
}

/// Derivatives of grid functions along the generators, with the grid steps.
pub struct GridCalculus<'a> {
    pub model: &'a ModelOperator,
    pub step: f64,
}

impl GridCalculus<'_> {
    fn horizontal(&self, i: usize) -> &VectorField {
        &self.model.generators().horizontal()[i]
    }

    /// `X_i X_j f(p)` with step `k * step`.
    pub fn second(&self, f: &dyn Fn(&[f64]) -> f64, p: &[f64], i: usize, j: usize, k: f64) -> Result<f64> {
        let s = k * self.step;
        crate::diff::d2(self.horizontal(i), self.horizontal(j), f, p, s, s, &Default::default())
    }

    /// `X_i f(p)`.
    pub fn first(&self, f: &dyn Fn(&[f64]) -> f64, p: &[f64], i: usize, k: f64) -> Result<f64> {
        crate::diff::d1(self.horizontal(i), f, p, k * self.step, &Default::default())
    }

    /// `X_0 f(p)`, central along the drift flow.
    pub fn drift(&self, f: &dyn Fn(&[f64]) -> f64, p: &[f64], k: f64) -> Result<f64> {
        let x0 = self
            .model
            .generators()
            .drift()
            .ok_or_else(|| LabError::Input("model has no drift".into()))?;
        let t = (k * self.step).powi(2);
        crate::diff::d1(x0, f, p, t, &Default::default())
    }

    /// Derivative along a basis word by nested differences of its leaves.
    pub fn word(
        &self,
        word: &crate::word::CommutatorWord,
        f: &dyn Fn(&[f64]) -> f64,
        p: &[f64],
        k: f64,
    ) -> Result<f64> {
        use crate::word::CommutatorWord;
        match word {
            CommutatorWord::Leaf(0) => self.drift(f, p, k),
            CommutatorWord::Leaf(i) => self.first(f, p, i - 1, k),
            CommutatorWord::Bracket(a, b) => {
                let ba = |q: &[f64]| self.word(b, f, q, k).unwrap_or(f64::NAN);
                let ab = |q: &[f64]| self.word(a, f, q, k).unwrap_or(f64::NAN);
                Ok(self.word(a, &ba, p, k)? - self.word(b, &ab, p, k)?)
            }
        }
    }

    /// Second-order Richardson extrapolation of a difference rule in `k`.
    pub fn richardson(&self, rule: impl Fn(f64) -> Result<f64>) -> Result<f64> {
        let fine = rule(1.0)?;
        let coarse = rule(2.0)?;
        Ok((4.0 * fine - coarse) / 3.0)
    }
}

/// Check the ellipticity window `[lambda, big_lambda]` at every node.
pub fn check_grid_ellipticity(
    grid: &CylinderGrid,
    coefficients: &Coefficients,
    lambda: f64,
    big_lambda: f64,
) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for id in 0..grid.len() {
        let (a, b) = eigen_range(&coefficients.at(grid.point(id)));
        if a < lambda || b > big_lambda {
            return Err(LabError::Ellipticity {
                node: grid.index(id).to_vec(),
                eigenvalue: if a < lambda { a } else { b },
                lambda,
                big_lambda,
            });
        }
        lo = lo.min(a);
        hi = hi.max(b);
    }
    Ok((lo, hi))
}
