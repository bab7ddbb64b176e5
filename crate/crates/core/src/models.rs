//! Shipped model operators `L = sum a_ij X_i X_j - X_0` and their
//! fundamental solutions.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chart::{ClosedLog, ExpChart};
use crate::error::{LabError, Result};
use crate::field::{FieldSpec, VectorField};
use crate::filtration::{Generators, HormanderSystem, DEFAULT_S_MAX};
use crate::flow::FlowSettings;
use crate::polynomial::Polynomial;

/// Models are globally charted; this radius only guards runaway inputs.
pub const MODEL_CHART_RADIUS: f64 = 8.0;
pub const POLE_TOL: f64 = 1e-3;

/// Closed-form fundamental solutions with `L_z Gamma(., zeta) = -delta_zeta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// `d_xx - x d_y - d_t` on `(x, y, t)`.
    Kolmogorov,
    /// `sum_k d_kk - d_t` on `(x_1..x_d, t)`.
    Heat { spatial: usize },
}

impl Kernel {
    /// `Gamma(z, zeta)`; zero unless `t(z) > t(zeta)`.
    pub fn eval(&self, z: &[f64], zeta: &[f64]) -> f64 {
        match *self {
            Kernel::Kolmogorov => {
                let s = z[2] - zeta[2];
                if s <= 0.0 {
                    return 0.0;
                }
                let w1 = z[0] - zeta[0];
                let w2 = z[1] - zeta[1] - zeta[0] * s;
                let q = w1 * w1 / s - 3.0 * w1 * w2 / (s * s) + 3.0 * w2 * w2 / (s * s * s);
                3f64.sqrt() / (2.0 * PI * s * s) * (-q).exp()
            }
            Kernel::Heat { spatial } => {
                let s = z[spatial] - zeta[spatial];
                if s <= 0.0 {
                    return 0.0;
                }
                let r2: f64 = (0..spatial).map(|k| (z[k] - zeta[k]).powi(2)).sum();
                (4.0 * PI * s).powf(-(spatial as f64) / 2.0) * (-r2 / (4.0 * s)).exp()
            }
        }
    }

    /// Time coordinate index.
    pub fn time_index(&self) -> usize {
        match *self {
            Kernel::Kolmogorov => 2,
            Kernel::Heat { spatial } => spatial,
        }
    }

    /// Point reached from `z` after backward time `s` with standard normal
    /// noise `w`: the kernel `Gamma(z, .)` is the density of these points.
    pub fn backward_point(&self, z: &[f64], s: f64, w: &[f64]) -> Vec<f64> {
        match *self {
            Kernel::Kolmogorov => {
                // (x - xi, y - eta - xi s) ~ N(0, C), C = [[2s, s^2], [s^2, 2s^3/3]]
                let l11 = (2.0 * s).sqrt();
                let l21 = s.powf(1.5) / 2f64.sqrt();
                let l22 = (s.powi(3) / 6.0).sqrt();
                let a = l11 * w[0];
                let b = l21 * w[0] + l22 * w[1];
                let xi = z[0] - a;
                let eta = z[1] - xi * s - b;
                vec![xi, eta, z[2] - s]
            }
            Kernel::Heat { spatial } => {
                let sd = (2.0 * s).sqrt();
                let mut p: Vec<f64> = (0..spatial).map(|k| z[k] - sd * w[k]).collect();
                p.push(z[spatial] - s);
                p
            }
        }
    }

    /// Dimension of the noise in [`Kernel::backward_point`].
    pub fn noise_dimension(&self) -> usize {
        match *self {
            Kernel::Kolmogorov => 2,
            Kernel::Heat { spatial } => spatial,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelOperator {
    pub name: String,
    pub coordinate_names: Vec<String>,
    pub system: HormanderSystem,
    /// Constant coefficient matrix `a_ij`, `i, j = 1..m`.
    pub coefficients: DMatrix<f64>,
    pub kernel: Option<Kernel>,
    closed_log: Option<ClosedLog>,
}

fn translation_log(z: &[f64], zeta: &[f64]) -> Vec<f64> {
    zeta.iter().zip(z).map(|(a, b)| a - b).collect()
}

// basis (X1, X0, [X1, X0]); E(z, h) = (x + h1, y + h3 + h0 (x + h1), t + h0)
fn kolmogorov_log(z: &[f64], zeta: &[f64]) -> Vec<f64> {
    let h1 = zeta[0] - z[0];
    let h0 = zeta[2] - z[2];
    vec![h1, h0, zeta[1] - z[1] - h0 * zeta[0]]
}

// basis (X1, X2, X0, [X1, X2]);
// x3 + h12 + h2 x1 / 2 - h1 (x2 + h2) / 2 is the third coordinate of E(z, h)
fn heisenberg_time_log(z: &[f64], zeta: &[f64]) -> Vec<f64> {
    let h1 = zeta[0] - z[0];
    let h2 = zeta[1] - z[1];
    let h0 = zeta[3] - z[3];
    vec![
        h1,
        h2,
        h0,
        zeta[2] - z[2] - 0.5 * h2 * z[0] + 0.5 * h1 * zeta[1],
    ]
}

pub const MODEL_NAMES: [&str; 4] = ["heat", "heat1", "kolmogorov", "heisenberg-time"];

fn poly_one(n: usize) -> Polynomial {
    Polynomial::constant(n, 1.0)
}

impl ModelOperator {
    pub fn new(
        name: &str,
        coordinate_names: Vec<String>,
        generators: Generators,
        coefficients: Option<DMatrix<f64>>,
        kernel: Option<Kernel>,
    ) -> Result<Self> {
        let m = generators.num_horizontal();
        let coefficients = coefficients.unwrap_or_else(|| DMatrix::identity(m, m));
        if coefficients.nrows() != m || coefficients.ncols() != m {
            return Err(LabError::DimensionMismatch {
                expected: m,
                actual: coefficients.nrows(),
            });
        }
        check_ellipticity(&coefficients)?;
        Ok(Self {
            name: name.to_string(),
            coordinate_names,
            system: HormanderSystem::new(generators, DEFAULT_S_MAX)?,
            coefficients,
            kernel,
            closed_log: None,
        })
    }

    pub fn by_name(name: &str) -> Result<Self> {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        match name {
            "heat" => {
                let g = Generators::new(
                    Some(VectorField::coordinate(3, 2)),
                    vec![VectorField::coordinate(3, 0), VectorField::coordinate(3, 1)],
                )?;
                Ok(Self {
                    closed_log: Some(translation_log),
                    ..Self::new(
                        name,
                        names(&["x", "y", "t"]),
                        g,
                        None,
                        Some(Kernel::Heat { spatial: 2 }),
                    )?
                })
            }
            "heat1" => {
                let g = Generators::new(
                    Some(VectorField::coordinate(2, 1)),
                    vec![VectorField::coordinate(2, 0)],
                )?;
                Ok(Self {
                    closed_log: Some(translation_log),
                    ..Self::new(
                        name,
                        names(&["x", "t"]),
                        g,
                        None,
                        Some(Kernel::Heat { spatial: 1 }),
                    )?
                })
            }
            "kolmogorov" => {
                let n = 3;
                let x0 = VectorField::new(vec![
                    Polynomial::zero(n),
                    Polynomial::variable(n, 0),
                    poly_one(n),
                ])?;
                let g = Generators::new(Some(x0), vec![VectorField::coordinate(n, 0)])?;
                Ok(Self {
                    closed_log: Some(kolmogorov_log),
                    ..Self::new(
                        name,
                        names(&["x", "y", "t"]),
                        g,
                        None,
                        Some(Kernel::Kolmogorov),
                    )?
                })
            }
            "heisenberg-time" => {
                let n = 4;
                let zero = Polynomial::zero(n);
                let x1 = VectorField::new(vec![
                    poly_one(n),
                    zero.clone(),
                    Polynomial::variable(n, 1).scale(-0.5),
                    zero.clone(),
                ])?;
                let x2 = VectorField::new(vec![
                    zero.clone(),
                    poly_one(n),
                    Polynomial::variable(n, 0).scale(0.5),
                    zero,
                ])?;
                let g = Generators::new(Some(VectorField::coordinate(n, 3)), vec![x1, x2])?;
                Ok(Self {
                    closed_log: Some(heisenberg_time_log),
                    ..Self::new(name, names(&["x1", "x2", "x3", "t"]), g, None, None)?
                })
            }
            _ => Err(LabError::Input(format!(
                "unknown model `{name}` (known: {})",
                MODEL_NAMES.join(", ")
            ))),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Parse(format!("{}: {e}", path.display())))?;
        let file: FieldFile = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| LabError::Parse(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| LabError::Parse(e.to_string()))?
        };
        file.into_model(
            &path
                .file_stem()
                .map_or("custom".into(), |s| s.to_string_lossy().into_owned()),
        )
    }

    pub fn dimension(&self) -> usize {
        self.system.dimension()
    }

    pub fn generators(&self) -> &Generators {
        self.system.generators()
    }

    pub fn num_horizontal(&self) -> usize {
        self.generators().num_horizontal()
    }

    pub fn names(&self) -> Vec<&str> {
        self.coordinate_names.iter().map(String::as_str).collect()
    }

    pub fn chart_at(&self, z: &[f64]) -> Result<ExpChart> {
        let chart =
            ExpChart::at(&self.system, z, FlowSettings::default())?.with_radius(MODEL_CHART_RADIUS);
        Ok(match self.closed_log {
            Some(log) => chart.with_closed_log(log),
            None => chart,
        })
    }

    pub fn origin(&self) -> Vec<f64> {
        vec![0.0; self.dimension()]
    }

    pub fn homogeneous_dimension(&self) -> Result<u32> {
        Ok(self.chart_at(&self.origin())?.homogeneous_dimension())
    }

    /// `Gamma(z, zeta)` with the pole guard `d_L(z, zeta) >= POLE_TOL`.
    pub fn gamma(&self, z: &[f64], zeta: &[f64]) -> Result<f64> {
        let kernel = self
            .kernel
            .ok_or_else(|| LabError::Input(format!("model `{}` has no kernel", self.name)))?;
        let d = self.chart_at(zeta)?.quasi_distance(z)?;
        if d < POLE_TOL {
            return Err(LabError::SingularEvaluation {
                distance: d,
                tolerance: POLE_TOL,
            });
        }
        Ok(kernel.eval(z, zeta))
    }
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_range(a: &DMatrix<f64>) -> (f64, f64) {
    let e = a.clone().symmetric_eigenvalues();
    (e.min(), e.max())
}

fn check_ellipticity(a: &DMatrix<f64>) -> Result<()> {
    if (a - a.transpose()).amax() > 1e-12 {
        return Err(LabError::Input("coefficient matrix not symmetric".into()));
    }
    let (lo, hi) = eigen_range(a);
    if lo <= 0.0 {
        return Err(LabError::Ellipticity {
            node: Vec::new(),
            eigenvalue: lo,
            lambda: 0.0,
            big_lambda: hi,
        });
    }
    Ok(())
}

/// Field-definition file: index 0 of `fields` is the drift unless
/// `has_drift = false`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldFile {
    pub dimension: usize,
    pub fields: Vec<FieldSpec>,
    #[serde(default = "default_true")]
    pub has_drift: bool,
    #[serde(default)]
    pub names: Option<Vec<String>>,
    /// Constant `a_ij` block.
    #[serde(default)]
    pub coefficients: Option<Vec<Vec<f64>>>,
}

fn default_true() -> bool {
    true
}

impl FieldFile {
    pub fn generators(&self) -> Result<Generators> {
        let fields = self
            .fields
            .iter()
            .map(|f| VectorField::from_terms(self.dimension, &f.coefficients))
            .collect::<Result<Vec<_>>>()?;
        if self.has_drift {
            Generators::from_list(fields)
        } else {
            Generators::new(None, fields)
        }
    }

    pub fn into_model(self, name: &str) -> Result<ModelOperator> {
        let generators = self.generators()?;
        let names = self
            .names
            .clone()
            .unwrap_or_else(|| (1..=self.dimension).map(|k| format!("x{k}")).collect());
        let a = self.coefficients.as_ref().map(|rows| {
            let m = rows.len();
            DMatrix::from_fn(m, m, |i, j| rows[i].get(j).copied().unwrap_or(f64::NAN))
        });
        ModelOperator::new(name, names, generators, a, None)
    }
}
