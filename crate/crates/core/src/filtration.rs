//! Hormander filtration `V_1 ⊆ V_2 ⊆ ... ⊆ V_s`, degree assignment and
//! graded basis selection.
//!
//! Words are generated symbolically, degree by degree: degree 1 holds the
//! horizontal generators, degree 2 adds the drift and `[X_i, X_j]`, and
//! degree `d + 1` holds `[X_i, w]` for every degree-`d` word `w`. Rank
//! decisions are made numerically at a base point with a singular-value
//! threshold.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::field::{lie_bracket, VectorField};
use crate::word::CommutatorWord;

pub const DEFAULT_RANK_TOL: f64 = 1e-8;
pub const DEFAULT_S_MAX: usize = 6;

/// The generators `X_0` (drift, optional) and `X_1..X_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generators {
    dimension: usize,
    drift: Option<VectorField>,
    horizontal: Vec<VectorField>,
}

impl Generators {
    pub fn new(drift: Option<VectorField>, horizontal: Vec<VectorField>) -> Result<Self> {
        let dimension = drift
            .as_ref()
            .map(VectorField::dimension)
            .or_else(|| horizontal.first().map(VectorField::dimension))
            .ok_or_else(|| LabError::Input("no vector fields given".into()))?;
        for f in drift.iter().chain(&horizontal) {
            if f.dimension() != dimension {
                return Err(LabError::DimensionMismatch {
                    expected: dimension,
                    actual: f.dimension(),
                });
            }
        }
        Ok(Self {
            dimension,
            drift,
            horizontal,
        })
    }

    /// Fields listed with the drift first, per the field-file convention.
    pub fn from_list(fields: Vec<VectorField>) -> Result<Self> {
        let mut it = fields.into_iter();
        let drift = it
            .next()
            .ok_or_else(|| LabError::Input("no vector fields given".into()))?;
        Self::new(Some(drift), it.collect())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn num_horizontal(&self) -> usize {
        self.horizontal.len()
    }

    pub fn drift(&self) -> Option<&VectorField> {
        self.drift.as_ref()
    }

    pub fn horizontal(&self) -> &[VectorField] {
        &self.horizontal
    }

    /// Generator by index: 0 is the drift, `1..=m` the horizontal fields.
    pub fn get(&self, index: usize) -> Option<&VectorField> {
        if index == 0 {
            self.drift.as_ref()
        } else {
            self.horizontal.get(index - 1)
        }
    }

    /// Symbolic field of a commutator word.
    pub fn word_field(&self, word: &CommutatorWord) -> Result<VectorField> {
        match word {
            CommutatorWord::Leaf(i) => self
                .get(*i)
                .cloned()
                .ok_or_else(|| LabError::Input(format!("generator X{i} not defined"))),
            CommutatorWord::Bracket(a, b) => {
                lie_bracket(&self.word_field(a)?, &self.word_field(b)?)
            }
        }
    }
}

/// A commutator word together with its symbolic field.
#[derive(Clone, Debug, PartialEq)]
pub struct WordField {
    pub word: CommutatorWord,
    pub field: VectorField,
}

/// Nonzero words of each degree `1..=s_max`, independent of any base point.
#[derive(Clone, Debug)]
pub struct HormanderSystem {
    generators: Generators,
    by_degree: Vec<Vec<WordField>>,
}

impl HormanderSystem {
    pub fn new(generators: Generators, s_max: usize) -> Result<Self> {
        if s_max == 0 {
            return Err(LabError::Input("s_max must be at least 1".into()));
        }
        let m = generators.num_horizontal();
        let mut by_degree: Vec<Vec<WordField>> = Vec::with_capacity(s_max);
        let mut seen: Vec<VectorField> = Vec::new();
        let mut push = |layer: &mut Vec<WordField>, word: CommutatorWord, field: VectorField| {
            if field.is_zero() {
                return;
            }
            let neg = field.scale(-1.0);
            if seen.iter().any(|f| *f == field || *f == neg) {
                return;
            }
            seen.push(field.clone());
            layer.push(WordField { word, field });
        };

        let mut first = Vec::new();
        for i in 1..=m {
            push(
                &mut first,
                CommutatorWord::leaf(i),
                generators.horizontal[i - 1].clone(),
            );
        }
        by_degree.push(first);

        for degree in 2..=s_max {
            let mut layer = Vec::new();
            if degree == 2 {
                if let Some(d) = &generators.drift {
                    push(&mut layer, CommutatorWord::leaf(0), d.clone());
                }
            }
            let prev = by_degree[degree - 2].clone();
            for i in 1..=m {
                let xi = &generators.horizontal[i - 1];
                for w in &prev {
                    // [X_i, X_j] and [X_j, X_i] span the same line
                    if let CommutatorWord::Leaf(j) = w.word {
                        if j != 0 && j <= i {
                            continue;
                        }
                    }
                    let field = lie_bracket(xi, &w.field)?;
                    push(
                        &mut layer,
                        CommutatorWord::bracket(CommutatorWord::leaf(i), w.word.clone()),
                        field,
                    );
                }
            }
            layer.sort_by(|a, b| a.word.selection_order(&b.word));
            by_degree.push(layer);
        }
        Ok(Self {
            generators,
            by_degree,
        })
    }

    pub fn generators(&self) -> &Generators {
        &self.generators
    }

    pub fn dimension(&self) -> usize {
        self.generators.dimension
    }

    pub fn s_max(&self) -> usize {
        self.by_degree.len()
    }

    /// Words first appearing at degree `degree` (1-based).
    pub fn words_of_degree(&self, degree: usize) -> &[WordField] {
        &self.by_degree[degree - 1]
    }

    pub fn filtration_at(&self, z: &[f64], rank_tol: f64) -> Result<Filtration> {
        let n = self.dimension();
        if z.len() != n {
            return Err(LabError::DimensionMismatch {
                expected: n,
                actual: z.len(),
            });
        }
        let mut layers = Vec::new();
        let mut columns: Vec<Vec<f64>> = Vec::new();
        let mut dims = Vec::new();
        let mut step = None;
        for (j, words) in self.by_degree.iter().enumerate() {
            for w in words {
                columns.push(w.field.eval(z));
            }
            layers.push(words.clone());
            let r = numerical_rank(n, &columns, rank_tol);
            dims.push(r);
            if r == n {
                step = Some(j + 1);
                break;
            }
        }
        Ok(Filtration {
            base_point: z.to_vec(),
            dimension: n,
            layers,
            dims,
            step,
            s_max: self.s_max(),
            rank_tol,
        })
    }
}

/// The filtration evaluated at a base point.
#[derive(Clone, Debug)]
pub struct Filtration {
    pub base_point: Vec<f64>,
    pub dimension: usize,
    /// `layers[j]` holds the words of degree `j + 1`; `V_{j+1}` is the span of
    /// `layers[0..=j]`.
    pub layers: Vec<Vec<WordField>>,
    /// Evaluated rank of `V_{j+1}` at the base point.
    pub dims: Vec<usize>,
    /// First `s` with full rank, if reached by `s_max`.
    pub step: Option<usize>,
    pub s_max: usize,
    pub rank_tol: f64,
}

impl Filtration {
    pub fn is_full_rank(&self) -> bool {
        self.step.is_some()
    }

    pub fn achieved_rank(&self) -> usize {
        self.dims.last().copied().unwrap_or(0)
    }
}

/// Construct the filtration for `fields` (index 0 is the drift) at `z`.
/// Failure to reach full rank is reported through [`Filtration::step`].
pub fn build_filtration(fields: &[VectorField], z: &[f64], s_max: usize) -> Result<Filtration> {
    let generators = Generators::from_list(fields.to_vec())?;
    HormanderSystem::new(generators, s_max)?.filtration_at(z, DEFAULT_RANK_TOL)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasisEntry {
    pub word: CommutatorWord,
    pub field: VectorField,
    pub degree: u32,
}

/// Degree-ordered basis of the tangent space at a base point.
#[derive(Clone, Debug)]
pub struct GradedBasis {
    pub base_point: Vec<f64>,
    pub entries: Vec<BasisEntry>,
    pub homogeneous_dimension: u32,
    pub condition_number: f64,
}

impl GradedBasis {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn degrees(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.degree).collect()
    }

    /// Position of the drift `X_0` in the basis, if selected.
    pub fn drift_position(&self) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.word == CommutatorWord::Leaf(0))
    }

    /// Position of generator `X_i` (as a single-leaf word).
    pub fn generator_position(&self, i: usize) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.word == CommutatorWord::Leaf(i))
    }

    /// Column matrix of the basis fields evaluated at `x`.
    pub fn frame_at(&self, x: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        let mut m = DMatrix::zeros(n, self.entries.len());
        for (k, e) in self.entries.iter().enumerate() {
            for (i, v) in e.field.eval(x).into_iter().enumerate() {
                m[(i, k)] = v;
            }
        }
        m
    }

    pub fn summary(&self) -> BasisSummary {
        BasisSummary {
            words: self.entries.iter().map(|e| e.word.to_string()).collect(),
            degrees: self.degrees(),
            homogeneous_dimension: self.homogeneous_dimension,
            condition_number: self.condition_number,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BasisSummary {
    pub words: Vec<String>,
    pub degrees: Vec<u32>,
    pub homogeneous_dimension: u32,
    pub condition_number: f64,
}

/// Greedy selection by (degree, leaf sequence): keep a word iff it raises
/// the evaluated rank.
pub fn select_graded_basis(filtration: &Filtration) -> Result<GradedBasis> {
    let n = filtration.dimension;
    if !filtration.is_full_rank() {
        return Err(LabError::RankDeficient {
            achieved: filtration.achieved_rank(),
            required: n,
        });
    }
    let z = &filtration.base_point;
    let mut candidates: Vec<&WordField> = filtration.layers.iter().flatten().collect();
    candidates.sort_by(|a, b| a.word.selection_order(&b.word));

    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut entries = Vec::new();
    let mut rank = 0;
    for c in candidates {
        if rank == n {
            break;
        }
        columns.push(c.field.eval(z));
        let r = numerical_rank(n, &columns, filtration.rank_tol);
        if r > rank {
            rank = r;
            entries.push(BasisEntry {
                word: c.word.clone(),
                field: c.field.clone(),
                degree: c.word.degree(),
            });
        } else {
            columns.pop();
        }
    }
    if rank < n {
        return Err(LabError::RankDeficient {
            achieved: rank,
            required: n,
        });
    }
    let sv = singular_values(n, &columns);
    let condition_number =
        sv.iter().cloned().fold(0.0, f64::max) / sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let homogeneous_dimension = entries.iter().map(|e| e.degree).sum();
    Ok(GradedBasis {
        base_point: z.clone(),
        entries,
        homogeneous_dimension,
        condition_number,
    })
}

fn singular_values(rows: usize, columns: &[Vec<f64>]) -> Vec<f64> {
    if columns.is_empty() {
        return Vec::new();
    }
    let m = DMatrix::from_fn(rows, columns.len(), |i, j| columns[j][i]);
    m.singular_values().iter().copied().collect()
}

/// Number of singular values above `rank_tol * sigma_max`.
pub fn numerical_rank(rows: usize, columns: &[Vec<f64>], rank_tol: f64) -> usize {
    let sv = singular_values(rows, columns);
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rank_tol * max).count()
}
