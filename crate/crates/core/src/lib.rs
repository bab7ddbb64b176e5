pub mod chart;
pub mod cutoff;
pub mod diff;
pub mod error;
pub mod expr;
pub mod field;
pub mod filtration;
pub mod flow;
pub mod geometry;
pub mod kernel_checks;
pub mod models;
pub mod modulus;
pub mod polynomial;
pub mod schauder;
pub mod solver;
pub mod stats;
pub mod taylor;
pub mod word;

pub use error::{LabError, Result};
