//! Commutator words over the generators `X_0, X_1, ..., X_m`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Degree of a generator: the drift `X_0` counts twice.
pub fn generator_degree(index: usize) -> u32 {
    if index == 0 {
        2
    } else {
        1
    }
}

/// A binary bracket tree over generator indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CommutatorWord {
    Leaf(usize),
    Bracket(Box<CommutatorWord>, Box<CommutatorWord>),
}

impl CommutatorWord {
    pub fn leaf(index: usize) -> Self {
        Self::Leaf(index)
    }

    pub fn bracket(left: CommutatorWord, right: CommutatorWord) -> Self {
        Self::Bracket(Box::new(left), Box::new(right))
    }

    /// Sum of leaf degrees.
    pub fn degree(&self) -> u32 {
        match self {
            Self::Leaf(i) => generator_degree(*i),
            Self::Bracket(a, b) => a.degree() + b.degree(),
        }
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<usize>) {
        match self {
            Self::Leaf(i) => out.push(*i),
            Self::Bracket(a, b) => {
                a.collect_leaves(out);
                b.collect_leaves(out);
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Leaf(_) => 1,
            Self::Bracket(a, b) => a.len() + b.len(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Self::Leaf(_))
    }

    /// Same word with the top-level bracket reversed; leaves are unchanged.
    pub fn swapped(&self) -> Self {
        match self {
            Self::Leaf(i) => Self::Leaf(*i),
            Self::Bracket(a, b) => Self::Bracket(b.clone(), a.clone()),
        }
    }

    /// Ordering used for basis selection: degree first, then leaf sequence.
    pub fn selection_order(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.leaves().cmp(&other.leaves()))
    }
}

impl fmt::Display for CommutatorWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Leaf(i) => write!(f, "X{i}"),
            Self::Bracket(a, b) => write!(f, "[{a},{b}]"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degrees_add_up() {
        let w = CommutatorWord::bracket(CommutatorWord::leaf(1), CommutatorWord::leaf(0));
        assert_eq!(w.degree(), 3);
        assert_eq!(w.leaves(), vec![1, 0]);
        assert_eq!(w.to_string(), "[X1,X0]");
        assert_eq!(CommutatorWord::leaf(0).degree(), 2);
        assert_eq!(CommutatorWord::leaf(4).degree(), 1);
        assert_eq!(w.swapped().leaves(), vec![0, 1]);
    }

    #[test]
    fn selection_order_prefers_drift_among_degree_two() {
        let drift = CommutatorWord::leaf(0);
        let b = CommutatorWord::bracket(CommutatorWord::leaf(1), CommutatorWord::leaf(2));
        assert_eq!(drift.selection_order(&b), Ordering::Less);
        assert_eq!(
            CommutatorWord::leaf(2).selection_order(&drift),
            Ordering::Less
        );
    }
}
