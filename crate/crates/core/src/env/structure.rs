//! Causal structure: parent sets and local adjacency masks.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parents of one next-state variable, as indices into the concatenated
/// `[state ; action]` vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParentSetSpec {
    pub child_index: usize,
    pub parent_indices: Vec<usize>,
}

impl ParentSetSpec {
    pub fn new(child_index: usize, parent_indices: Vec<usize>) -> Self {
        Self {
            child_index,
            parent_indices,
        }
    }
}

/// Checks a set of mechanisms for a `state_dim + action_dim` input space:
/// nonempty ordered parent lists, in-range indices, one mechanism per
/// child, every state dimension covered.
pub fn validate_parent_sets(
    sets: &[ParentSetSpec],
    state_dim: usize,
    action_dim: usize,
) -> Result<()> {
    let n_in = state_dim + action_dim;
    let mut children = BTreeSet::new();
    for p in sets {
        if p.parent_indices.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "parent set for child {} is empty",
                p.child_index
            )));
        }
        if p.child_index >= state_dim {
            return Err(Error::InvalidArgument(format!(
                "child index {} out of range for state dim {state_dim}",
                p.child_index
            )));
        }
        if let Some(&bad) = p.parent_indices.iter().find(|&&i| i >= n_in) {
            return Err(Error::InvalidArgument(format!(
                "parent index {bad} out of range for input dim {n_in}"
            )));
        }
        let uniq: BTreeSet<_> = p.parent_indices.iter().collect();
        if uniq.len() != p.parent_indices.len() {
            return Err(Error::InvalidArgument(format!(
                "duplicate parent index for child {}",
                p.child_index
            )));
        }
        if !children.insert(p.child_index) {
            return Err(Error::InvalidArgument(format!(
                "child {} has two parent sets",
                p.child_index
            )));
        }
    }
    if children.len() != state_dim {
        return Err(Error::InvalidArgument(format!(
            "parent sets cover {} of {state_dim} state dims",
            children.len()
        )));
    }
    Ok(())
}

/// Binary adjacency matrix of a local causal graph. Rows index the
/// `[state ; action]` inputs, columns the next-state variables.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdjacencyMask {
    n_inputs: usize,
    n_children: usize,
    bits: Vec<u8>,
}

impl AdjacencyMask {
    pub fn new(n_inputs: usize, n_children: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != n_inputs * n_children {
            return Err(Error::DimMismatch {
                expected: n_inputs * n_children,
                got: bits.len(),
                context: "adjacency mask entries",
            });
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidArgument("mask entries must be 0 or 1".into()));
        }
        let m = Self {
            n_inputs,
            n_children,
            bits,
        };
        for j in 0..n_children {
            if (0..n_inputs).all(|i| !m.get(i, j)) {
                return Err(Error::InvalidArgument(format!(
                    "mask column {j} has no parents"
                )));
            }
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let n_children = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n_children) {
            return Err(Error::InvalidArgument("ragged mask rows".into()));
        }
        Self::new(rows.len(), n_children, rows.concat())
    }

    pub fn ones(n_inputs: usize, n_children: usize) -> Self {
        Self {
            n_inputs,
            n_children,
            bits: vec![1; n_inputs * n_children],
        }
    }

    /// Mask whose columns are exactly the given mechanisms.
    pub fn from_parent_sets(sets: &[ParentSetSpec], n_inputs: usize) -> Result<Self> {
        let n_children = sets.len();
        let mut bits = vec![0u8; n_inputs * n_children];
        for p in sets {
            if p.child_index >= n_children {
                return Err(Error::InvalidArgument(format!(
                    "child index {} out of range",
                    p.child_index
                )));
            }
            for &i in &p.parent_indices {
                if i >= n_inputs {
                    return Err(Error::InvalidArgument(format!("parent {i} out of range")));
                }
                bits[i * n_children + p.child_index] = 1;
            }
        }
        Self::new(n_inputs, n_children, bits)
    }

    #[inline]
    pub fn get(&self, input: usize, child: usize) -> bool {
        self.bits[input * self.n_children + child] != 0
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_children(&self) -> usize {
        self.n_children
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Column `j` as a parent set (ascending input order).
    pub fn parent_set(&self, child: usize) -> ParentSetSpec {
        ParentSetSpec::new(
            child,
            (0..self.n_inputs).filter(|&i| self.get(i, child)).collect(),
        )
    }

    pub fn parent_sets(&self) -> Vec<ParentSetSpec> {
        (0..self.n_children).map(|j| self.parent_set(j)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        self.bits
            .chunks(self.n_children)
            .map(|r| r.to_vec())
            .collect()
    }
}

impl fmt::Display for AdjacencyMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<String> = self
            .rows()
            .iter()
            .map(|r| format!("{r:?}"))
            .collect();
        write!(f, "[{}]", rows.join(","))
    }
}

/// Maps a concatenated `[s ; a]` vector to its local causal graph.
pub trait MaskFn: Send + Sync {
    fn mask(&self, sa: &[f64]) -> AdjacencyMask;
}

/// Axis-aligned bounds of the concatenated `[s ; a]` space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaBox {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl SaBox {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() || low.iter().zip(&high).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidArgument("box needs low <= high per dimension".into()));
        }
        Ok(Self { low, high })
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn clip(&self, x: &mut [f64]) {
        for ((v, l), h) in x.iter_mut().zip(&self.low).zip(&self.high) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.low)
            .zip(&self.high)
            .all(|((v, l), h)| *v >= *l && *v <= *h)
    }

    pub fn sample_uniform<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.low
            .iter()
            .zip(&self.high)
            .map(|(l, h)| if l < h { rng.random_range(*l..*h) } else { *l })
            .collect()
    }
}

/// Deterministic ground-truth transition function with a known mask.
pub trait Simulator: MaskFn {
    fn next_state(&self, s: &[f64], a: &[f64]) -> Vec<f64>;
}

/// A target task over a bounded state-action space. Rewards are a pure
/// function of the transition.
pub trait Task: MaskFn {
    fn bounds(&self) -> SaBox;
    /// `(reward, done)` for `s -> s_next` under `a`.
    fn reward(&self, s: &[f64], a: &[f64], s_next: &[f64]) -> (f64, bool);
}

/// A task with a start distribution and an episode cap, for rolling out
/// policies.
pub trait Episodic: Task + Simulator {
    fn start_state(&self, rng: &mut dyn rand::RngCore) -> Vec<f64>;
    fn max_steps(&self) -> usize;
}

/// The same graph everywhere: a globally factored model of the world.
#[derive(Debug, Clone)]
pub struct ConstantMask(pub AdjacencyMask);

impl MaskFn for ConstantMask {
    fn mask(&self, _sa: &[f64]) -> AdjacencyMask {
        self.0.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parent_set_validation() {
        let ok = vec![
            ParentSetSpec::new(0, vec![0, 2]),
            ParentSetSpec::new(1, vec![1, 3]),
        ];
        validate_parent_sets(&ok, 2, 2).unwrap();

        let missing_child = vec![ParentSetSpec::new(0, vec![0, 2])];
        assert!(validate_parent_sets(&missing_child, 2, 2).is_err());

        let empty = vec![
            ParentSetSpec::new(0, vec![]),
            ParentSetSpec::new(1, vec![1, 3]),
        ];
        assert!(validate_parent_sets(&empty, 2, 2).is_err());

        let dup_child = vec![
            ParentSetSpec::new(0, vec![0]),
            ParentSetSpec::new(0, vec![1]),
        ];
        assert!(validate_parent_sets(&dup_child, 2, 2).is_err());

        let out_of_range = vec![
            ParentSetSpec::new(0, vec![0, 7]),
            ParentSetSpec::new(1, vec![1]),
        ];
        assert!(validate_parent_sets(&out_of_range, 2, 2).is_err());
    }

    #[test]
    fn mask_columns_need_a_parent() {
        assert!(AdjacencyMask::from_rows(&[&[1, 0], &[1, 0]]).is_err());
        assert!(AdjacencyMask::from_rows(&[&[1, 2], &[1, 0]]).is_err());
        let m = AdjacencyMask::from_rows(&[&[1, 0], &[0, 1], &[1, 0], &[0, 1]]).unwrap();
        assert_eq!(m.parent_set(0).parent_indices, vec![0, 2]);
        assert_eq!(m.parent_set(1).parent_indices, vec![1, 3]);
        let again = AdjacencyMask::from_parent_sets(&m.parent_sets(), 4).unwrap();
        assert_eq!(again, m);
    }
}
