//! Random tabular factored MDPs for sample-complexity experiments.
//!
//! A state is a tuple of `k` factors, each taking `child_card` values. The
//! parents of factor `i` are its own current value and the action, so each
//! mechanism has `parent_card = child_card * n_actions` parent
//! configurations. The joint kernel is the product of the `k` mechanisms.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TabularFmdpSpec {
    /// Number of factors (causal mechanisms).
    pub k: usize,
    /// Values per factor, `|c_i|`.
    pub child_card: usize,
    /// Parent configurations per mechanism, `|Pa_i|`.
    pub parent_card: usize,
    /// Local subspaces; only the globally factored case `m = 1` is built.
    pub subspaces: usize,
    pub epsilon: f64,
    pub delta: f64,
}

impl TabularFmdpSpec {
    pub fn new(k: usize, child_card: usize, parent_card: usize) -> Self {
        Self {
            k,
            child_card,
            parent_card,
            subspaces: 1,
            epsilon: 0.2,
            delta: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        if self.child_card < 2 || self.parent_card < 2 {
            return Err(Error::InvalidArgument(
                "child and parent cardinalities must be >= 2".into(),
            ));
        }
        if self.parent_card % self.child_card != 0 {
            return Err(Error::InvalidArgument(format!(
                "parent cardinality {} is not a multiple of child cardinality {}",
                self.parent_card, self.child_card
            )));
        }
        if self.subspaces != 1 {
            return Err(Error::InvalidArgument(
                "only a single local subspace (m = 1) is supported".into(),
            ));
        }
        if !(self.epsilon > 0.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument("need epsilon > 0 and 0 < delta < 1".into()));
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        self.parent_card / self.child_card
    }

    /// `|S| = m * prod_i |c_i|`.
    pub fn n_states(&self) -> usize {
        self.subspaces * self.child_card.pow(self.k as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TabularTransition {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub spec: TabularFmdpSpec,
    /// `mechanisms[i][parent_config][child_value]`.
    pub mechanisms: Vec<Vec<Vec<f64>>>,
}

impl TabularMdp {
    /// Mechanism rows are drawn from a flat Dirichlet.
    pub fn random<R: Rng + ?Sized>(spec: TabularFmdpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mechanisms = (0..spec.k)
            .map(|_| {
                (0..spec.parent_card)
                    .map(|_| {
                        let raw: Vec<f64> = (0..spec.child_card)
                            .map(|_| {
                                let e: f64 = Exp1.sample(rng);
                                e
                            })
                            .collect();
                        let total: f64 = raw.iter().sum();
                        raw.into_iter().map(|v| v / total).collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { spec, mechanisms })
    }

    pub fn n_states(&self) -> usize {
        self.spec.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.spec.n_actions()
    }

    /// Factor values of state index `s` (factor 0 is least significant).
    pub fn factors(&self, mut s: usize) -> Vec<usize> {
        let c = self.spec.child_card;
        (0..self.spec.k)
            .map(|_| {
                let v = s % c;
                s /= c;
                v
            })
            .collect()
    }

    pub fn state_index(&self, factors: &[usize]) -> usize {
        let c = self.spec.child_card;
        factors.iter().rev().fold(0, |acc, &v| acc * c + v)
    }

    /// Parent configuration of mechanism `i` at `(s, a)`.
    #[inline]
    pub fn parent_config(&self, factor_value: usize, a: usize) -> usize {
        factor_value * self.n_actions() + a
    }

    /// Exact `P(. | s, a)` over all next states.
    pub fn kernel(&self, s: usize, a: usize) -> Vec<f64> {
        let f = self.factors(s);
        let rows: Vec<&Vec<f64>> = (0..self.spec.k)
            .map(|i| &self.mechanisms[i][self.parent_config(f[i], a)])
            .collect();
        product_kernel(&rows, self.spec.child_card)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let f = self.factors(s);
        let next: Vec<usize> = (0..self.spec.k)
            .map(|i| sample_categorical(&self.mechanisms[i][self.parent_config(f[i], a)], rng))
            .collect();
        self.state_index(&next)
    }

    /// One transition from a uniformly drawn `(s, a)`.
    pub fn sample_transition<R: Rng + ?Sized>(&self, rng: &mut R) -> TabularTransition {
        let s = rng.random_range(0..self.n_states());
        let a = rng.random_range(0..self.n_actions());
        TabularTransition {
            s,
            a,
            s_next: self.sample_next(s, a, rng),
        }
    }

    pub fn sample_transitions<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<TabularTransition> {
        (0..n).map(|_| self.sample_transition(rng)).collect()
    }
}

/// Joint distribution over next states given one row per factor.
pub(crate) fn product_kernel(rows: &[&Vec<f64>], child_card: usize) -> Vec<f64> {
    let mut joint = vec![1.0];
    // factor 0 least significant: new index = prev + v * c^i
    for (i, row) in rows.iter().enumerate() {
        let stride = child_card.pow(i as u32);
        let mut next = vec![0.0; stride * child_card];
        for (v, p) in row.iter().enumerate() {
            for (j, q) in joint.iter().enumerate() {
                next[j + v * stride] = q * p;
            }
        }
        joint = next;
    }
    joint
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    #[test]
    fn single_factor_kernel_is_stochastic() {
        let mdp = TabularMdp::random(TabularFmdpSpec::new(1, 2, 2), &mut seeds::rng(0)).unwrap();
        assert_eq!(mdp.n_states(), 2);
        assert_eq!(mdp.n_actions(), 1);
        for s in 0..2 {
            let row = mdp.kernel(s, 0);
            assert_eq!(row.len(), 2);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn state_count_identity() {
        let mdp = TabularMdp::random(TabularFmdpSpec::new(2, 3, 3), &mut seeds::rng(0)).unwrap();
        assert_eq!(mdp.n_states(), 9);
        for s in 0..9 {
            assert_eq!(mdp.state_index(&mdp.factors(s)), s);
        }
    }

    #[test]
    fn joint_is_product_of_mechanisms() {
        let mdp = TabularMdp::random(TabularFmdpSpec::new(2, 4, 8), &mut seeds::rng(3)).unwrap();
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let joint = mdp.kernel(s, a);
                let f = mdp.factors(s);
                assert!((joint.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (s2, &p) in joint.iter().enumerate() {
                    let g = mdp.factors(s2);
                    let expect: f64 = (0..2)
                        .map(|i| mdp.mechanisms[i][mdp.parent_config(f[i], a)][g[i]])
                        .product();
                    assert!((p - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(TabularFmdpSpec::new(2, 1, 2).validate().is_err());
        assert!(TabularFmdpSpec::new(2, 4, 6).validate().is_err());
        let mut s = TabularFmdpSpec::new(2, 4, 8);
        s.subspaces = 2;
        assert!(s.validate().is_err());
    }

    #[test]
    fn empirical_frequencies_converge_to_tables() {
        let mdp = TabularMdp::random(TabularFmdpSpec::new(2, 3, 6), &mut seeds::rng(5)).unwrap();
        let mut rng = seeds::rng(6);
        let l1_at = |n: usize, rng: &mut seeds::StreamRng| {
            let mut counts = vec![vec![vec![0usize; 3]; 6]; 2];
            for t in mdp.sample_transitions(n, rng) {
                let f = mdp.factors(t.s);
                let g = mdp.factors(t.s_next);
                for i in 0..2 {
                    counts[i][mdp.parent_config(f[i], t.a)][g[i]] += 1;
                }
            }
            let mut worst: f64 = 0.0;
            for i in 0..2 {
                for (pc, row) in counts[i].iter().enumerate() {
                    let total: usize = row.iter().sum();
                    let l1: f64 = row
                        .iter()
                        .zip(&mdp.mechanisms[i][pc])
                        .map(|(&c, &p)| (c as f64 / total as f64 - p).abs())
                        .sum();
                    worst = worst.max(l1);
                }
            }
            worst
        };
        let small = l1_at(600, &mut rng);
        let large = l1_at(60_000, &mut rng);
        assert!(large < small, "{large} !< {small}");
        assert!(large < 0.05, "{large}");
    }
}
