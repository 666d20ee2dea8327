//! Maximum-likelihood count models for the tabular factored MDP.

use crate::env::tabular::product_kernel;
use crate::env::{TabularFmdpSpec, TabularMdp, TabularTransition};
use crate::error::{Error, Result};

/// Either per-mechanism `(parent config, child)` counts or full
/// `(s, a, s')` counts. Rows without observations fall back to uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularCountModel {
    spec: TabularFmdpSpec,
    factored: bool,
    /// Factored: `counts[i][parent_config][child]`.
    /// Full: `counts[0][s * n_actions + a][s']`.
    counts: Vec<Vec<Vec<u64>>>,
    observed: usize,
}

impl TabularCountModel {
    pub fn new(spec: TabularFmdpSpec, factored: bool) -> Result<Self> {
        spec.validate()?;
        let counts = if factored {
            vec![vec![vec![0; spec.child_card]; spec.parent_card]; spec.k]
        } else {
            vec![vec![vec![0; spec.n_states()]; spec.n_states() * spec.n_actions()]]
        };
        Ok(Self {
            spec,
            factored,
            counts,
            observed: 0,
        })
    }

    pub fn is_factored(&self) -> bool {
        self.factored
    }

    pub fn observed(&self) -> usize {
        self.observed
    }

    pub fn observe(&mut self, t: &TabularTransition) {
        let c = self.spec.child_card;
        let na = self.spec.n_actions();
        if self.factored {
            let (mut s, mut s2) = (t.s, t.s_next);
            for i in 0..self.spec.k {
                let pc = (s % c) * na + t.a;
                self.counts[i][pc][s2 % c] += 1;
                s /= c;
                s2 /= c;
            }
        } else {
            self.counts[0][t.s * na + t.a][t.s_next] += 1;
        }
        self.observed += 1;
    }

    fn normalized(row: &[u64]) -> Vec<f64> {
        let total: u64 = row.iter().sum();
        if total == 0 {
            return vec![1.0 / row.len() as f64; row.len()];
        }
        row.iter().map(|&v| v as f64 / total as f64).collect()
    }

    /// Estimated mechanism row `P(c_i | parent config)`; factored models only.
    pub fn mechanism(&self, i: usize, parent_config: usize) -> Result<Vec<f64>> {
        if !self.factored {
            return Err(Error::InvalidArgument("full count model has no mechanisms".into()));
        }
        Ok(Self::normalized(&self.counts[i][parent_config]))
    }

    /// Estimated `P(. | s, a)` over all next states.
    pub fn kernel(&self, s: usize, a: usize) -> Vec<f64> {
        let c = self.spec.child_card;
        let na = self.spec.n_actions();
        if self.factored {
            let mut rest = s;
            let rows: Vec<Vec<f64>> = (0..self.spec.k)
                .map(|i| {
                    let v = rest % c;
                    rest /= c;
                    Self::normalized(&self.counts[i][v * na + a])
                })
                .collect();
            let refs: Vec<&Vec<f64>> = rows.iter().collect();
            product_kernel(&refs, c)
        } else {
            Self::normalized(&self.counts[0][s * na + a])
        }
    }
}

pub fn fit_tabular(transitions: &[TabularTransition], spec: TabularFmdpSpec, factored: bool) -> Result<TabularCountModel> {
    let mut m = TabularCountModel::new(spec, factored)?;
    for t in transitions {
        m.observe(t);
    }
    Ok(m)
}

/// `max_{s,a} || P(s, a) - estimate(s, a) ||_1`.
pub fn max_l1_error<F>(truth: &TabularMdp, estimate: F) -> f64
where
    F: Fn(usize, usize) -> Vec<f64>,
{
    let mut worst = 0.0f64;
    for s in 0..truth.n_states() {
        for a in 0..truth.n_actions() {
            let p = truth.kernel(s, a);
            let q = estimate(s, a);
            let l1: f64 = p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum();
            worst = worst.max(l1);
        }
    }
    worst
}

pub fn tabular_l1_error(model: &TabularCountModel, truth: &TabularMdp) -> f64 {
    max_l1_error(truth, |s, a| model.kernel(s, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    fn mdp(seed: u64) -> TabularMdp {
        TabularMdp::random(TabularFmdpSpec::new(2, 4, 8), &mut seeds::rng(seed)).unwrap()
    }

    #[test]
    fn exact_lookup_has_zero_error() {
        let m = mdp(0);
        assert_eq!(max_l1_error(&m, |s, a| m.kernel(s, a)), 0.0);
    }

    #[test]
    fn single_observation_is_certain() {
        let m = mdp(1);
        let t = TabularTransition { s: 5, a: 1, s_next: 9 };
        let model = fit_tabular(&[t], m.spec, true).unwrap();
        let f = m.factors(5);
        let f2 = m.factors(9);
        for i in 0..2 {
            let row = model.mechanism(i, m.parent_config(f[i], 1)).unwrap();
            assert_eq!(row[f2[i]], 1.0);
        }
        let full = fit_tabular(&[t], m.spec, false).unwrap();
        assert_eq!(full.kernel(5, 1)[9], 1.0);
    }

    #[test]
    fn unseen_rows_are_uniform() {
        let m = mdp(2);
        let model = TabularCountModel::new(m.spec, false).unwrap();
        let k = model.kernel(0, 0);
        assert!(k.iter().all(|p| (p - 1.0 / 16.0).abs() < 1e-15));
        let fac = TabularCountModel::new(m.spec, true).unwrap();
        assert!((fac.kernel(3, 1).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn both_estimators_converge() {
        let m = mdp(3);
        let data = m.sample_transitions(200_000, &mut seeds::rng(4));
        for factored in [true, false] {
            let model = fit_tabular(&data, m.spec, factored).unwrap();
            assert!(tabular_l1_error(&model, &m) < 0.15, "factored={factored}");
        }
    }
}
