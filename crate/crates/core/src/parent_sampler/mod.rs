//! Parent distributions over `(s, a)`: per-parent-set mixtures with
//! sequential conditional sampling, density reweighting toward uniform or a
//! priority target, the empirical/uniform/rollout baselines, and the
//! model-free component swap.

mod baselines;
mod coda;
mod reweight;

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Provenance, SaSample};
use crate::env::{ParentSetSpec, SaBox};
use crate::error::{Error, Result};
use crate::gmm::{fit_em, EmConfig, GmmFile, GmmModel};

pub use baselines::{baseline_samples, BaselineKind, DynaSource, DYNA_HORIZON};
pub use coda::{coda_swap, factor_components, FactorComponent};
pub use reweight::{reweight_priority, reweight_uniform, state_features, KDE_FLOOR, KDE_REFERENCE_SIZE};

pub const DEFAULT_COMPONENTS: usize = 32;

/// One mixture per parent set, each over that set's `[s ; a]` coordinates.
#[derive(Debug, Clone)]
pub struct ParentModel {
    pub state_dim: usize,
    pub action_dim: usize,
    pub sets: Vec<(ParentSetSpec, GmmModel<f64>)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParentModelFile {
    state_dim: usize,
    action_dim: usize,
    sets: Vec<(ParentSetSpec, GmmFile)>,
}

impl ParentModel {
    pub fn new(state_dim: usize, action_dim: usize, sets: Vec<(ParentSetSpec, GmmModel<f64>)>) -> Result<Self> {
        let n = state_dim + action_dim;
        let mut covered = vec![false; n];
        for (p, g) in &sets {
            if g.dim() != p.parent_indices.len() {
                return Err(Error::DimMismatch {
                    expected: p.parent_indices.len(),
                    got: g.dim(),
                    context: "mixture dim vs parent set size",
                });
            }
            for &i in &p.parent_indices {
                *covered.get_mut(i).ok_or_else(|| {
                    Error::InvalidArgument(format!("parent index {i} out of range"))
                })? = true;
            }
        }
        if let Some(i) = covered.iter().position(|c| !c) {
            return Err(Error::InvalidArgument(format!(
                "coordinate {i} is not covered by any parent set"
            )));
        }
        Ok(Self {
            state_dim,
            action_dim,
            sets,
        })
    }

    pub fn sa_dim(&self) -> usize {
        self.state_dim + self.action_dim
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = ParentModelFile {
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            sets: self.sets.iter().map(|(p, g)| (p.clone(), g.to_file())).collect(),
        };
        std::fs::write(path, serde_json::to_vec(&f)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.display().to_string(),
                stage: "fit-parent",
            });
        }
        let f: ParentModelFile = serde_json::from_slice(&std::fs::read(path)?)?;
        let sets = f
            .sets
            .iter()
            .map(|(p, g)| Ok((p.clone(), GmmModel::from_file(g)?)))
            .collect::<Result<_>>()?;
        Self::new(f.state_dim, f.action_dim, sets)
    }
}

/// Fits one mixture per parent set to the empirical marginal over that
/// set's coordinates only.
pub fn fit_parent_gmms(
    dataset: &Dataset,
    parent_sets: &[ParentSetSpec],
    n_components: usize,
    em: &EmConfig,
) -> Result<ParentModel> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot fit parents to an empty dataset".into()));
    }
    let rows: Vec<Vec<f64>> = dataset.transitions.iter().map(|t| t.state_action()).collect();
    let mut sets = Vec::with_capacity(parent_sets.len());
    for (k, p) in parent_sets.iter().enumerate() {
        let mut data = Array2::zeros((rows.len(), p.parent_indices.len()));
        for (r, row) in rows.iter().enumerate() {
            for (c, &i) in p.parent_indices.iter().enumerate() {
                data[[r, c]] = row[i];
            }
        }
        let cfg = EmConfig {
            seed: crate::seeds::derive_seed(em.seed, &format!("parent-set-{k}")),
            ..*em
        };
        let fit = fit_em(data.view(), n_components, &cfg)?;
        sets.push((p.clone(), fit.model));
    }
    ParentModel::new(dataset.state_dim, dataset.action_dim, sets)
}

/// Draws `n` joint `(s, a)` samples by visiting the parent sets in order
/// (optionally reshuffled per sample). A set with no already-drawn
/// coordinates is sampled from its mixture; otherwise only its missing
/// coordinates are drawn, from the mixture conditioned on the drawn ones.
/// Results are clipped to `bounds` when given.
pub fn sample_mocoda<R: Rng + ?Sized>(
    model: &ParentModel,
    n: usize,
    rng: &mut R,
    shuffle_order: bool,
    bounds: Option<&SaBox>,
) -> Result<Vec<SaSample>> {
    let dim = model.sa_dim();
    let mut order: Vec<usize> = (0..model.sets.len()).collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        if shuffle_order {
            order.shuffle(rng);
        }
        let mut x = vec![f64::NAN; dim];
        let mut filled = vec![false; dim];
        for &k in &order {
            let (p, gmm) = &model.sets[k];
            let known: Vec<usize> = (0..p.parent_indices.len())
                .filter(|&c| filled[p.parent_indices[c]])
                .collect();
            if known.len() == p.parent_indices.len() {
                continue;
            }
            if known.is_empty() {
                for (c, v) in gmm.sample(rng).into_iter().enumerate() {
                    x[p.parent_indices[c]] = v;
                }
            } else {
                let vals: Vec<f64> = known.iter().map(|&c| x[p.parent_indices[c]]).collect();
                let cond = gmm.condition(&known, &vals)?;
                let unknown = (0..p.parent_indices.len()).filter(|c| !known.contains(c));
                for (c, v) in unknown.zip(cond.sample(rng)) {
                    x[p.parent_indices[c]] = v;
                }
            }
            for &i in &p.parent_indices {
                filled[i] = true;
            }
        }
        if let Some(b) = bounds {
            b.clip(&mut x);
        }
        out.push(SaSample::from_joint(&x, model.state_dim, Provenance::Mocoda));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use ndarray::array;

    fn unit_gmm(mean: Vec<f64>) -> GmmModel<f64> {
        let d = mean.len();
        GmmModel::new(
            vec![1.0],
            vec![ndarray::Array1::from(mean)],
            vec![Array2::eye(d) * 0.01],
            1e-9,
        )
        .unwrap()
    }

    #[test]
    fn uncovered_coordinate_is_rejected() {
        let sets = vec![(ParentSetSpec::new(0, vec![0, 2]), unit_gmm(vec![0.0, 0.0]))];
        assert!(ParentModel::new(2, 2, sets).is_err());
    }

    #[test]
    fn overlapping_sets_share_the_drawn_value() {
        // both sets contain coordinate 2 (the action). The first pins it near
        // 0.9; the second must condition on it instead of redrawing it.
        let first = GmmModel::new(
            vec![1.0],
            vec![array![0.5, 0.9]],
            vec![array![[0.01, 0.0], [0.0, 1e-4]]],
            1e-12,
        )
        .unwrap();
        let shared = GmmModel::new(
            vec![0.5, 0.5],
            vec![array![-1.0, 1.0], array![1.0, -1.0]],
            vec![
                array![[0.01, 0.009], [0.009, 0.01]],
                array![[0.01, 0.009], [0.009, 0.01]],
            ],
            1e-12,
        )
        .unwrap();
        let sets = vec![
            (ParentSetSpec::new(0, vec![0, 2]), first),
            (ParentSetSpec::new(1, vec![1, 2]), shared),
        ];
        let model = ParentModel::new(2, 1, sets).unwrap();
        let out = sample_mocoda(&model, 4000, &mut seeds::rng(0), false, None).unwrap();
        assert!(out.iter().all(|s| (s.a[0] - 0.9).abs() < 0.05));
        // y | a under the first component: -1 + 0.9 (a - 1), about -1.09
        let mean_y: f64 = out.iter().map(|s| s.s[1]).sum::<f64>() / out.len() as f64;
        assert!((mean_y + 1.09).abs() < 0.01, "{mean_y}");
        let shuffled = sample_mocoda(&model, 200, &mut seeds::rng(1), true, None).unwrap();
        assert!(shuffled.iter().all(|s| s.s.iter().chain(&s.a).all(|v| v.is_finite())));
    }

    #[test]
    fn sampling_is_deterministic() {
        let sets = vec![
            (ParentSetSpec::new(0, vec![0, 2]), unit_gmm(vec![0.2, 0.5])),
            (ParentSetSpec::new(1, vec![1, 3]), unit_gmm(vec![0.7, -0.5])),
        ];
        let model = ParentModel::new(2, 2, sets).unwrap();
        let a = sample_mocoda(&model, 50, &mut seeds::rng(3), true, None).unwrap();
        let b = sample_mocoda(&model, 50, &mut seeds::rng(3), true, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clipping_keeps_samples_in_box() {
        let sets = vec![
            (ParentSetSpec::new(0, vec![0, 2]), unit_gmm(vec![0.0, 1.0])),
            (ParentSetSpec::new(1, vec![1, 3]), unit_gmm(vec![1.0, -1.0])),
        ];
        let model = ParentModel::new(2, 2, sets).unwrap();
        let bounds = crate::env::NavEnv::sa_box();
        let out = sample_mocoda(&model, 500, &mut seeds::rng(4), false, Some(&bounds)).unwrap();
        assert!(out.iter().all(|s| bounds.contains(&s.state_action())));
    }
}
