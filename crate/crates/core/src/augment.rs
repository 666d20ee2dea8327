//! End-to-end generation of augmented transition datasets: fit parent and
//! dynamics models on logged data, draw state-action pairs from a parent
//! distribution, push them through the dynamics model, relabel rewards and
//! merge with the empirical data.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{write_binary_to, Dataset, Provenance, SaSample, Transition};
use crate::dynamics::{Architecture, DynamicsConfig, DynamicsEnsemble, TrainHistory};
use crate::env::{AdjacencyMask, ParentSetSpec, SaBox, Task};
use crate::error::{Error, Result};
use crate::gmm::EmConfig;
use crate::parent_sampler::{
    baseline_samples, coda_swap, fit_parent_gmms, reweight_priority, reweight_uniform,
    sample_mocoda, state_features, BaselineKind, DynaSource, ParentModel, DEFAULT_COMPONENTS,
};
use crate::seeds;

/// How an `Emp` run fills its generated share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmpMode {
    /// Repeat the logged transitions verbatim.
    Repeat,
    /// Replay the logged `(s, a)` through the dynamics model.
    Model,
}

/// Isotropic Gaussian bump in state-feature space, the priority target of
/// the prioritized reweighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityTarget {
    pub center: Vec<f64>,
    pub width: f64,
}

impl PriorityTarget {
    pub fn density(&self, f: &[f64]) -> f64 {
        let d2: f64 = f.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum();
        (-0.5 * d2 / (self.width * self.width)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub kind: Provenance,
    /// Size of the merged output.
    pub total_size: usize,
    /// Logged transitions kept verbatim in the output. Capped at the
    /// dataset size.
    pub empirical_count: usize,
    /// Multiplies the model std when sampling next states.
    pub std_scale: f64,
    pub emp_mode: EmpMode,
    pub val_count: usize,
    pub n_components: usize,
    pub em: EmConfig,
    pub dynamics: DynamicsConfig,
    pub kde_bandwidth: f64,
    pub priority: PriorityTarget,
    /// Proposal rounds allowed for the reweighted kinds.
    pub max_rounds: usize,
    pub seed: u64,
}

impl AugmentConfig {
    pub fn full(kind: Provenance, seed: u64) -> Self {
        Self {
            kind,
            total_size: 200_000,
            empirical_count: 40_000,
            std_scale: 1.0 / 3.0,
            emp_mode: EmpMode::Repeat,
            val_count: 5_000,
            n_components: DEFAULT_COMPONENTS,
            em: EmConfig {
                seed: seeds::derive_seed(seed, "fit-parent"),
                ..EmConfig::default()
            },
            dynamics: DynamicsConfig::full(seeds::derive_seed(seed, "fit-dynamics")),
            kde_bandwidth: 0.05,
            priority: PriorityTarget {
                center: vec![0.95, 0.95],
                width: 0.25,
            },
            max_rounds: 50,
            seed,
        }
    }

    /// Same dataset sizes with reduced model budgets.
    pub fn desk(kind: Provenance, seed: u64) -> Self {
        let mut c = Self::full(kind, seed);
        c.em.max_iters = 100;
        c.em.tol = 1e-5;
        c.dynamics = DynamicsConfig::desk(c.dynamics.seed);
        c
    }

    fn validate(&self) -> Result<()> {
        if !(self.std_scale >= 0.0) {
            return Err(Error::InvalidArgument("std_scale must be nonnegative".into()));
        }
        if self.total_size < self.empirical_count {
            return Err(Error::InvalidArgument(format!(
                "total size {} is below the empirical count {}",
                self.total_size, self.empirical_count
            )));
        }
        if !(self.kde_bandwidth > 0.0) {
            return Err(Error::InvalidArgument("kde bandwidth must be positive".into()));
        }
        Ok(())
    }
}

/// Frozen models shared by every parent distribution of one seed.
#[derive(Debug, Clone)]
pub struct FittedModels {
    pub parents: ParentModel,
    /// Locally factored ensemble used for generation.
    pub ensemble: DynamicsEnsemble<f64>,
    /// Empty for models loaded from disk.
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentManifest {
    pub config: AugmentConfig,
    /// Output layout in order: a run of each provenance and its length.
    pub segments: Vec<(Provenance, usize)>,
    pub counts: BTreeMap<Provenance, usize>,
    pub ensemble_hash: Option<String>,
    pub data_hash: String,
    /// Non-fatal shortfalls, e.g. a reweighting that ran out of rounds.
    pub warnings: Vec<String>,
    /// Excluded from `manifest_hash`.
    pub wall_time_s: f64,
}

impl AugmentManifest {
    /// SHA-256 of the manifest with the wall time zeroed.
    pub fn manifest_hash(&self) -> Result<String> {
        let stable = Self {
            wall_time_s: 0.0,
            ..self.clone()
        };
        Ok(hex_sha256(&serde_json::to_vec(&stable)?))
    }
}

#[derive(Debug, Clone)]
pub struct AugmentedDataset {
    pub dataset: Dataset,
    pub manifest: AugmentManifest,
}

impl AugmentedDataset {
    /// Provenance of every transition, in dataset order.
    pub fn provenance(&self) -> Vec<Provenance> {
        self.manifest
            .segments
            .iter()
            .flat_map(|(p, n)| std::iter::repeat_n(*p, *n))
            .collect()
    }

    /// Writes `transitions.bin` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.dataset.save(&dir.join("transitions.bin"))?;
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_vec_pretty(&self.manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.json");
        if !mpath.exists() {
            return Err(Error::MissingArtifact {
                path: mpath.display().to_string(),
                stage: "augment",
            });
        }
        let manifest: AugmentManifest = serde_json::from_slice(&std::fs::read(&mpath)?)?;
        let dataset = Dataset::load(&dir.join("transitions.bin"))?;
        let expected: usize = manifest.segments.iter().map(|(_, n)| n).sum();
        if expected != dataset.len() {
            return Err(Error::Format(format!(
                "manifest lists {expected} transitions, file has {}",
                dataset.len()
            )));
        }
        Ok(Self { dataset, manifest })
    }
}

fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn dataset_hash(ds: &Dataset) -> Result<String> {
    let mut buf = Vec::new();
    write_binary_to(&mut buf, ds)?;
    Ok(hex_sha256(&buf))
}

/// Overwrites `(r, done)` of every transition from the task reward.
pub fn label_rewards(transitions: &mut [Transition], task: &dyn Task) {
    for t in transitions {
        let (r, done) = task.reward(&t.s, &t.a, &t.s_next);
        t.r = r;
        t.done = done;
    }
}

/// Fits the parent mixtures on all logged data and the locally factored
/// ensemble on a train/validation split of it.
pub fn fit_models(
    dataset: &Dataset,
    parent_sets: &[ParentSetSpec],
    task: &dyn Task,
    config: &AugmentConfig,
) -> Result<FittedModels> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot augment an empty dataset".into()));
    }
    let parents = fit_parent_gmms(dataset, parent_sets, config.n_components, &config.em)?;
    let mut ensemble = DynamicsEnsemble::build(
        Architecture::LocalFactored,
        dataset.state_dim,
        dataset.action_dim,
        parent_sets,
        config.dynamics.clone(),
    )?;
    let history = ensemble.fit(dataset, config.val_count, task)?;
    Ok(FittedModels {
        parents,
        ensemble,
        history,
    })
}

/// Draws `n` state-action pairs from the parent distribution `kind`.
/// Returns the samples and any shortfall warning.
pub fn sample_parents(
    kind: Provenance,
    dataset: &Dataset,
    models: &FittedModels,
    task: &dyn Task,
    config: &AugmentConfig,
    n: usize,
) -> Result<(Vec<SaSample>, Option<String>)> {
    let bounds = task.bounds();
    let mut rng = seeds::stream(config.seed, &format!("augment-parents-{kind}"));
    let baseline = |b: BaselineKind, rng: &mut seeds::StreamRng| {
        let dyna = DynaSource::Learned {
            ensemble: &models.ensemble,
            mask_fn: task,
            std_scale: config.std_scale,
        };
        baseline_samples(b, dataset, Some(dyna), &bounds, n, rng)
    };
    match kind {
        Provenance::Emp => Ok((baseline(BaselineKind::Emp, &mut rng)?, None)),
        Provenance::Rand => Ok((baseline(BaselineKind::Rand, &mut rng)?, None)),
        Provenance::Dyna => Ok((baseline(BaselineKind::Dyna, &mut rng)?, None)),
        Provenance::Mocoda => Ok((sample_mocoda(&models.parents, n, &mut rng, false, Some(&bounds))?, None)),
        Provenance::MocodaU | Provenance::MocodaP => {
            let mut out = Vec::with_capacity(n);
            for _ in 0..config.max_rounds {
                let need = n - out.len();
                let proposals = sample_mocoda(&models.parents, (4 * need).max(10_000), &mut rng, false, Some(&bounds))?;
                let kept = if kind == Provenance::MocodaU {
                    reweight_uniform(&proposals, &state_features, config.kde_bandwidth, need, &mut rng)?
                } else {
                    let target = |f: &[f64]| config.priority.density(f);
                    reweight_priority(&proposals, &state_features, &target, config.kde_bandwidth, need, &mut rng)?
                };
                out.extend(kept.into_iter().take(need));
                if out.len() == n {
                    return Ok((out, None));
                }
            }
            let msg = format!("{kind}: {} of {n} samples after {} rounds", out.len(), config.max_rounds);
            log::warn!("{msg}");
            Ok((out, Some(msg)))
        }
        Provenance::Coda => Err(Error::InvalidArgument(
            "the component swap produces transitions, not parent samples".into(),
        )),
    }
}

/// Pushes `samples` through the ensemble, clips next states to the state
/// box and labels rewards.
pub fn apply_dynamics(
    samples: &[SaSample],
    ensemble: &DynamicsEnsemble<f64>,
    task: &dyn Task,
    std_scale: f64,
    seed: u64,
) -> Result<Vec<Transition>> {
    let sd = ensemble.state_dim();
    let bounds = task.bounds();
    let state_box = SaBox::new(bounds.low[..sd].to_vec(), bounds.high[..sd].to_vec())?;
    let sa: Vec<Vec<f64>> = samples.iter().map(|s| s.state_action()).collect();
    let masks: Vec<_> = sa.iter().map(|r| task.mask(r)).collect();
    let mut rng = seeds::stream(seed, "augment-next");
    let next = ensemble.sample_next_batch(&sa, &masks, std_scale, &mut rng)?;
    let mut out: Vec<Transition> = samples
        .iter()
        .zip(next.rows())
        .map(|(s, row)| {
            let mut s2 = row.to_vec();
            state_box.clip(&mut s2);
            Transition::new(s.s.clone(), s.a.clone(), s2, 0.0, false)
        })
        .collect();
    label_rewards(&mut out, task);
    Ok(out)
}

/// Generated transitions of `config.kind` (without the empirical share).
pub fn generate_transitions(
    dataset: &Dataset,
    parent_sets: &[ParentSetSpec],
    models: Option<&FittedModels>,
    task: &dyn Task,
    config: &AugmentConfig,
    n: usize,
) -> Result<(Vec<Transition>, Option<String>)> {
    let need_models = || {
        models.ok_or_else(|| Error::InvalidArgument(format!("{} needs fitted models", config.kind)))
    };
    match (config.kind, config.emp_mode) {
        (Provenance::Emp, EmpMode::Repeat) => {
            if dataset.is_empty() {
                return Err(Error::InvalidArgument("empirical baseline needs data".into()));
            }
            let mut out: Vec<Transition> = Vec::with_capacity(n);
            for _ in 0..n / dataset.len() {
                out.extend(dataset.transitions.iter().cloned());
            }
            let mut rng = seeds::stream(config.seed, "augment-parents-emp");
            let rest = dataset.transitions.choose_multiple(&mut rng, n - out.len());
            out.extend(rest.cloned());
            label_rewards(&mut out, task);
            Ok((out, None))
        }
        (Provenance::Coda, _) => {
            let mut rng = seeds::stream(config.seed, "augment-coda");
            let base = AdjacencyMask::from_parent_sets(parent_sets, dataset.sa_dim())?;
            let mut out = coda_swap(dataset, task, &base, n, &mut rng)?;
            label_rewards(&mut out, task);
            let warn = (out.len() < n).then(|| format!("coda: {} of {n} transitions", out.len()));
            Ok((out, warn))
        }
        (kind, _) => {
            let m = need_models()?;
            let (samples, warn) = sample_parents(kind, dataset, m, task, config, n)?;
            let out = apply_dynamics(&samples, &m.ensemble, task, config.std_scale, config.seed)?;
            Ok((out, warn))
        }
    }
}

/// Generated share followed by the empirical share, with a manifest.
/// `models` may be `None` for repeated `Emp` and for the component swap.
pub fn assemble(
    dataset: &Dataset,
    parent_sets: &[ParentSetSpec],
    models: Option<&FittedModels>,
    task: &dyn Task,
    config: &AugmentConfig,
) -> Result<AugmentedDataset> {
    config.validate()?;
    let start = Instant::now();
    let emp_count = config.empirical_count.min(dataset.len());
    let n_gen = config.total_size - emp_count;
    let (mut transitions, warn) = generate_transitions(dataset, parent_sets, models, task, config, n_gen)?;
    let gen_kind = match (config.kind, config.emp_mode) {
        (Provenance::Emp, EmpMode::Repeat) => Provenance::Emp,
        (k, _) => k,
    };
    let n_generated = transitions.len();
    let mut emp: Vec<Transition> = dataset.transitions[..emp_count].to_vec();
    label_rewards(&mut emp, task);
    transitions.extend(emp);
    let mut segments = vec![(gen_kind, n_generated)];
    if gen_kind == Provenance::Emp {
        segments[0].1 += emp_count;
    } else {
        segments.push((Provenance::Emp, emp_count));
    }
    let mut counts = BTreeMap::new();
    for (p, n) in &segments {
        *counts.entry(*p).or_insert(0) += *n;
    }
    let dataset = Dataset::from_transitions(dataset.state_dim, dataset.action_dim, transitions)?;
    let manifest = AugmentManifest {
        config: config.clone(),
        segments,
        counts,
        ensemble_hash: models.map(|m| m.ensemble.content_hash()).transpose()?,
        data_hash: dataset_hash(&dataset)?,
        warnings: warn.into_iter().collect(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(AugmentedDataset { dataset, manifest })
}

/// Fits models, then builds the augmented dataset for `config.kind`.
pub fn generate_mocoda_data(
    dataset: &Dataset,
    parent_sets: &[ParentSetSpec],
    task: &dyn Task,
    config: &AugmentConfig,
) -> Result<AugmentedDataset> {
    config.validate()?;
    let start = Instant::now();
    let model_free = config.kind == Provenance::Coda
        || (config.kind == Provenance::Emp && config.emp_mode == EmpMode::Repeat);
    let models = if model_free {
        None
    } else {
        Some(fit_models(dataset, parent_sets, task, config)?)
    };
    let mut out = assemble(dataset, parent_sets, models.as_ref(), task, config)?;
    out.manifest.wall_time_s = start.elapsed().as_secs_f64();
    Ok(out)
}
