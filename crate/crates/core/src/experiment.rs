//! Experiment orchestration: per-seed pipelines for the model-error and
//! offline-RL tables, aggregation across seeds, distribution exports and
//! output manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{assemble, fit_models, sample_parents, AugmentConfig, FittedModels};
use crate::data::{Dataset, Provenance, SaSample};
use crate::dynamics::{Architecture, DynamicsEnsemble};
use crate::env::{NavConfig, NavEnv, Simulator};
use crate::error::{Error, Result};
use crate::rl::{bc_train, td3bc_train, Td3BcConfig, TrainOutcome};
use crate::seeds;

/// Compute budget. `Desk` shrinks network widths and training lengths so a
/// single core finishes in minutes; dataset sizes are unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    /// `MOCODA_SCALE=full` selects `Full`; anything else is `Desk`.
    pub fn from_env() -> Self {
        match std::env::var("MOCODA_SCALE").as_deref() {
            Ok("full") => Scale::Full,
            _ => Scale::Desk,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Td3Bc,
    Bc,
}

impl AgentKind {
    pub fn label(self) -> &'static str {
        match self {
            AgentKind::Td3Bc => "TD3-BC",
            AgentKind::Bc => "BC",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub scale: Scale,
    pub nav: NavConfig,
    /// Logged transitions per trajectory family.
    pub n_per_kind: usize,
    /// Template for every augmented dataset; `kind` and `seed` are set per
    /// run.
    pub augment: AugmentConfig,
    pub rl: Td3BcConfig,
    pub table1_archs: Vec<Architecture>,
    pub table1_dists: Vec<Provenance>,
    /// Parent samples per distribution used to score the models.
    pub eval_samples: usize,
    pub table2_dists: Vec<Provenance>,
    pub table2_agents: Vec<AgentKind>,
    /// Transitions per distribution in the quiver exports.
    pub export_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_scale(Scale::from_env())
    }
}

impl ExperimentConfig {
    pub fn for_scale(scale: Scale) -> Self {
        let (augment, rl) = match scale {
            Scale::Desk => (AugmentConfig::desk(Provenance::Mocoda, 0), Td3BcConfig::desk(0)),
            Scale::Full => (AugmentConfig::full(Provenance::Mocoda, 0), Td3BcConfig::full(0)),
        };
        Self {
            seeds: vec![0, 1, 2],
            scale,
            nav: NavConfig::default(),
            n_per_kind: 20_000,
            augment,
            rl,
            table1_archs: Architecture::ALL.to_vec(),
            table1_dists: vec![
                Provenance::Emp,
                Provenance::Dyna,
                Provenance::Rand,
                Provenance::Mocoda,
                Provenance::MocodaU,
            ],
            eval_samples: 10_000,
            table2_dists: vec![
                Provenance::Emp,
                Provenance::Rand,
                Provenance::Mocoda,
                Provenance::MocodaU,
                Provenance::Coda,
            ],
            table2_agents: vec![AgentKind::Td3Bc, AgentKind::Bc],
            export_samples: 2_000,
        }
    }

    pub fn env(&self) -> NavEnv {
        NavEnv::new(self.nav.clone())
    }

    /// Augmentation settings for one seed and distribution.
    pub fn augment_for(&self, kind: Provenance, seed: u64) -> AugmentConfig {
        let mut c = self.augment.clone();
        c.kind = kind;
        c.seed = seed;
        c.em.seed = seeds::derive_seed(seed, "fit-parent");
        c.dynamics.seed = seeds::derive_seed(seed, "fit-dynamics");
        c
    }

    pub fn rl_for(&self, agent: AgentKind, dist: Provenance, seed: u64) -> Td3BcConfig {
        Td3BcConfig {
            seed: seeds::derive_seed(seed, &format!("train-rl-{}-{dist}", agent.label())),
            ..self.rl.clone()
        }
    }

    /// SHA-256 of the serialized config.
    pub fn hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(serde_json::to_vec(self)?)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Logged data for one seed.
pub fn collect(config: &ExperimentConfig, seed: u64) -> Dataset {
    let mut rng = seeds::stream(seed, "collect");
    config.env().collect_empirical(config.n_per_kind, &mut rng)
}

/// Everything a seed's tables share: logged data and the fitted parent and
/// locally factored models.
#[derive(Debug, Clone)]
pub struct SeedArtifacts {
    pub seed: u64,
    pub data: Dataset,
    pub models: FittedModels,
}

pub fn prepare_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedArtifacts> {
    let env = config.env();
    let data = collect(config, seed);
    let cfg = config.augment_for(Provenance::Mocoda, seed);
    let models = fit_models(&data, &NavEnv::base_parent_sets(), &env, &cfg)?;
    Ok(SeedArtifacts { seed, data, models })
}

/// Trains an ensemble of `arch` on the same train/validation split the
/// generator used.
pub fn fit_architecture(
    config: &ExperimentConfig,
    art: &SeedArtifacts,
    arch: Architecture,
) -> Result<DynamicsEnsemble<f64>> {
    if arch == Architecture::LocalFactored {
        return Ok(art.models.ensemble.clone());
    }
    fit_on_shared_split(config, art.seed, &art.data, arch)
}

/// Trains `arch` from scratch on the same train/validation split the
/// generator's ensemble used.
pub fn fit_on_shared_split(
    config: &ExperimentConfig,
    seed: u64,
    data: &Dataset,
    arch: Architecture,
) -> Result<DynamicsEnsemble<f64>> {
    let cfg = config.augment_for(Provenance::Mocoda, seed);
    let mut split_rng = seeds::stream(cfg.dynamics.seed, "dynamics-split");
    let (train, val) = data.split(cfg.val_count, &mut split_rng);
    let mut dyn_cfg = cfg.dynamics.clone();
    dyn_cfg.seed = seeds::derive_seed(seed, &format!("fit-dynamics-{}", arch.as_str()));
    let mut ens = DynamicsEnsemble::build(
        arch,
        data.state_dim,
        data.action_dim,
        &NavEnv::base_parent_sets(),
        dyn_cfg,
    )?;
    ens.train(&train, &val, &config.env())?;
    Ok(ens)
}

/// Parent samples used to score models on `dist`.
pub fn eval_samples(config: &ExperimentConfig, art: &SeedArtifacts, dist: Provenance) -> Result<Vec<SaSample>> {
    let cfg = config.augment_for(dist, seeds::derive_seed(art.seed, "eval-model"));
    let (s, _) = sample_parents(dist, &art.data, &art.models, &config.env(), &cfg, config.eval_samples)?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Cell {
    pub seed: u64,
    pub arch: Architecture,
    pub dist: Provenance,
    pub mse: f64,
}

/// Model error of every configured architecture on every configured
/// parent distribution for one seed.
pub fn table1_seed(config: &ExperimentConfig, art: &SeedArtifacts) -> Result<Vec<Table1Cell>> {
    let env = config.env();
    let samples: Vec<(Provenance, Vec<SaSample>)> = config
        .table1_dists
        .iter()
        .map(|&d| Ok((d, eval_samples(config, art, d)?)))
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for &arch in &config.table1_archs {
        let ens = fit_architecture(config, art, arch)?;
        for (dist, s) in &samples {
            let r = ens.eval_mse(s, &env as &dyn Simulator)?;
            log::info!("seed {} {} on {}: mse {:.5}", art.seed, arch.as_str(), dist, r.mse);
            cells.push(Table1Cell {
                seed: art.seed,
                arch,
                dist: *dist,
                mse: r.mse,
            });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Cell {
    pub seed: u64,
    pub agent: AgentKind,
    pub dist: Provenance,
    /// Final-window average steps to completion.
    pub steps: f64,
}

/// Trains `agent` on the augmented dataset for `dist`.
pub fn train_on(
    config: &ExperimentConfig,
    art: &SeedArtifacts,
    dist: Provenance,
    agent: AgentKind,
) -> Result<TrainOutcome> {
    let env = config.env();
    let aug = assemble(
        &art.data,
        &NavEnv::base_parent_sets(),
        Some(&art.models),
        &env,
        &config.augment_for(dist, art.seed),
    )?;
    let rl = config.rl_for(agent, dist, art.seed);
    match agent {
        AgentKind::Td3Bc => td3bc_train(&aug.dataset, &env, &rl),
        AgentKind::Bc => bc_train(&aug.dataset, &env, &rl),
    }
}

pub fn table2_seed(config: &ExperimentConfig, art: &SeedArtifacts) -> Result<Vec<Table2Cell>> {
    let mut cells = Vec::new();
    for &agent in &config.table2_agents {
        for &dist in &config.table2_dists {
            let out = train_on(config, art, dist, agent)?;
            let steps = out.report.final_window_avg();
            log::info!("seed {} {} on {}: {:.1} steps", art.seed, agent.label(), dist, steps);
            cells.push(Table2Cell {
                seed: art.seed,
                agent,
                dist,
                steps,
            });
        }
    }
    Ok(cells)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Rows by columns of `mean ± std` cells, values scaled by `scale`.
fn pivot_csv<R: Ord + Copy, C: Ord + Copy>(
    corner: &str,
    rows: &[R],
    cols: &[C],
    row_label: impl Fn(R) -> String,
    col_label: impl Fn(C) -> String,
    values: &BTreeMap<(R, C), Vec<f64>>,
    scale: f64,
    precision: usize,
) -> String {
    let mut out = String::from(corner);
    for &c in cols {
        out.push(',');
        out.push_str(&col_label(c));
    }
    out.push('\n');
    for &r in rows {
        out.push_str(&row_label(r));
        for &c in cols {
            let v: Vec<f64> = values.get(&(r, c)).map_or(vec![], |v| v.iter().map(|x| x * scale).collect());
            if v.is_empty() {
                out.push_str(",");
            } else {
                let (m, s) = mean_std(&v);
                let _ = write!(out, ",{m:.precision$} ± {s:.precision$}");
            }
        }
        out.push('\n');
    }
    out
}

/// Aggregated model-error table, MSE in units of `1e-2`.
pub fn table1_csv(config: &ExperimentConfig, cells: &[Table1Cell]) -> String {
    let mut values: BTreeMap<(Architecture, Provenance), Vec<f64>> = BTreeMap::new();
    for c in cells {
        values.entry((c.arch, c.dist)).or_default().push(c.mse);
    }
    pivot_csv(
        "model",
        &config.table1_archs,
        &config.table1_dists,
        |a| a.label().to_string(),
        |d| d.label().to_string(),
        &values,
        1e2,
        // four places: nav errors sit well below 1e-2 at a 0.05 step
        4,
    )
}

pub fn table1_seeds_csv(cells: &[Table1Cell]) -> String {
    let mut out = String::from("seed,model,dist,mse\n");
    for c in cells {
        let _ = writeln!(out, "{},{},{},{}", c.seed, c.arch.as_str(), c.dist, c.mse);
    }
    out
}

pub fn table2_csv(config: &ExperimentConfig, cells: &[Table2Cell]) -> String {
    let mut values: BTreeMap<(AgentKind, Provenance), Vec<f64>> = BTreeMap::new();
    for c in cells {
        values.entry((c.agent, c.dist)).or_default().push(c.steps);
    }
    pivot_csv(
        "agent",
        &config.table2_agents,
        &config.table2_dists,
        |a| a.label().to_string(),
        |d| d.label().to_string(),
        &values,
        1.0,
        1,
    )
}

pub fn table2_seeds_csv(cells: &[Table2Cell]) -> String {
    let mut out = String::from("seed,agent,dist,steps\n");
    for c in cells {
        let _ = writeln!(out, "{},{},{},{}", c.seed, c.agent.label(), c.dist, c.steps);
    }
    out
}

/// Plot-ready `(s, s' - s)` arrows for one distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuiverExport {
    pub dist: Provenance,
    pub seed: u64,
    pub s: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
}

pub fn export_dist(config: &ExperimentConfig, art: &SeedArtifacts, dist: Provenance) -> Result<QuiverExport> {
    let mut cfg = config.augment_for(dist, seeds::derive_seed(art.seed, "export-dist"));
    cfg.empirical_count = 0;
    cfg.total_size = config.export_samples;
    let aug = assemble(&art.data, &NavEnv::base_parent_sets(), Some(&art.models), &config.env(), &cfg)?;
    let ts = &aug.dataset.transitions;
    Ok(QuiverExport {
        dist,
        seed: art.seed,
        s: ts.iter().map(|t| t.s.clone()).collect(),
        a: ts.iter().map(|t| t.a.clone()).collect(),
        delta: ts
            .iter()
            .map(|t| t.s_next.iter().zip(&t.s).map(|(b, a)| b - a).collect())
            .collect(),
    })
}

/// Provenance record written next to every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputManifest {
    pub file: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub version: String,
    pub git: String,
    pub content_sha256: String,
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Writes `path` and `path.manifest.json`.
pub fn write_output(path: &Path, bytes: &[u8], config: &ExperimentConfig, seeds: &[u64]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)?;
    let m = OutputManifest {
        file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        config_hash: config.hash()?,
        seeds: seeds.to_vec(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        git: git_describe(),
        content_sha256: hex(&Sha256::digest(bytes)),
    };
    let mut mpath = path.as_os_str().to_owned();
    mpath.push(".manifest.json");
    std::fs::write(PathBuf::from(mpath), serde_json::to_vec_pretty(&m)?)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Table1,
    Table2,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Preset::Table1),
            "table2" => Ok(Preset::Table2),
            other => Err(Error::InvalidArgument(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentReport {
    pub table1: Vec<Table1Cell>,
    pub table2: Vec<Table2Cell>,
}

/// Runs the presets for every seed (seeds in parallel) and writes the
/// per-seed and aggregated tables plus quiver exports under `out`.
pub fn run_experiment(config: &ExperimentConfig, presets: &[Preset], out: &Path) -> Result<ExperimentReport> {
    let per_seed: Vec<(ExperimentReport, Vec<QuiverExport>)> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let art = prepare_seed(config, seed)?;
            let mut r = ExperimentReport::default();
            if presets.contains(&Preset::Table1) {
                r.table1 = table1_seed(config, &art)?;
            }
            if presets.contains(&Preset::Table2) {
                r.table2 = table2_seed(config, &art)?;
            }
            let mut dists: Vec<Provenance> = config.table1_dists.clone();
            dists.extend(&config.table2_dists);
            dists.sort();
            dists.dedup();
            let exports = dists
                .into_iter()
                .map(|d| export_dist(config, &art, d))
                .collect::<Result<_>>()?;
            Ok((r, exports))
        })
        .collect::<Result<_>>()?;
    let mut report = ExperimentReport::default();
    for (r, exports) in per_seed {
        report.table1.extend(r.table1);
        report.table2.extend(r.table2);
        for e in exports {
            let path = out.join(format!("seed_{}", e.seed)).join(format!("quiver_{}.json", e.dist));
            write_output(&path, &serde_json::to_vec(&e)?, config, &[e.seed])?;
        }
    }
    let seeds = &config.seeds;
    if presets.contains(&Preset::Table1) {
        write_output(&out.join("table1.csv"), table1_csv(config, &report.table1).as_bytes(), config, seeds)?;
        write_output(&out.join("table1_seeds.csv"), table1_seeds_csv(&report.table1).as_bytes(), config, seeds)?;
    }
    if presets.contains(&Preset::Table2) {
        write_output(&out.join("table2.csv"), table2_csv(config, &report.table2).as_bytes(), config, seeds)?;
        write_output(&out.join("table2_seeds.csv"), table2_seeds_csv(&report.table2).as_bytes(), config, seeds)?;
    }
    Ok(report)
}

/// Artifact layout of the single-stage commands under one output directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data.bin")
    }

    pub fn parents(&self) -> PathBuf {
        self.root.join("parents.json")
    }

    pub fn dynamics(&self, arch: Architecture) -> PathBuf {
        self.root.join(format!("dynamics_{}", arch.as_str()))
    }

    pub fn augmented(&self, dist: Provenance) -> PathBuf {
        self.root.join(format!("augmented_{dist}"))
    }

    pub fn agent(&self, agent: AgentKind, dist: Provenance) -> PathBuf {
        self.root.join(format!("agent_{}_{dist}", agent.slug()))
    }

    pub fn load_data(&self) -> Result<Dataset> {
        let p = self.data();
        if !p.exists() {
            return Err(Error::MissingArtifact {
                path: p.display().to_string(),
                stage: "collect",
            });
        }
        Dataset::load(&p)
    }

    /// Logged data with the parent model and the locally factored ensemble.
    pub fn load_artifacts(&self, seed: u64) -> Result<SeedArtifacts> {
        let data = self.load_data()?;
        let parents = crate::parent_sampler::ParentModel::load_json(&self.parents())?;
        let ensemble = DynamicsEnsemble::load(&self.dynamics(Architecture::LocalFactored))?;
        Ok(SeedArtifacts {
            seed,
            data,
            models: FittedModels {
                parents,
                ensemble,
                history: Default::default(),
            },
        })
    }
}

impl AgentKind {
    pub fn slug(self) -> &'static str {
        match self {
            AgentKind::Td3Bc => "td3bc",
            AgentKind::Bc => "bc",
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "td3bc" => Ok(AgentKind::Td3Bc),
            "bc" => Ok(AgentKind::Bc),
            other => Err(Error::InvalidArgument(format!("unknown agent `{other}`"))),
        }
    }
}
