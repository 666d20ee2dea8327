//! Command-line front end: one subcommand per pipeline stage plus the
//! table presets.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mocoda_core::augment::{assemble, AugmentedDataset};
use mocoda_core::data::Provenance;
use mocoda_core::dynamics::{Architecture, DynamicsEnsemble};
use mocoda_core::env::NavEnv;
use mocoda_core::experiment::{
    collect, eval_samples, export_dist, fit_on_shared_split, run_experiment, write_output, AgentKind, ExperimentConfig,
    Preset, Scale, Workspace,
};
use mocoda_core::parent_sampler::fit_parent_gmms;
use mocoda_core::rl::{bc_train, evaluate, td3bc_train, Agent};

#[derive(Parser, Debug)]
#[command(name = "mocoda", version, about = "Counterfactual data augmentation for offline RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment config; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single seed; replaces the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long, global = true, value_enum, default_value = "local")]
    arch: ArchArg,
    #[arg(long, global = true, value_enum, default_value = "mocoda")]
    dist: DistArg,
    #[arg(long, global = true, value_enum, default_value = "td3bc")]
    agent: AgentArg,
    /// Reduced model and agent budgets.
    #[arg(long, global = true)]
    desk_scale: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Log scripted trajectories.
    Collect,
    /// Fit the per-parent-set mixtures.
    FitParent,
    /// Train a dynamics ensemble of `--arch`.
    FitDynamics,
    /// Score `--arch` on samples from `--dist`.
    EvalModel,
    /// Build the augmented dataset for `--dist`.
    Augment,
    /// Train `--agent` on the augmented dataset for `--dist`.
    TrainRl,
    /// Re-evaluate a trained agent.
    EvalAgent,
    /// Model error of every architecture on every distribution.
    Table1,
    /// Offline RL on every augmented dataset.
    Table2,
    /// Plot-ready transition arrows for `--dist`.
    ExportDist,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Table1,
    Table2,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ArchArg {
    Unfactored,
    Global,
    Local,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum DistArg {
    Emp,
    Rand,
    Dyna,
    Mocoda,
    MocodaU,
    MocodaP,
    Coda,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AgentArg {
    Td3bc,
    Bc,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Unfactored => Architecture::Unfactored,
            ArchArg::Global => Architecture::GlobalFactored,
            ArchArg::Local => Architecture::LocalFactored,
        }
    }
}

impl From<DistArg> for Provenance {
    fn from(d: DistArg) -> Self {
        match d {
            DistArg::Emp => Provenance::Emp,
            DistArg::Rand => Provenance::Rand,
            DistArg::Dyna => Provenance::Dyna,
            DistArg::Mocoda => Provenance::Mocoda,
            DistArg::MocodaU => Provenance::MocodaU,
            DistArg::MocodaP => Provenance::MocodaP,
            DistArg::Coda => Provenance::Coda,
        }
    }
}

impl From<AgentArg> for AgentKind {
    fn from(a: AgentArg) -> Self {
        match a {
            AgentArg::Td3bc => AgentKind::Td3Bc,
            AgentArg::Bc => AgentKind::Bc,
        }
    }
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Table1 => Preset::Table1,
            PresetArg::Table2 => Preset::Table2,
        }
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => ExperimentConfig::for_scale(Scale::Full),
    };
    if c.desk_scale {
        let desk = ExperimentConfig::for_scale(Scale::Desk);
        cfg.scale = Scale::Desk;
        cfg.augment.em = desk.augment.em;
        cfg.augment.dynamics = desk.augment.dynamics;
        cfg.rl = desk.rl;
    }
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if cfg.seeds.is_empty() {
        bail!("the config lists no seeds");
    }
    Ok(cfg)
}

fn json_out<T: serde::Serialize>(path: &Path, value: &T, cfg: &ExperimentConfig, seed: u64) -> Result<()> {
    write_output(path, &serde_json::to_vec_pretty(value)?, cfg, &[seed])?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let seed = cfg.seeds[0];
    let ws = Workspace::new(&cli.common.out);
    let env = cfg.env();
    let arch: Architecture = cli.common.arch.into();
    let dist: Provenance = cli.common.dist.into();
    let agent: AgentKind = cli.common.agent.into();
    let parent_sets = NavEnv::base_parent_sets();
    match cli.command {
        Command::Collect => {
            let data = collect(&cfg, seed);
            std::fs::create_dir_all(&ws.root)?;
            data.save(&ws.data())?;
            println!("wrote {} ({} transitions)", ws.data().display(), data.len());
        }
        Command::FitParent => {
            let data = ws.load_data()?;
            let a = cfg.augment_for(Provenance::Mocoda, seed);
            let parents = fit_parent_gmms(&data, &parent_sets, a.n_components, &a.em)?;
            parents.save_json(&ws.parents())?;
            println!("wrote {}", ws.parents().display());
        }
        Command::FitDynamics => {
            let data = ws.load_data()?;
            let a = cfg.augment_for(Provenance::Mocoda, seed);
            let (ens, history) = if arch == Architecture::LocalFactored {
                // the generator's own training path, so later stages reuse it
                fit_local(&data, &env, &a)?
            } else {
                (fit_on_shared_split(&cfg, seed, &data, arch)?, Default::default())
            };
            ens.save(&ws.dynamics(arch), Some(&history))?;
            println!("wrote {}", ws.dynamics(arch).display());
        }
        Command::EvalModel => {
            let art = ws.load_artifacts(seed)?;
            let ens = DynamicsEnsemble::<f64>::load(&ws.dynamics(arch))?;
            let samples = eval_samples(&cfg, &art, dist)?;
            let report = ens.eval_mse(&samples, &env)?;
            let path = ws.root.join(format!("eval_{}_{dist}.json", arch.as_str()));
            json_out(&path, &report, &cfg, seed)?;
            println!("{} on {}: mse x1e2 = {:.3}", arch.label(), dist.label(), report.mse_e2);
        }
        Command::Augment => {
            let a = cfg.augment_for(dist, seed);
            let out = if dist == Provenance::Coda || dist == Provenance::Emp {
                assemble(&ws.load_data()?, &parent_sets, None, &env, &a)?
            } else {
                let art = ws.load_artifacts(seed)?;
                assemble(&art.data, &parent_sets, Some(&art.models), &env, &a)?
            };
            out.save(&ws.augmented(dist))?;
            println!("wrote {} {:?}", ws.augmented(dist).display(), out.manifest.counts);
        }
        Command::TrainRl => {
            let aug = AugmentedDataset::load(&ws.augmented(dist))?;
            let rl = cfg.rl_for(agent, dist, seed);
            let out = match agent {
                AgentKind::Td3Bc => td3bc_train(&aug.dataset, &env, &rl)?,
                AgentKind::Bc => bc_train(&aug.dataset, &env, &rl)?,
            };
            let dir = ws.agent(agent, dist);
            out.agent.save(&dir)?;
            write_output(&dir.join("train.csv"), out.to_csv().as_bytes(), &cfg, &[seed])?;
            json_out(&dir.join("eval_report.json"), &out.report, &cfg, seed)?;
            println!("{} on {}: final-window steps {:.1}", agent.label(), dist.label(), out.report.final_window_avg());
        }
        Command::EvalAgent => {
            let a = Agent::load(&ws.agent(agent, dist))?;
            let entry = evaluate(&a, &env, a.config.eval_episodes, env.config.max_steps, a.config.seed)?;
            let path = ws.root.join(format!("eval_agent_{}_{dist}.json", agent.slug()));
            json_out(&path, &entry, &cfg, seed)?;
            println!("{} on {}: {:.1} steps, success {:.2}", agent.label(), dist.label(), entry.avg_steps, entry.success_rate);
        }
        Command::Table1 | Command::Table2 => {
            let preset = match (cli.command, cli.common.preset) {
                (_, Some(p)) => p.into(),
                (Command::Table1, None) => Preset::Table1,
                _ => Preset::Table2,
            };
            let report = run_experiment(&cfg, &[preset], &ws.root)?;
            let text = match preset {
                Preset::Table1 => mocoda_core::experiment::table1_csv(&cfg, &report.table1),
                Preset::Table2 => mocoda_core::experiment::table2_csv(&cfg, &report.table2),
            };
            print!("{text}");
        }
        Command::ExportDist => {
            let art = ws.load_artifacts(seed)?;
            let e = export_dist(&cfg, &art, dist)?;
            json_out(&ws.root.join(format!("quiver_{dist}.json")), &e, &cfg, seed)?;
        }
    }
    Ok(())
}

/// Trains only the locally factored ensemble, exactly as the generator does.
fn fit_local(
    data: &mocoda_core::data::Dataset,
    env: &NavEnv,
    a: &mocoda_core::augment::AugmentConfig,
) -> Result<(DynamicsEnsemble<f64>, mocoda_core::dynamics::TrainHistory)> {
    let mut ens = DynamicsEnsemble::build(
        Architecture::LocalFactored,
        data.state_dim,
        data.action_dim,
        &NavEnv::base_parent_sets(),
        a.dynamics.clone(),
    )?;
    let history = ens.fit(data, a.val_count, env)?;
    Ok((ens, history))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
