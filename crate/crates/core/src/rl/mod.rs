//! Offline actor-critic with a behavior-cloning regularizer (TD3-BC), a
//! pure behavior-cloning baseline, and deterministic policy evaluation.

mod eval;

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::env::{Episodic, SaBox};
use crate::error::{Error, Result};
use crate::nets::{Adam, AdamConfig, FeedForwardNet};
use crate::seeds;

pub use eval::{evaluate, policy_act, EvalEntry, EvalReport};

/// Value range of `-1` per step under a 0.98 discount: `-1 / (1 - 0.98)`.
pub const TARGET_CLIP: (f64, f64) = (-50.0, 0.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Td3BcConfig {
    pub batches: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Weight of the value term relative to the cloning term.
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: usize,
    /// Target smoothing noise, in units of the action half-range.
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub target_clip: (f64, f64),
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// The reported score averages this many final evaluations.
    pub eval_window: usize,
    pub seed: u64,
}

impl Td3BcConfig {
    pub fn full(seed: u64) -> Self {
        Self {
            batches: 25_000,
            batch_size: 500,
            hidden: vec![512, 512],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha: 2.5,
            gamma: 0.98,
            tau: 0.005,
            policy_delay: 2,
            policy_noise: 0.2,
            noise_clip: 0.5,
            target_clip: TARGET_CLIP,
            eval_every: 250,
            eval_episodes: 20,
            eval_window: 50,
            seed,
        }
    }

    /// Fewer batches and narrower networks for a single desktop core.
    pub fn desk(seed: u64) -> Self {
        Self {
            batches: 10_000,
            hidden: vec![128, 128],
            eval_every: 50,
            ..Self::full(seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument("discount must lie in (0, 1)".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.policy_delay == 0 {
            return Err(Error::InvalidArgument(
                "batch size, eval period and policy delay must be positive".into(),
            ));
        }
        if !(self.alpha >= 0.0) || !(self.target_clip.0 < self.target_clip.1) {
            return Err(Error::InvalidArgument("bad alpha or target clip".into()));
        }
        Ok(())
    }
}

/// Per-coordinate affine normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Statistics of `rows`; the std is floored at `1e-3`.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n: f64 = 0.0;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1.0;
            for j in 0..dim {
                sum[j] += r[j];
                sq[j] += r[j] * r[j];
            }
        }
        let mean: Vec<f64> = sum.iter().map(|v| v / n.max(1.0)).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n.max(1.0) - m * m).max(0.0).sqrt().max(1e-3))
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let m = Array1::from(self.mean.clone());
        let s = Array1::from(self.std.clone());
        (&x - &m) / &s
    }
}

/// Deterministic tanh policy with twin critics and their targets.
#[derive(Debug, Clone)]
pub struct Agent {
    pub actor: FeedForwardNet<f64>,
    pub critics: [FeedForwardNet<f64>; 2],
    pub actor_target: FeedForwardNet<f64>,
    pub critic_targets: [FeedForwardNet<f64>; 2],
    pub state_norm: Normalizer,
    pub action_box: SaBox,
    pub config: Td3BcConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AgentFile {
    state_norm: Normalizer,
    action_box: SaBox,
    config: Td3BcConfig,
}

impl Agent {
    /// Fresh networks; targets start as copies of the online networks.
    pub fn new(state_norm: Normalizer, action_box: SaBox, config: Td3BcConfig) -> Result<Self> {
        config.validate()?;
        let sd = state_norm.mean.len();
        let ad = action_box.dim();
        let dims = |i: usize, o: usize| {
            let mut d = vec![i];
            d.extend(&config.hidden);
            d.push(o);
            d
        };
        let mut rng = seeds::stream(config.seed, "agent-init");
        let actor = FeedForwardNet::new(&dims(sd, ad), &mut rng)?;
        let critics = [
            FeedForwardNet::new(&dims(sd + ad, 1), &mut rng)?,
            FeedForwardNet::new(&dims(sd + ad, 1), &mut rng)?,
        ];
        Ok(Self {
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor,
            critics,
            state_norm,
            action_box,
            config,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_norm.mean.len()
    }

    pub fn action_dim(&self) -> usize {
        self.action_box.dim()
    }

    fn half_range(&self) -> Array1<f64> {
        self.action_box.low.iter().zip(&self.action_box.high).map(|(l, h)| 0.5 * (h - l)).collect()
    }

    fn mid(&self) -> Array1<f64> {
        self.action_box.low.iter().zip(&self.action_box.high).map(|(l, h)| 0.5 * (h + l)).collect()
    }

    /// Actions for already-normalized states.
    fn squash(&self, z: &Array2<f64>) -> Array2<f64> {
        z.mapv(f64::tanh) * &self.half_range() + &self.mid()
    }

    /// Deterministic actions for raw states, one row each.
    pub fn act_batch(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        let z = self.actor.forward(self.state_norm.apply(states).view())?;
        Ok(self.squash(&z))
    }

    /// Smaller of the two critics at normalized states.
    fn min_q(critics: &[FeedForwardNet<f64>; 2], sa: ArrayView2<f64>) -> Result<Array1<f64>> {
        let q1 = critics[0].forward(sa)?;
        let q2 = critics[1].forward(sa)?;
        Ok(ndarray::Zip::from(q1.column(0)).and(q2.column(0)).map_collect(|a, b| a.min(*b)))
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critics.iter().all(|c| c.is_finite())
    }

    /// Writes `actor.json`, `critic_{0,1}.json`, their targets and
    /// `agent.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.actor.save_json(&dir.join("actor.json"))?;
        self.actor_target.save_json(&dir.join("actor_target.json"))?;
        for k in 0..2 {
            self.critics[k].save_json(&dir.join(format!("critic_{k}.json")))?;
            self.critic_targets[k].save_json(&dir.join(format!("critic_target_{k}.json")))?;
        }
        let f = AgentFile {
            state_norm: self.state_norm.clone(),
            action_box: self.action_box.clone(),
            config: self.config.clone(),
        };
        std::fs::write(dir.join("agent.json"), serde_json::to_vec_pretty(&f)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = dir.join("agent.json");
        if !meta.exists() {
            return Err(Error::MissingArtifact {
                path: meta.display().to_string(),
                stage: "train-rl",
            });
        }
        let f: AgentFile = serde_json::from_slice(&std::fs::read(&meta)?)?;
        let net = |name: &str| FeedForwardNet::load_json(&dir.join(name));
        Ok(Self {
            actor: net("actor.json")?,
            actor_target: net("actor_target.json")?,
            critics: [net("critic_0.json")?, net("critic_1.json")?],
            critic_targets: [net("critic_target_0.json")?, net("critic_target_1.json")?],
            state_norm: f.state_norm,
            action_box: f.action_box,
            config: f.config,
        })
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub batch: usize,
    /// Means over the batches since the previous record.
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub eval_avg_steps: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub records: Vec<TrainRecord>,
    pub report: EvalReport,
}

impl TrainOutcome {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("batch,critic_loss,actor_loss,eval_avg_steps\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", r.batch, r.critic_loss, r.actor_loss, r.eval_avg_steps));
        }
        out
    }
}

/// Minibatch in network coordinates.
struct Batch {
    s: Array2<f64>,
    a: Array2<f64>,
    r: Array1<f64>,
    s2: Array2<f64>,
    not_done: Array1<f64>,
}

fn draw_batch<R: Rng + ?Sized>(ds: &Dataset, norm: &Normalizer, n: usize, rng: &mut R) -> Batch {
    let (sd, ad) = (ds.state_dim, ds.action_dim);
    let mut s = Array2::zeros((n, sd));
    let mut a = Array2::zeros((n, ad));
    let mut s2 = Array2::zeros((n, sd));
    let mut r = Array1::zeros(n);
    let mut not_done = Array1::zeros(n);
    for i in 0..n {
        let t = &ds.transitions[rng.random_range(0..ds.len())];
        for j in 0..sd {
            s[[i, j]] = (t.s[j] - norm.mean[j]) / norm.std[j];
            s2[[i, j]] = (t.s_next[j] - norm.mean[j]) / norm.std[j];
        }
        for j in 0..ad {
            a[[i, j]] = t.a[j];
        }
        r[i] = t.r;
        not_done[i] = if t.done { 0.0 } else { 1.0 };
    }
    Batch { s, a, r, s2, not_done }
}

fn concat(s: &Array2<f64>, a: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[s.view(), a.view()]).expect("same row count")
}

fn check_dataset(ds: &Dataset, action_box: &SaBox) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    if action_box.dim() != ds.action_dim {
        return Err(Error::DimMismatch {
            expected: ds.action_dim,
            got: action_box.dim(),
            context: "action box",
        });
    }
    if let Some(i) = ds.transitions.iter().position(|t| {
        t.s.iter().chain(&t.a).chain(&t.s_next).chain([&t.r]).any(|v| !v.is_finite())
    }) {
        return Err(Error::NonFinite(format!("transition {i} of the training data")));
    }
    Ok(())
}

/// Gradient of `-lambda * mean(Q1(s, pi(s))) + mean(|pi(s) - a|^2)` with
/// respect to the actor parameters, with `lambda = alpha / mean|Q1|`.
/// Returns `(loss, grads)`.
pub fn actor_loss_grad(agent: &Agent, s: ArrayView2<f64>, a: ArrayView2<f64>) -> Result<(f64, Vec<f64>)> {
    let n = s.nrows() as f64;
    let sd = agent.state_dim();
    let trace = agent.actor.forward_trace(s)?;
    let t = trace.output().mapv(f64::tanh);
    let half = agent.half_range();
    let pi = &t * &half + &agent.mid();
    let diff = &pi - &a;
    let bc = diff.mapv(|v| v * v).sum() / n;
    let mut d_pi = diff * (2.0 / n);
    let mut loss = bc;
    if agent.config.alpha > 0.0 {
        let sa = concat(&s.to_owned(), &pi);
        let ctrace = agent.critics[0].forward_trace(sa.view())?;
        let q = ctrace.output().column(0).to_owned();
        let lambda = agent.config.alpha / q.mapv(f64::abs).mean().unwrap_or(1.0).max(1e-8);
        loss -= lambda * q.mean().unwrap_or(0.0);
        let g = Array2::from_elem((s.nrows(), 1), -lambda / n);
        let (_, dx) = agent.critics[0].backward(&ctrace, g.view());
        d_pi += &dx.slice(s![.., sd..]);
    }
    let dz = d_pi * &half * &t.mapv(|v| 1.0 - v * v);
    let (grads, _) = agent.actor.backward(&trace, dz.view());
    Ok((loss, grads))
}

/// Clipped double-Q targets with target-policy smoothing.
fn critic_targets<R: Rng + ?Sized>(agent: &Agent, b: &Batch, rng: &mut R) -> Result<Array1<f64>> {
    let c = &agent.config;
    let half = agent.half_range();
    let z = agent.actor_target.forward(b.s2.view())?;
    let mut a2 = agent.squash(&z);
    for ((_, j), v) in a2.indexed_iter_mut() {
        let eps: f64 = rng.sample::<f64, _>(StandardNormal) * c.policy_noise;
        *v = (*v + eps.clamp(-c.noise_clip, c.noise_clip) * half[j])
            .clamp(agent.action_box.low[j], agent.action_box.high[j]);
    }
    let q = Agent::min_q(&agent.critic_targets, concat(&b.s2, &a2).view())?;
    let (lo, hi) = c.target_clip;
    let y = (&b.r + &(&b.not_done * &q * c.gamma)).mapv(|v| v.clamp(lo, hi));
    debug_assert!(y.iter().all(|v| *v >= lo && *v <= hi));
    Ok(y)
}

fn nonfinite(batch: usize, what: &str, value: f64) -> Error {
    Error::NonFinite(format!("{what} = {value} at batch {batch}; lower the learning rate or check the data"))
}

/// Trains a TD3-BC agent on `dataset`, evaluating on `env` every
/// `eval_every` batches.
pub fn td3bc_train(dataset: &Dataset, env: &dyn Episodic, config: &Td3BcConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let action_box = bounds_of_actions(env, dataset.state_dim)?;
    check_dataset(dataset, &action_box)?;
    let norm = Normalizer::fit(dataset.transitions.iter().map(|t| t.s.as_slice()), dataset.state_dim);
    let mut agent = Agent::new(norm, action_box, config.clone())?;
    let mut actor_opt = Adam::new(agent.actor.n_params(), AdamConfig::with_lr(config.actor_lr));
    let mut critic_opts = [
        Adam::new(agent.critics[0].n_params(), AdamConfig::with_lr(config.critic_lr)),
        Adam::new(agent.critics[1].n_params(), AdamConfig::with_lr(config.critic_lr)),
    ];
    let mut rng = seeds::stream(config.seed, "td3bc-batches");
    let mut records = Vec::new();
    let mut report = EvalReport::new(config.eval_window);
    let (mut c_sum, mut a_sum, mut c_n, mut a_n) = (0.0, 0.0, 0usize, 0usize);
    for it in 1..=config.batches {
        let b = draw_batch(dataset, &agent.state_norm, config.batch_size, &mut rng);
        let y = critic_targets(&agent, &b, &mut rng)?;
        let sa = concat(&b.s, &b.a);
        let n = b.s.nrows() as f64;
        let mut closs = 0.0;
        for k in 0..2 {
            let trace = agent.critics[k].forward_trace(sa.view())?;
            let err = &trace.output().column(0) - &y;
            closs += err.mapv(|v| v * v).sum() / n;
            let g = err.mapv(|v| 2.0 * v / n).insert_axis(Axis(1));
            let (grads, _) = agent.critics[k].backward(&trace, g.view());
            critic_opts[k].step(agent.critics[k].params_mut(), &grads);
        }
        if !closs.is_finite() {
            return Err(nonfinite(it, "critic loss", closs));
        }
        c_sum += closs;
        c_n += 1;
        if it % config.policy_delay == 0 {
            let (aloss, grads) = actor_loss_grad(&agent, b.s.view(), b.a.view())?;
            if !aloss.is_finite() {
                return Err(nonfinite(it, "actor loss", aloss));
            }
            actor_opt.step(agent.actor.params_mut(), &grads);
            a_sum += aloss;
            a_n += 1;
            let tau = config.tau;
            agent.actor_target.soft_update_from(&agent.actor, tau);
            for (target, online) in agent.critic_targets.iter_mut().zip(&agent.critics) {
                target.soft_update_from(online, tau);
            }
        }
        if it % config.eval_every == 0 || it == config.batches {
            let entry = evaluate(&agent, env, config.eval_episodes, env.max_steps(), config.seed)?;
            let rec = TrainRecord {
                batch: it,
                critic_loss: c_sum / c_n.max(1) as f64,
                actor_loss: a_sum / a_n.max(1) as f64,
                eval_avg_steps: entry.avg_steps,
            };
            log::debug!("batch {it}: critic {:.4} actor {:.4} steps {:.1}", rec.critic_loss, rec.actor_loss, rec.eval_avg_steps);
            records.push(rec);
            report.push(it, entry);
            (c_sum, a_sum, c_n, a_n) = (0.0, 0.0, 0, 0);
        }
    }
    Ok(TrainOutcome { agent, records, report })
}

/// Behavior cloning: the actor alone, regressed onto dataset actions with
/// the same batch schedule and evaluation cadence.
pub fn bc_train(dataset: &Dataset, env: &dyn Episodic, config: &Td3BcConfig) -> Result<TrainOutcome> {
    let config = Td3BcConfig {
        alpha: 0.0,
        ..config.clone()
    };
    config.validate()?;
    let action_box = bounds_of_actions(env, dataset.state_dim)?;
    check_dataset(dataset, &action_box)?;
    let norm = Normalizer::fit(dataset.transitions.iter().map(|t| t.s.as_slice()), dataset.state_dim);
    let mut agent = Agent::new(norm, action_box, config.clone())?;
    let mut opt = Adam::new(agent.actor.n_params(), AdamConfig::with_lr(config.actor_lr));
    let mut rng = seeds::stream(config.seed, "bc-batches");
    let mut records = Vec::new();
    let mut report = EvalReport::new(config.eval_window);
    let (mut sum, mut count) = (0.0, 0usize);
    for it in 1..=config.batches {
        let b = draw_batch(dataset, &agent.state_norm, config.batch_size, &mut rng);
        let (loss, grads) = actor_loss_grad(&agent, b.s.view(), b.a.view())?;
        if !loss.is_finite() {
            return Err(nonfinite(it, "cloning loss", loss));
        }
        opt.step(agent.actor.params_mut(), &grads);
        sum += loss;
        count += 1;
        if it % config.eval_every == 0 || it == config.batches {
            let entry = evaluate(&agent, env, config.eval_episodes, env.max_steps(), config.seed)?;
            records.push(TrainRecord {
                batch: it,
                critic_loss: f64::NAN,
                actor_loss: sum / count.max(1) as f64,
                eval_avg_steps: entry.avg_steps,
            });
            report.push(it, entry);
            (sum, count) = (0.0, 0);
        }
    }
    agent.actor_target = agent.actor.clone();
    Ok(TrainOutcome { agent, records, report })
}

fn bounds_of_actions(env: &dyn Episodic, state_dim: usize) -> Result<SaBox> {
    let b = env.bounds();
    SaBox::new(b.low[state_dim..].to_vec(), b.high[state_dim..].to_vec())
}
