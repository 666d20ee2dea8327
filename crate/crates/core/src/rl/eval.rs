use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::Agent;
use crate::env::Episodic;
use crate::error::{Error, Result};
use crate::seeds;

/// Outcome of one evaluation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    /// Steps until the goal per episode; the cap for failed episodes.
    pub steps: Vec<usize>,
    pub successes: Vec<bool>,
    pub avg_steps: f64,
    pub success_rate: f64,
}

/// Evaluations over training, with the final-window score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub window: usize,
    pub batches: Vec<usize>,
    pub entries: Vec<EvalEntry>,
}

impl EvalReport {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            batches: Vec::new(),
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, batch: usize, entry: EvalEntry) {
        self.batches.push(batch);
        self.entries.push(entry);
    }

    /// Mean of `avg_steps` over the last `window` evaluations (all of them
    /// when fewer were run).
    pub fn final_window_avg(&self) -> f64 {
        let k = self.window.clamp(1, self.entries.len().max(1));
        let tail = &self.entries[self.entries.len().saturating_sub(k)..];
        if tail.is_empty() {
            return f64::NAN;
        }
        tail.iter().map(|e| e.avg_steps).sum::<f64>() / tail.len() as f64
    }
}

/// Deterministic action for one raw state.
pub fn policy_act(agent: &Agent, s: &[f64]) -> Result<Vec<f64>> {
    let x = ArrayView2::from_shape((1, s.len()), s).map_err(|_| Error::DimMismatch {
        expected: agent.state_dim(),
        got: s.len(),
        context: "policy input",
    })?;
    Ok(agent.act_batch(x)?.row(0).to_vec())
}

/// Rolls the deterministic policy for `n_episodes` from the start
/// distribution, in lockstep. Start states come from a stream fixed by
/// `seed`, so repeated calls see the same starts.
pub fn evaluate(
    agent: &Agent,
    env: &dyn Episodic,
    n_episodes: usize,
    max_steps: usize,
    seed: u64,
) -> Result<EvalEntry> {
    if n_episodes == 0 || max_steps == 0 {
        return Err(Error::InvalidArgument("need at least one episode and one step".into()));
    }
    let mut rng = seeds::stream(seed, "eval-starts");
    let sd = agent.state_dim();
    let mut states: Vec<Vec<f64>> = (0..n_episodes).map(|_| env.start_state(&mut rng)).collect();
    let mut steps = vec![max_steps; n_episodes];
    let mut successes = vec![false; n_episodes];
    let mut active: Vec<usize> = (0..n_episodes).collect();
    for t in 1..=max_steps {
        if active.is_empty() {
            break;
        }
        let mut x = Array2::zeros((active.len(), sd));
        for (r, &e) in active.iter().enumerate() {
            for j in 0..sd {
                x[[r, j]] = states[e][j];
            }
        }
        let actions = agent.act_batch(x.view())?;
        let mut still = Vec::with_capacity(active.len());
        for (r, &e) in active.iter().enumerate() {
            let a = actions.row(r).to_vec();
            let s2 = env.next_state(&states[e], &a);
            let (_, done) = env.reward(&states[e], &a, &s2);
            states[e] = s2;
            if done {
                steps[e] = t;
                successes[e] = true;
            } else {
                still.push(e);
            }
        }
        active = still;
    }
    let n = n_episodes as f64;
    Ok(EvalEntry {
        avg_steps: steps.iter().sum::<usize>() as f64 / n,
        success_rate: successes.iter().filter(|s| **s).count() as f64 / n,
        steps,
        successes,
    })
}
