use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Provenance, SaSample};
use crate::dynamics::DynamicsEnsemble;
use crate::env::{MaskFn, SaBox, Simulator};
use crate::error::{Error, Result};

/// Rollout length of the model-based baseline.
pub const DYNA_HORIZON: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Emp,
    Rand,
    Dyna,
}

impl BaselineKind {
    pub fn provenance(self) -> Provenance {
        match self {
            BaselineKind::Emp => Provenance::Emp,
            BaselineKind::Rand => Provenance::Rand,
            BaselineKind::Dyna => Provenance::Dyna,
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.provenance().as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emp" => Ok(BaselineKind::Emp),
            "rand" => Ok(BaselineKind::Rand),
            "dyna" => Ok(BaselineKind::Dyna),
            other => Err(Error::InvalidArgument(format!("unknown baseline `{other}`"))),
        }
    }
}

/// Transition model driving the rollout baseline.
#[derive(Clone, Copy)]
pub enum DynaSource<'a> {
    /// A trained ensemble queried at its mean plus `std_scale` noise, with
    /// masks from `mask_fn`.
    Learned {
        ensemble: &'a DynamicsEnsemble<f64>,
        mask_fn: &'a dyn MaskFn,
        std_scale: f64,
    },
    GroundTruth(&'a dyn Simulator),
}

/// Empirical resampling, uniform draws over `bounds`, or short random-action
/// rollouts from empirical states.
///
/// `Emp` tiles the dataset's `(s, a)` pairs (whole copies first, then a
/// random subset for the remainder) and shuffles, so `n = len` reproduces
/// the empirical set exactly.
pub fn baseline_samples<R: Rng + ?Sized>(
    kind: BaselineKind,
    dataset: &Dataset,
    dyna: Option<DynaSource<'_>>,
    bounds: &SaBox,
    n: usize,
    rng: &mut R,
) -> Result<Vec<SaSample>> {
    let sd = dataset.state_dim;
    match kind {
        BaselineKind::Emp => {
            if dataset.is_empty() {
                return Err(Error::InvalidArgument("empirical baseline needs data".into()));
            }
            let base = dataset.sa_samples(Provenance::Emp);
            let mut out = Vec::with_capacity(n);
            for _ in 0..n / base.len() {
                out.extend(base.iter().cloned());
            }
            let rest = n % base.len();
            out.extend(base.choose_multiple(rng, rest).cloned());
            out.shuffle(rng);
            Ok(out)
        }
        BaselineKind::Rand => Ok((0..n)
            .map(|_| SaSample::from_joint(&bounds.sample_uniform(rng), sd, Provenance::Rand))
            .collect()),
        BaselineKind::Dyna => {
            let source = dyna.ok_or_else(|| {
                Error::InvalidArgument("rollout baseline needs a dynamics source".into())
            })?;
            if dataset.is_empty() {
                return Err(Error::InvalidArgument("rollout baseline needs start states".into()));
            }
            let action_box = SaBox::new(bounds.low[sd..].to_vec(), bounds.high[sd..].to_vec())?;
            let n_starts = n.div_ceil(DYNA_HORIZON);
            let mut states: Vec<Vec<f64>> = (0..n_starts)
                .map(|_| dataset.transitions[rng.random_range(0..dataset.len())].s.clone())
                .collect();
            let mut out = Vec::with_capacity(n_starts * DYNA_HORIZON);
            for _ in 0..DYNA_HORIZON {
                let sa: Vec<Vec<f64>> = states
                    .iter()
                    .map(|s| s.iter().copied().chain(action_box.sample_uniform(rng)).collect())
                    .collect();
                let next: Vec<Vec<f64>> = match source {
                    DynaSource::Learned {
                        ensemble,
                        mask_fn,
                        std_scale,
                    } => {
                        let masks: Vec<_> = sa.iter().map(|r| mask_fn.mask(r)).collect();
                        let m = ensemble.sample_next_batch(&sa, &masks, std_scale, rng)?;
                        m.rows().into_iter().map(|r| r.to_vec()).collect()
                    }
                    DynaSource::GroundTruth(sim) => {
                        sa.iter().map(|r| sim.next_state(&r[..sd], &r[sd..])).collect()
                    }
                };
                for ((row, mut s2), state) in sa.iter().zip(next).zip(states.iter_mut()) {
                    out.push(SaSample::from_joint(row, sd, Provenance::Dyna));
                    for (v, (l, h)) in s2.iter_mut().zip(bounds.low.iter().zip(&bounds.high)) {
                        *v = v.clamp(*l, *h);
                    }
                    *state = s2;
                }
            }
            out.truncate(n);
            Ok(out)
        }
    }
}
