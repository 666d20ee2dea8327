use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::base::BaseModel;
use super::{Architecture, DynamicsConfig, GaussianPrediction, ENSEMBLE_SIZE};
use crate::data::{Dataset, SaSample};
use crate::env::{validate_parent_sets, AdjacencyMask, MaskFn, ParentSetSpec, Simulator};
use crate::error::{Error, Result};
use crate::nets::{gaussian_nll, Adam, AdamConfig, LOGSTD_MAX, LOGSTD_MIN};
use crate::scalar::Scalar;
use crate::seeds;

/// Rows per forward pass when predicting on large sets.
const PREDICT_CHUNK: usize = 4096;

#[derive(Debug, Clone)]
pub struct DynamicsEnsemble<T: Scalar> {
    pub(crate) arch: Architecture,
    pub(crate) state_dim: usize,
    pub(crate) action_dim: usize,
    pub(crate) parent_sets: Vec<ParentSetSpec>,
    pub(crate) config: DynamicsConfig,
    pub(crate) members: Vec<BaseModel<T>>,
    /// Per-member training diagnostics (non-finite loss events).
    pub(crate) diagnostics: Vec<Option<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub member: usize,
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose snapshot each member kept.
    pub best_epochs: Vec<usize>,
}

impl TrainHistory {
    pub fn member(&self, m: usize) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.member == m)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("member,epoch,train_nll,val_nll\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", r.member, r.epoch, r.train_nll, r.val_nll));
        }
        out
    }
}

/// Model error against ground truth, raw and scaled by 100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub mse: f64,
    pub mse_e2: f64,
    pub n: usize,
}

/// Row `r` holds mask `r` flattened input-major: entry `i * n_children + j`.
pub fn mask_matrix<T: Scalar>(masks: &[AdjacencyMask]) -> Array2<T> {
    let width = masks.first().map_or(0, |m| m.bits().len());
    let mut out = Array2::zeros((masks.len(), width));
    for (mut row, m) in out.rows_mut().into_iter().zip(masks) {
        for (o, b) in row.iter_mut().zip(m.bits()) {
            *o = if *b != 0 { T::one() } else { T::zero() };
        }
    }
    out
}

struct Arrays<T: Scalar> {
    x: Array2<T>,
    y: Array2<T>,
    m: Array2<T>,
}

impl<T: Scalar> Arrays<T> {
    fn from_dataset(ds: &Dataset, mask_fn: &dyn MaskFn) -> Self {
        let n = ds.len();
        let (sd, ad) = (ds.state_dim, ds.action_dim);
        let mut x = Array2::zeros((n, sd + ad));
        let mut y = Array2::zeros((n, sd));
        let mut masks = Vec::with_capacity(n);
        for (r, t) in ds.transitions.iter().enumerate() {
            let sa = t.state_action();
            for (c, v) in sa.iter().enumerate() {
                x[[r, c]] = T::lit(*v);
            }
            for (c, v) in t.s_next.iter().enumerate() {
                y[[r, c]] = T::lit(*v);
            }
            masks.push(mask_fn.mask(&sa));
        }
        Self {
            x,
            y,
            m: mask_matrix(&masks),
        }
    }
}

fn snapshot<T: Scalar>(m: &BaseModel<T>) -> Vec<Vec<T>> {
    m.blocks().iter().map(|b| b.to_vec()).collect()
}

fn restore<T: Scalar>(m: &mut BaseModel<T>, snap: &[Vec<T>]) {
    for (dst, src) in m.blocks_mut().into_iter().zip(snap) {
        dst.copy_from_slice(src);
    }
}

impl<T: Scalar> DynamicsEnsemble<T> {
    /// Factored architectures require valid parent sets; the unfactored one
    /// ignores them.
    pub fn build(
        arch: Architecture,
        state_dim: usize,
        action_dim: usize,
        parent_sets: &[ParentSetSpec],
        config: DynamicsConfig,
    ) -> Result<Self> {
        if arch != Architecture::Unfactored {
            if parent_sets.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "{arch} architecture needs parent sets"
                )));
            }
            validate_parent_sets(parent_sets, state_dim, action_dim)?;
        }
        if config.hidden.is_empty() || config.batch_size == 0 {
            return Err(Error::InvalidArgument("empty hidden sizes or zero batch".into()));
        }
        let members = (0..ENSEMBLE_SIZE)
            .map(|k| {
                let mut rng = seeds::stream(config.seed, &format!("dynamics-init-{k}"));
                BaseModel::build(arch, state_dim, action_dim, parent_sets, &config.hidden, &mut rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            arch,
            state_dim,
            action_dim,
            parent_sets: parent_sets.to_vec(),
            config,
            members,
            diagnostics: vec![None; ENSEMBLE_SIZE],
        })
    }

    pub fn from_members(
        arch: Architecture,
        state_dim: usize,
        action_dim: usize,
        parent_sets: Vec<ParentSetSpec>,
        config: DynamicsConfig,
        members: Vec<BaseModel<T>>,
    ) -> Result<Self> {
        if members.len() != ENSEMBLE_SIZE {
            return Err(Error::DimMismatch {
                expected: ENSEMBLE_SIZE,
                got: members.len(),
                context: "ensemble members",
            });
        }
        if members.iter().any(|m| m.architecture() != arch) {
            return Err(Error::InvalidArgument("member architecture disagrees".into()));
        }
        Ok(Self {
            arch,
            state_dim,
            action_dim,
            parent_sets,
            config,
            members,
            diagnostics: vec![None; ENSEMBLE_SIZE],
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn parent_sets(&self) -> &[ParentSetSpec] {
        &self.parent_sets
    }

    pub fn config(&self) -> &DynamicsConfig {
        &self.config
    }

    pub fn members(&self) -> &[BaseModel<T>] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [BaseModel<T>] {
        &mut self.members
    }

    pub fn diagnostics(&self) -> &[Option<String>] {
        &self.diagnostics
    }

    /// Splits off `val_count` transitions and trains on the rest.
    pub fn fit(&mut self, data: &Dataset, val_count: usize, mask_fn: &dyn MaskFn) -> Result<TrainHistory> {
        let mut rng = seeds::stream(self.config.seed, "dynamics-split");
        let (train, val) = data.split(val_count, &mut rng);
        self.train(&train, &val, mask_fn)
    }

    /// Trains every member on its own shuffling stream, minimizing the
    /// per-dimension Gaussian NLL of `s'`.
    pub fn train(&mut self, train: &Dataset, val: &Dataset, mask_fn: &dyn MaskFn) -> Result<TrainHistory> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::InvalidArgument("training and validation sets must be nonempty".into()));
        }
        for ds in [train, val] {
            if ds.state_dim != self.state_dim || ds.action_dim != self.action_dim {
                return Err(Error::DimMismatch {
                    expected: self.state_dim + self.action_dim,
                    got: ds.state_dim + ds.action_dim,
                    context: "dynamics training data",
                });
            }
        }
        let tr = Arrays::<T>::from_dataset(train, mask_fn);
        let va = Arrays::<T>::from_dataset(val, mask_fn);
        let cfg = self.config.clone();
        let sd = self.state_dim;
        let results: Vec<(Vec<EpochRecord>, usize, Option<String>)> = self
            .members
            .par_iter_mut()
            .enumerate()
            .map(|(k, member)| {
                let mut rng = seeds::stream(cfg.seed, &format!("dynamics-shuffle-{k}"));
                train_member(k, member, &tr, &va, &cfg, sd, &mut rng)
            })
            .collect();
        let mut history = TrainHistory::default();
        for (k, (records, best, diag)) in results.into_iter().enumerate() {
            if let Some(d) = &diag {
                log::warn!("dynamics member {k}: {d}");
            }
            self.diagnostics[k] = diag;
            history.records.extend(records);
            history.best_epochs.push(best);
        }
        Ok(history)
    }

    fn input_array(&self, sa: &[Vec<f64>]) -> Array2<T> {
        let n_in = self.state_dim + self.action_dim;
        let mut x = Array2::zeros((sa.len(), n_in));
        for (r, row) in sa.iter().enumerate() {
            for (c, v) in row.iter().enumerate().take(n_in) {
                x[[r, c]] = T::lit(*v);
            }
        }
        x
    }

    /// Aggregated predictions for concatenated `[s ; a]` rows: the mean of
    /// member means and the mean of member standard deviations.
    pub fn predict_batch(&self, sa: &[Vec<f64>], masks: &[AdjacencyMask]) -> Result<(Array2<f64>, Array2<f64>)> {
        if sa.len() != masks.len() {
            return Err(Error::DimMismatch {
                expected: sa.len(),
                got: masks.len(),
                context: "one mask per prediction row",
            });
        }
        let n_in = self.state_dim + self.action_dim;
        if let Some(bad) = sa.iter().find(|r| r.len() != n_in) {
            return Err(Error::DimMismatch {
                expected: n_in,
                got: bad.len(),
                context: "state-action row",
            });
        }
        let sd = self.state_dim;
        let mut mean = Array2::zeros((sa.len(), sd));
        let mut std = Array2::zeros((sa.len(), sd));
        let inv = 1.0 / self.members.len() as f64;
        for start in (0..sa.len()).step_by(PREDICT_CHUNK) {
            let end = (start + PREDICT_CHUNK).min(sa.len());
            let x = self.input_array(&sa[start..end]);
            let m = mask_matrix::<T>(&masks[start..end]);
            let mut mu_acc = Array2::<f64>::zeros((end - start, sd));
            let mut sd_acc = Array2::<f64>::zeros((end - start, sd));
            for member in &self.members {
                let out = member.forward(x.view(), m.view(), sd)?;
                mu_acc += &out.slice(s![.., ..sd]).mapv(|v| v.as_f64());
                sd_acc += &out
                    .slice(s![.., sd..])
                    .mapv(|v| v.as_f64().clamp(LOGSTD_MIN, LOGSTD_MAX).exp());
            }
            mean.slice_mut(s![start..end, ..]).assign(&(mu_acc * inv));
            std.slice_mut(s![start..end, ..]).assign(&(sd_acc * inv));
        }
        Ok((mean, std))
    }

    pub fn predict(&self, s: &[f64], a: &[f64], mask: &AdjacencyMask) -> Result<GaussianPrediction> {
        let sa: Vec<f64> = s.iter().chain(a).copied().collect();
        let (m, sd) = self.predict_batch(&[sa], std::slice::from_ref(mask))?;
        Ok(GaussianPrediction {
            mean: m.row(0).to_vec(),
            std: sd.row(0).to_vec(),
        })
    }

    /// Draws `s' ~ N(mean, (std_scale * std)^2)` per row from the aggregated
    /// prediction.
    pub fn sample_next_batch<R: Rng + ?Sized>(
        &self,
        sa: &[Vec<f64>],
        masks: &[AdjacencyMask],
        std_scale: f64,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        if !(std_scale >= 0.0) {
            return Err(Error::InvalidArgument("std_scale must be >= 0".into()));
        }
        let (mut mean, std) = self.predict_batch(sa, masks)?;
        if std_scale > 0.0 {
            for (m, s) in mean.iter_mut().zip(std.iter()) {
                let z: f64 = rng.sample(StandardNormal);
                *m += std_scale * s * z;
            }
        }
        Ok(mean)
    }

    pub fn sample_next<R: Rng + ?Sized>(
        &self,
        s: &[f64],
        a: &[f64],
        mask: &AdjacencyMask,
        std_scale: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let sa: Vec<f64> = s.iter().chain(a).copied().collect();
        Ok(self
            .sample_next_batch(&[sa], std::slice::from_ref(mask), std_scale, rng)?
            .row(0)
            .to_vec())
    }

    /// Squared error of the mean prediction against the simulator, averaged
    /// over rows and state dimensions. Masks come from the simulator.
    pub fn eval_mse(&self, samples: &[SaSample], sim: &dyn Simulator) -> Result<MseReport> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty evaluation set".into()));
        }
        let sa: Vec<Vec<f64>> = samples.iter().map(|s| s.state_action()).collect();
        let masks: Vec<AdjacencyMask> = sa.iter().map(|r| sim.mask(r)).collect();
        let (mean, _) = self.predict_batch(&sa, &masks)?;
        let mut total = 0.0;
        for (r, smp) in samples.iter().enumerate() {
            let truth = sim.next_state(&smp.s, &smp.a);
            for (j, t) in truth.iter().enumerate() {
                total += (mean[[r, j]] - t).powi(2);
            }
        }
        let mse = total / (samples.len() * self.state_dim) as f64;
        Ok(MseReport {
            mse,
            mse_e2: mse * 1e2,
            n: samples.len(),
        })
    }

    /// Analytic sensitivity of each member's mean and logstd outputs to the
    /// inputs at one point: `[member][input][output]`, outputs ordered
    /// `(mean_0.., logstd_0..)`.
    pub fn input_jacobian(&self, sa: &[f64], mask: &AdjacencyMask) -> Result<Vec<Array2<f64>>> {
        let x = self.input_array(&[sa.to_vec()]);
        let m = mask_matrix::<T>(std::slice::from_ref(mask));
        let n_out = 2 * self.state_dim;
        self.members
            .iter()
            .map(|member| {
                let (_, trace) = member.forward_trace(x.view(), m.view(), self.state_dim)?;
                let mut jac = Array2::zeros((x.ncols(), n_out));
                for o in 0..n_out {
                    let mut g = Array2::<T>::zeros((1, n_out));
                    g[[0, o]] = T::one();
                    let (_, dx) = member.backward(x.view(), m.view(), &trace, g.view(), self.state_dim);
                    for i in 0..x.ncols() {
                        jac[[i, o]] = dx[[0, i]].as_f64();
                    }
                }
                Ok(jac)
            })
            .collect()
    }
}

/// Mean NLL of one member over a full array set, evaluated in chunks.
fn dataset_nll<T: Scalar>(member: &BaseModel<T>, d: &Arrays<T>, sd: usize) -> Result<f64> {
    let mut total = 0.0;
    let n = d.x.nrows();
    for start in (0..n).step_by(PREDICT_CHUNK) {
        let end = (start + PREDICT_CHUNK).min(n);
        let out = member.forward(
            d.x.slice(s![start..end, ..]),
            d.m.slice(s![start..end, ..]),
            sd,
        )?;
        let (loss, _) = gaussian_nll(out.view(), d.y.slice(s![start..end, ..]));
        total += loss.as_f64() * (end - start) as f64;
    }
    Ok(total / n as f64)
}

fn train_member<T: Scalar, R: Rng + ?Sized>(
    k: usize,
    member: &mut BaseModel<T>,
    tr: &Arrays<T>,
    va: &Arrays<T>,
    cfg: &DynamicsConfig,
    sd: usize,
    rng: &mut R,
) -> (Vec<EpochRecord>, usize, Option<String>) {
    let mut opts: Vec<Adam<T>> = member
        .blocks()
        .iter()
        .map(|b| Adam::new(b.len(), AdamConfig::with_lr(cfg.lr)))
        .collect();
    let n = tr.x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let window_start = cfg.max_epochs.saturating_sub(cfg.early_stop_window.max(1));
    let mut best: Option<(f64, usize, Vec<Vec<T>>)> = None;
    let mut last_good = (0usize, snapshot(member));
    let mut records = Vec::with_capacity(cfg.max_epochs);
    let mut diagnostic = None;
    'epochs: for epoch in 0..cfg.max_epochs {
        order.shuffle(rng);
        let mut train_total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let xb = tr.x.select(Axis(0), idx);
            let mb = tr.m.select(Axis(0), idx);
            let yb = tr.y.select(Axis(0), idx);
            let step = member.forward_trace(xb.view(), mb.view(), sd).map(|(out, trace)| {
                let (loss, g) = gaussian_nll(out.view(), yb.view());
                (loss, g, trace)
            });
            let (loss, g, trace) = match step {
                Ok(v) => v,
                Err(e) => {
                    diagnostic = Some(format!("epoch {epoch}: {e}"));
                    break 'epochs;
                }
            };
            if !loss.is_finite() {
                diagnostic = Some(format!(
                    "non-finite training loss at epoch {epoch}; rolled back to epoch {}",
                    last_good.0
                ));
                restore(member, &last_good.1);
                break 'epochs;
            }
            train_total += loss.as_f64() * idx.len() as f64;
            let (grads, _) = member.backward(xb.view(), mb.view(), &trace, g.view(), sd);
            for ((block, opt), g) in member.blocks_mut().into_iter().zip(&mut opts).zip(&grads) {
                opt.step(block, g);
            }
        }
        let val_nll = match dataset_nll(member, va, sd) {
            Ok(v) if v.is_finite() && member.is_finite() => v,
            _ => {
                diagnostic = Some(format!(
                    "non-finite validation loss at epoch {epoch}; rolled back to epoch {}",
                    last_good.0
                ));
                restore(member, &last_good.1);
                break 'epochs;
            }
        };
        records.push(EpochRecord {
            member: k,
            epoch,
            train_nll: train_total / n as f64,
            val_nll,
        });
        let snap = snapshot(member);
        if epoch >= window_start && best.as_ref().is_none_or(|b| val_nll < b.0) {
            best = Some((val_nll, epoch, snap.clone()));
        }
        last_good = (epoch, snap);
    }
    let kept = match (&diagnostic, best) {
        // a failed member keeps its rollback point
        (Some(_), _) | (None, None) => last_good.0,
        (None, Some((_, epoch, snap))) => {
            restore(member, &snap);
            epoch
        }
    };
    (records, kept, diagnostic)
}
