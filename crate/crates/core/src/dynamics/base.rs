//! One ensemble member: the three architectures behind a shared
//! `(mean | logstd)` batch interface.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use super::composer::{ComposerTrace, MaskedComposer};
use super::Architecture;
use crate::env::ParentSetSpec;
use crate::error::{Error, Result};
use crate::nets::{FeedForwardNet, Trace};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum BaseModel<T: Scalar> {
    /// `[s ; a] -> (mean, logstd)` for every child.
    Unfactored(FeedForwardNet<T>),
    /// One network per mechanism, reading only that mechanism's parents.
    GlobalFactored {
        parent_sets: Vec<ParentSetSpec>,
        nets: Vec<FeedForwardNet<T>>,
    },
    /// One masked composer per child.
    LocalFactored(Vec<MaskedComposer<T>>),
}

pub(crate) enum BaseTrace<T: Scalar> {
    Unfactored(Trace<T>),
    GlobalFactored(Vec<(Array2<T>, Trace<T>)>),
    LocalFactored(Vec<ComposerTrace<T>>),
}

impl<T: Scalar> BaseModel<T> {
    pub fn build<R: Rng + ?Sized>(
        arch: Architecture,
        state_dim: usize,
        action_dim: usize,
        parent_sets: &[ParentSetSpec],
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let n_in = state_dim + action_dim;
        match arch {
            Architecture::Unfactored => {
                let mut dims = vec![n_in];
                dims.extend_from_slice(hidden);
                dims.push(2 * state_dim);
                Ok(Self::Unfactored(FeedForwardNet::new(&dims, rng)?))
            }
            Architecture::GlobalFactored => {
                let mut sets = parent_sets.to_vec();
                sets.sort_by_key(|p| p.child_index);
                let nets = sets
                    .iter()
                    .map(|p| {
                        let mut dims = vec![p.parent_indices.len()];
                        dims.extend_from_slice(hidden);
                        dims.push(2);
                        FeedForwardNet::new(&dims, rng)
                    })
                    .collect::<Result<_>>()?;
                Ok(Self::GlobalFactored {
                    parent_sets: sets,
                    nets,
                })
            }
            Architecture::LocalFactored => {
                let (embed, head) = hidden.split_first().ok_or_else(|| {
                    Error::InvalidArgument("local model needs at least one hidden size".into())
                })?;
                let comps = (0..state_dim)
                    .map(|_| MaskedComposer::new(n_in, *embed, head, rng))
                    .collect::<Result<_>>()?;
                Ok(Self::LocalFactored(comps))
            }
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Self::Unfactored(_) => Architecture::Unfactored,
            Self::GlobalFactored { .. } => Architecture::GlobalFactored,
            Self::LocalFactored(_) => Architecture::LocalFactored,
        }
    }

    /// Parameter blocks in a fixed order; one optimizer state per block.
    pub fn blocks(&self) -> Vec<&[T]> {
        match self {
            Self::Unfactored(net) => vec![net.params()],
            Self::GlobalFactored { nets, .. } => nets.iter().map(|n| n.params()).collect(),
            Self::LocalFactored(c) => c.iter().flat_map(|c| c.blocks()).collect(),
        }
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Self::Unfactored(net) => vec![net.params_mut()],
            Self::GlobalFactored { nets, .. } => nets.iter_mut().map(|n| n.params_mut()).collect(),
            Self::LocalFactored(c) => c.iter_mut().flat_map(|c| c.blocks_mut()).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// `x` is `n x n_in`; `mask` is `n x (n_in * state_dim)` with entry
    /// `i * state_dim + j` holding mask bit `(i, j)`. Only the local model
    /// reads the mask.
    pub(crate) fn forward_trace(
        &self,
        x: ArrayView2<T>,
        mask: ArrayView2<T>,
        state_dim: usize,
    ) -> Result<(Array2<T>, BaseTrace<T>)> {
        let n = x.nrows();
        match self {
            Self::Unfactored(net) => {
                let t = net.forward_trace(x)?;
                Ok((t.output().to_owned(), BaseTrace::Unfactored(t)))
            }
            Self::GlobalFactored { parent_sets, nets } => {
                let mut out = Array2::zeros((n, 2 * state_dim));
                let mut traces = Vec::with_capacity(nets.len());
                for (p, net) in parent_sets.iter().zip(nets) {
                    let xp = x.select(ndarray::Axis(1), &p.parent_indices);
                    let t = net.forward_trace(xp.view())?;
                    let j = p.child_index;
                    out.column_mut(j).assign(&t.output().column(0));
                    out.column_mut(state_dim + j).assign(&t.output().column(1));
                    traces.push((xp, t));
                }
                Ok((out, BaseTrace::GlobalFactored(traces)))
            }
            Self::LocalFactored(comps) => {
                let mut out = Array2::zeros((n, 2 * state_dim));
                let mut traces = Vec::with_capacity(comps.len());
                for (j, c) in comps.iter().enumerate() {
                    let m = mask.slice(s![.., j..;state_dim]);
                    let t = c.forward_trace(x, m)?;
                    out.column_mut(j).assign(&t.output().column(0));
                    out.column_mut(state_dim + j).assign(&t.output().column(1));
                    traces.push(t);
                }
                Ok((out, BaseTrace::LocalFactored(traces)))
            }
        }
    }

    pub fn forward(&self, x: ArrayView2<T>, mask: ArrayView2<T>, state_dim: usize) -> Result<Array2<T>> {
        Ok(self.forward_trace(x, mask, state_dim)?.0)
    }

    /// Parameter gradients (aligned with `blocks`) and input gradients.
    pub(crate) fn backward(
        &self,
        x: ArrayView2<T>,
        mask: ArrayView2<T>,
        trace: &BaseTrace<T>,
        grad_out: ArrayView2<T>,
        state_dim: usize,
    ) -> (Vec<Vec<T>>, Array2<T>) {
        match (self, trace) {
            (Self::Unfactored(net), BaseTrace::Unfactored(t)) => {
                let (g, dx) = net.backward(t, grad_out);
                (vec![g], dx)
            }
            (Self::GlobalFactored { parent_sets, nets }, BaseTrace::GlobalFactored(traces)) => {
                let mut dx = Array2::zeros(x.raw_dim());
                let mut grads = Vec::with_capacity(nets.len());
                for ((p, net), (_, t)) in parent_sets.iter().zip(nets).zip(traces) {
                    let j = p.child_index;
                    let go = grad_out.select(ndarray::Axis(1), &[j, state_dim + j]);
                    let (g, dxp) = net.backward(t, go.view());
                    for (k, &col) in p.parent_indices.iter().enumerate() {
                        let mut c = dx.column_mut(col);
                        c += &dxp.column(k);
                    }
                    grads.push(g);
                }
                (grads, dx)
            }
            (Self::LocalFactored(comps), BaseTrace::LocalFactored(traces)) => {
                let mut dx = Array2::zeros(x.raw_dim());
                let mut grads = Vec::with_capacity(2 * comps.len());
                for (j, (c, t)) in comps.iter().zip(traces).enumerate() {
                    let m = mask.slice(s![.., j..;state_dim]);
                    let go = grad_out.select(ndarray::Axis(1), &[j, state_dim + j]);
                    let (ge, gh, dxj) = c.backward(x, m, t, go.view());
                    dx += &dxj;
                    grads.push(ge);
                    grads.push(gh);
                }
                (grads, dx)
            }
            _ => unreachable!("trace produced by a different architecture"),
        }
    }
}
