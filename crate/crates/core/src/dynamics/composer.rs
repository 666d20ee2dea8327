//! Masked composer: the per-child building block of the locally factored
//! model.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::Result;
use crate::nets::{FeedForwardNet, Trace};
use crate::scalar::Scalar;

/// Predicts one child from all inputs. Each input variable gets its own
/// single-layer rectified embedder `relu(x_i * w_i + b_i)`; embeddings whose
/// mask bit is zero are dropped before summation, and the sum is decoded by
/// a head network into `(mean, logstd)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedComposer<T: Scalar> {
    n_inputs: usize,
    embed_dim: usize,
    /// `[w (n_inputs x embed_dim) | b (n_inputs x embed_dim)]`, row-major.
    embed: Vec<T>,
    head: FeedForwardNet<T>,
}

pub(crate) struct ComposerTrace<T: Scalar> {
    /// Post-activation embeddings, one `n x embed_dim` block per input.
    acts: Vec<Array2<T>>,
    head: Trace<T>,
}

impl<T: Scalar> ComposerTrace<T> {
    pub(crate) fn output(&self) -> ArrayView2<'_, T> {
        self.head.output()
    }
}

impl<T: Scalar> MaskedComposer<T> {
    /// `head_hidden` may be empty, giving a linear decoder.
    pub fn new<R: Rng + ?Sized>(
        n_inputs: usize,
        embed_dim: usize,
        head_hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        // fan-in of an embedder is one
        let embed = (0..2 * n_inputs * embed_dim)
            .map(|_| T::lit(rng.random_range(-1.0..1.0)))
            .collect();
        let mut dims = vec![embed_dim];
        dims.extend_from_slice(head_hidden);
        dims.push(2);
        Ok(Self {
            n_inputs,
            embed_dim,
            embed,
            head: FeedForwardNet::new(&dims, rng)?,
        })
    }

    pub fn from_parts(n_inputs: usize, embed_dim: usize, embed: Vec<T>, head: FeedForwardNet<T>) -> Self {
        assert_eq!(embed.len(), 2 * n_inputs * embed_dim, "embedder size");
        Self {
            n_inputs,
            embed_dim,
            embed,
            head,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn embed_params(&self) -> &[T] {
        &self.embed
    }

    pub fn head(&self) -> &FeedForwardNet<T> {
        &self.head
    }

    pub(crate) fn blocks_mut(&mut self) -> [&mut [T]; 2] {
        [&mut self.embed, self.head.params_mut()]
    }

    pub(crate) fn blocks(&self) -> [&[T]; 2] {
        [&self.embed, self.head.params()]
    }

    fn w(&self) -> ArrayView2<'_, T> {
        let n = self.n_inputs * self.embed_dim;
        ArrayView2::from_shape((self.n_inputs, self.embed_dim), &self.embed[..n]).expect("layout")
    }

    fn b(&self) -> ArrayView2<'_, T> {
        let n = self.n_inputs * self.embed_dim;
        ArrayView2::from_shape((self.n_inputs, self.embed_dim), &self.embed[n..]).expect("layout")
    }

    /// `mask` is `n x n_inputs`, one mask column (this child's) per row.
    pub(crate) fn forward_trace(&self, x: ArrayView2<T>, mask: ArrayView2<T>) -> Result<ComposerTrace<T>> {
        let n = x.nrows();
        let (w, b) = (self.w(), self.b());
        let mut sum = Array2::<T>::zeros((n, self.embed_dim));
        let mut acts = Vec::with_capacity(self.n_inputs);
        for i in 0..self.n_inputs {
            let mut a = Array2::<T>::zeros((n, self.embed_dim));
            Zip::from(a.rows_mut())
                .and(x.column(i))
                .for_each(|mut row, &xi| {
                    Zip::from(&mut row).and(w.row(i)).and(b.row(i)).for_each(|o, &wi, &bi| {
                        let z = xi * wi + bi;
                        *o = if z > T::zero() { z } else { T::zero() };
                    });
                });
            Zip::from(sum.rows_mut())
                .and(a.rows())
                .and(mask.column(i))
                .for_each(|mut srow, arow, &m| {
                    if m != T::zero() {
                        srow += &arow;
                    }
                });
            acts.push(a);
        }
        let head = self.head.forward_trace(sum.view())?;
        Ok(ComposerTrace { acts, head })
    }

    /// Returns `(embed grads, head grads, input grads)`.
    pub(crate) fn backward(
        &self,
        x: ArrayView2<T>,
        mask: ArrayView2<T>,
        trace: &ComposerTrace<T>,
        grad_out: ArrayView2<T>,
    ) -> (Vec<T>, Vec<T>, Array2<T>) {
        let (head_grads, d_sum) = self.head.backward(&trace.head, grad_out);
        let w = self.w();
        let ne = self.n_inputs * self.embed_dim;
        let mut g_embed = vec![T::zero(); 2 * ne];
        let mut d_x = Array2::<T>::zeros(x.raw_dim());
        for i in 0..self.n_inputs {
            // masked inputs receive no gradient at all
            let mut dz = d_sum.clone();
            Zip::from(dz.rows_mut())
                .and(trace.acts[i].rows())
                .and(mask.column(i))
                .for_each(|mut drow, arow, &m| {
                    if m == T::zero() {
                        drow.fill(T::zero());
                    } else {
                        Zip::from(&mut drow).and(&arow).for_each(|d, &a| {
                            if a <= T::zero() {
                                *d = T::zero();
                            }
                        });
                    }
                });
            let gw = dz.t().dot(&x.column(i));
            let gb = dz.sum_axis(Axis(0));
            let off = i * self.embed_dim;
            g_embed[off..off + self.embed_dim].copy_from_slice(gw.as_slice().expect("contiguous"));
            g_embed[ne + off..ne + off + self.embed_dim]
                .copy_from_slice(gb.as_slice().expect("contiguous"));
            let dxi = dz.dot(&w.row(i));
            d_x.slice_mut(s![.., i]).assign(&dxi);
        }
        (g_embed, head_grads, d_x)
    }
}
