//! Feed-forward networks with hand-written reverse-mode gradients.
//!
//! A network is a stack of affine layers with rectifier activations between
//! them and an identity output. All parameters live in one flat vector
//! (per layer: row-major `in x out` weights, then `out` biases), which keeps
//! optimizer updates, Polyak averaging and serialization trivial.

mod adam;
mod loss;

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use adam::{Adam, AdamConfig};
pub use loss::{gaussian_nll, mse_loss, LOGSTD_MAX, LOGSTD_MIN};

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNet<T: Scalar> {
    dims: Vec<usize>,
    params: Vec<T>,
}

/// Activations recorded by a forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct Trace<T: Scalar> {
    /// `acts[l]` is the input to layer `l`; the last entry is the output.
    acts: Vec<Array2<T>>,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> ArrayView2<'_, T> {
        self.acts.last().expect("trace holds the input").view()
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl<T: Scalar> FeedForwardNet<T> {
    /// `dims = [input, hidden.., output]`.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "network dims {dims:?} need >= 2 nonzero entries"
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            params: vec![T::zero(); param_count(dims)],
        })
    }

    /// Fan-in scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases alike.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        let mut off = 0;
        for w in dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let n = w[0] * w[1] + w[1];
            for p in &mut net.params[off..off + n] {
                *p = T::lit(rng.random_range(-bound..bound));
            }
            off += n;
        }
        Ok(net)
    }

    pub fn from_params(dims: &[usize], params: Vec<T>) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        if params.len() != net.params.len() {
            return Err(Error::DimMismatch {
                expected: net.params.len(),
                got: params.len(),
                context: "network parameters",
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("dims nonempty")
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count(&self.dims[..=layer])
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, T> {
        let (i, o) = (self.dims[layer], self.dims[layer + 1]);
        let off = self.layer_offset(layer);
        ArrayView2::from_shape((i, o), &self.params[off..off + i * o]).expect("layout")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, T> {
        let (i, o) = (self.dims[layer], self.dims[layer + 1]);
        let off = self.layer_offset(layer) + i * o;
        ArrayView1::from(&self.params[off..off + o])
    }

    pub fn weight_mut(&mut self, layer: usize) -> ArrayViewMut2<'_, T> {
        let (i, o) = (self.dims[layer], self.dims[layer + 1]);
        let off = self.layer_offset(layer);
        ArrayViewMut2::from_shape((i, o), &mut self.params[off..off + i * o]).expect("layout")
    }

    pub fn bias_mut(&mut self, layer: usize) -> ArrayViewMut1<'_, T> {
        let (i, o) = (self.dims[layer], self.dims[layer + 1]);
        let off = self.layer_offset(layer) + i * o;
        ArrayViewMut1::from(&mut self.params[off..off + o])
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
                context: "network input",
            });
        }
        Ok(())
    }

    /// Batched forward pass; rows are independent inputs.
    pub fn forward(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for l in 0..self.n_layers() {
            let mut z = h.dot(&self.weight(l));
            z += &self.bias(l);
            if l + 1 < self.n_layers() {
                z.mapv_inplace(relu);
            }
            h = z;
        }
        Ok(h)
    }

    pub fn forward_one(&self, x: &[T]) -> Result<Vec<T>> {
        let x = ArrayView2::from_shape((1, x.len()), x).expect("row");
        Ok(self.forward(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_trace(&self, x: ArrayView2<T>) -> Result<Trace<T>> {
        self.check_input(&x)?;
        let mut acts = Vec::with_capacity(self.n_layers() + 1);
        acts.push(x.to_owned());
        for l in 0..self.n_layers() {
            let mut z = acts[l].dot(&self.weight(l));
            z += &self.bias(l);
            if l + 1 < self.n_layers() {
                z.mapv_inplace(relu);
            }
            acts.push(z);
        }
        Ok(Trace { acts })
    }

    /// Reverse pass. `grad_out` is dLoss/dOutput for the traced batch; the
    /// result is (dLoss/dParams in the flat layout, dLoss/dInput).
    pub fn backward(&self, trace: &Trace<T>, grad_out: ArrayView2<T>) -> (Vec<T>, Array2<T>) {
        let mut grads = vec![T::zero(); self.params.len()];
        let mut delta = grad_out.to_owned();
        for l in (0..self.n_layers()).rev() {
            if l + 1 < self.n_layers() {
                // rectifier derivative from the stored post-activation
                ndarray::Zip::from(&mut delta)
                    .and(&trace.acts[l + 1])
                    .for_each(|d, &a| {
                        if a <= T::zero() {
                            *d = T::zero();
                        }
                    });
            }
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            let off = self.layer_offset(l);
            {
                let gw = trace.acts[l].t().dot(&delta);
                let dst = &mut grads[off..off + i * o];
                for (d, s) in dst.iter_mut().zip(gw.iter()) {
                    *d = *s;
                }
                let gb = delta.sum_axis(Axis(0));
                for (d, s) in grads[off + i * o..off + i * o + o].iter_mut().zip(gb.iter()) {
                    *d = *s;
                }
            }
            delta = delta.dot(&self.weight(l).t());
        }
        (grads, delta)
    }

    /// Loss and parameter gradient for `loss_fn`, which maps the batch
    /// output to `(loss, dLoss/dOutput)`.
    pub fn gradient<F>(&self, x: ArrayView2<T>, loss_fn: F) -> Result<(T, Vec<T>)>
    where
        F: FnOnce(ArrayView2<T>) -> (T, Array2<T>),
    {
        let trace = self.forward_trace(x)?;
        let (loss, g) = loss_fn(trace.output());
        let (grads, _) = self.backward(&trace, g.view());
        Ok((loss, grads))
    }

    /// `self <- tau * other + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, other: &Self, tau: T) {
        debug_assert_eq!(self.dims, other.dims);
        for (p, q) in self.params.iter_mut().zip(&other.params) {
            *p = tau * *q + (T::one() - tau) * *p;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn to_file(&self) -> NetFile {
        NetFile {
            dims: self.dims.clone(),
            layers: (0..self.n_layers())
                .map(|l| LayerFile {
                    w: self.weight(l).iter().map(|v| v.as_f64()).collect(),
                    b: self.bias(l).iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_file(f: &NetFile) -> Result<Self> {
        let mut net = Self::zeros(&f.dims)?;
        if f.layers.len() != net.n_layers() {
            return Err(Error::Format("layer count disagrees with dims".into()));
        }
        for (l, layer) in f.layers.iter().enumerate() {
            let (i, o) = (f.dims[l], f.dims[l + 1]);
            if layer.w.len() != i * o || layer.b.len() != o {
                return Err(Error::Format(format!("layer {l} has wrong shape")));
            }
            for (d, s) in net.weight_mut(l).iter_mut().zip(&layer.w) {
                *d = T::lit(*s);
            }
            for (d, s) in net.bias_mut(l).iter_mut().zip(&layer.b) {
                *d = T::lit(*s);
            }
        }
        Ok(net)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(&self.to_file())?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Self::from_file(&serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[inline]
fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Serialized network: layer dims plus row-major `in x out` weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetFile {
    pub dims: Vec<usize>,
    pub layers: Vec<LayerFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}
