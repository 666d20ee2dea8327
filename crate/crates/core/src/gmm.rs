//! Full-covariance Gaussian mixture models.
//!
//! Fitting is plain expectation maximization with k-means++ seeding.
//! Besides density evaluation and sampling, a model can be conditioned on a
//! subset of its coordinates, which yields another mixture over the
//! remaining coordinates. That operation is what lets the parent sampler
//! chain overlapping parent sets.

use std::path::Path;

use log::debug;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, cholesky_solve_mat, gaussian_log_density};
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Debug, Clone)]
pub struct GmmModel<T: Scalar> {
    weights: Vec<T>,
    means: Vec<Array1<T>>,
    covariances: Vec<Array2<T>>,
    reg_eps: T,
    /// Cholesky factors of `covariances`, cached at construction.
    factors: Vec<Array2<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop when the relative log-likelihood improvement drops below this.
    pub tol: f64,
    /// Added to every covariance diagonal in each M-step.
    pub reg_eps: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-6,
            reg_eps: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit<T: Scalar> {
    pub model: GmmModel<T>,
    /// Total training log-likelihood, one entry per parameter iterate
    /// (the initial guess first, the returned model last).
    pub log_likelihood: Vec<T>,
    /// Number of empty-component rescues performed.
    pub reseeds: usize,
    pub converged: bool,
}

impl<T: Scalar> GmmModel<T> {
    pub fn new(
        weights: Vec<T>,
        means: Vec<Array1<T>>,
        covariances: Vec<Array2<T>>,
        reg_eps: T,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        }
        if means.len() != k || covariances.len() != k {
            return Err(Error::InvalidArgument(
                "weights, means and covariances disagree on component count".into(),
            ));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidArgument("zero-dimensional mixture".into()));
        }
        for (m, c) in means.iter().zip(&covariances) {
            if m.len() != dim || c.dim() != (dim, dim) {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: m.len().max(c.nrows()),
                    context: "mixture component",
                });
            }
        }
        if weights.iter().any(|w| *w < T::zero() || !w.is_finite()) {
            return Err(Error::InvalidArgument("mixture weights must be nonnegative".into()));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e-9).max(T::epsilon() * T::lit(64.0)) {
            return Err(Error::InvalidArgument(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        let mut covariances = covariances;
        let mut factors = Vec::with_capacity(k);
        for c in covariances.iter_mut() {
            symmetrize(c);
            let (l, jitter) = cholesky_jittered(c.view(), reg_eps);
            if jitter > T::zero() {
                for i in 0..dim {
                    c[[i, i]] += jitter;
                }
            }
            factors.push(l);
        }
        Ok(Self {
            weights,
            means,
            covariances,
            reg_eps,
            factors,
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn means(&self) -> &[Array1<T>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Array2<T>] {
        &self.covariances
    }

    pub fn reg_eps(&self) -> T {
        self.reg_eps
    }

    /// Per-component `ln w_k + ln N(x; mu_k, Sigma_k)`.
    pub fn component_log_joint(&self, x: ArrayView1<T>) -> Vec<T> {
        (0..self.n_components())
            .map(|k| {
                self.weights[k].ln()
                    + gaussian_log_density(x, self.means[k].view(), self.factors[k].view())
            })
            .collect()
    }

    pub fn log_density(&self, x: &[T]) -> Result<T> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: x.len(),
                context: "mixture density input",
            });
        }
        Ok(log_sum_exp(&self.component_log_joint(ArrayView1::from(x))))
    }

    /// Mixture mean `sum_k w_k mu_k`.
    pub fn mean(&self) -> Array1<T> {
        let mut m = Array1::zeros(self.dim());
        for (w, mu) in self.weights.iter().zip(&self.means) {
            m.scaled_add(*w, mu);
        }
        m
    }

    /// Mixture covariance (law of total variance).
    pub fn covariance(&self) -> Array2<T> {
        let mean = self.mean();
        let d = self.dim();
        let mut c = Array2::zeros((d, d));
        for k in 0..self.n_components() {
            let diff = &self.means[k] - &mean;
            let outer = outer(diff.view(), diff.view());
            c.scaled_add(self.weights[k], &(&self.covariances[k] + &outer));
        }
        c
    }

    pub fn sample_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w.as_f64();
            if u < acc {
                return k;
            }
        }
        // rounding left the tail uncovered; take the last nonzero component
        self.weights
            .iter()
            .rposition(|w| *w > T::zero())
            .unwrap_or(self.n_components() - 1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let k = self.sample_component(rng);
        let z: Array1<T> = (0..self.dim())
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                T::lit(v)
            })
            .collect();
        (&self.means[k] + &self.factors[k].dot(&z)).to_vec()
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<T> {
        let mut out = Array2::zeros((n, self.dim()));
        for mut row in out.rows_mut() {
            row.assign(&ArrayView1::from(&self.sample(rng)));
        }
        out
    }

    /// Mixture over the coordinates `idx` (in that order).
    pub fn marginal(&self, idx: &[usize]) -> Result<GmmModel<T>> {
        self.check_indices(idx)?;
        let means = self.means.iter().map(|m| select(m.view(), idx)).collect();
        let covs = self
            .covariances
            .iter()
            .map(|c| select2(c.view(), idx, idx))
            .collect();
        GmmModel::new(self.weights.clone(), means, covs, self.reg_eps)
    }

    /// Conditional mixture over the unobserved coordinates (ascending order)
    /// given `x[observed_idx] = observed_vals`.
    pub fn condition(&self, observed_idx: &[usize], observed_vals: &[T]) -> Result<GmmModel<T>> {
        self.condition_with_normalizer(observed_idx, observed_vals)
            .map(|(m, _)| m)
    }

    /// Like [`condition`](Self::condition), also returning the log marginal
    /// density of the observed values, which normalizes the new weights.
    pub fn condition_with_normalizer(
        &self,
        observed_idx: &[usize],
        observed_vals: &[T],
    ) -> Result<(GmmModel<T>, T)> {
        self.check_indices(observed_idx)?;
        if observed_idx.is_empty() || observed_idx.len() >= self.dim() {
            return Err(Error::InvalidArgument(
                "conditioning set must be a strict nonempty subset".into(),
            ));
        }
        if observed_vals.len() != observed_idx.len() {
            return Err(Error::DimMismatch {
                expected: observed_idx.len(),
                got: observed_vals.len(),
                context: "observed values",
            });
        }
        let unobserved: Vec<usize> = (0..self.dim())
            .filter(|i| !observed_idx.contains(i))
            .collect();
        let xo = ArrayView1::from(observed_vals);
        let k_count = self.n_components();
        let mut log_w = Vec::with_capacity(k_count);
        let mut means = Vec::with_capacity(k_count);
        let mut covs = Vec::with_capacity(k_count);
        for k in 0..k_count {
            let cov = &self.covariances[k];
            let mu = &self.means[k];
            let s_oo = select2(cov.view(), observed_idx, observed_idx);
            let s_ou = select2(cov.view(), observed_idx, &unobserved);
            let s_uu = select2(cov.view(), &unobserved, &unobserved);
            let mu_o = select(mu.view(), observed_idx);
            let mu_u = select(mu.view(), &unobserved);
            let (l_oo, _) = cholesky_jittered(s_oo.view(), self.reg_eps);
            // gain^T = Sigma_oo^{-1} Sigma_ou
            let gain_t = cholesky_solve_mat(l_oo.view(), s_ou.view());
            let diff = &xo - &mu_o;
            let mean_c = &mu_u + &gain_t.t().dot(&diff);
            let mut cov_c = &s_uu - &s_ou.t().dot(&gain_t);
            symmetrize(&mut cov_c);
            log_w.push(
                self.weights[k].ln() + gaussian_log_density(xo, mu_o.view(), l_oo.view()),
            );
            means.push(mean_c);
            covs.push(cov_c);
        }
        let norm = log_sum_exp(&log_w);
        let weights: Vec<T> = if norm.is_finite() {
            log_w.iter().map(|lw| (*lw - norm).exp()).collect()
        } else {
            // observed point has zero density under every component: fall back to prior weights
            self.weights.clone()
        };
        let total: T = weights.iter().copied().sum();
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok((GmmModel::new(weights, means, covs, self.reg_eps)?, norm))
    }

    fn check_indices(&self, idx: &[usize]) -> Result<()> {
        for (n, &i) in idx.iter().enumerate() {
            if i >= self.dim() {
                return Err(Error::InvalidArgument(format!(
                    "coordinate {i} out of range for dim {}",
                    self.dim()
                )));
            }
            if idx[..n].contains(&i) {
                return Err(Error::InvalidArgument(format!("duplicate coordinate {i}")));
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> GmmFile {
        GmmFile {
            weights: self.weights.iter().map(|w| w.as_f64()).collect(),
            means: self
                .means
                .iter()
                .map(|m| m.iter().map(|v| v.as_f64()).collect())
                .collect(),
            covariances: self
                .covariances
                .iter()
                .map(|c| c.iter().map(|v| v.as_f64()).collect())
                .collect(),
            dim: self.dim(),
            n_components: self.n_components(),
            reg_eps: self.reg_eps.as_f64(),
        }
    }

    pub fn from_file(f: &GmmFile) -> Result<Self> {
        if f.weights.len() != f.n_components {
            return Err(Error::Format("n_components disagrees with weights".into()));
        }
        let d = f.dim;
        let means = f
            .means
            .iter()
            .map(|m| {
                if m.len() != d {
                    return Err(Error::Format("mean length disagrees with dim".into()));
                }
                Ok(m.iter().map(|&v| T::lit(v)).collect())
            })
            .collect::<Result<Vec<Array1<T>>>>()?;
        let covs = f
            .covariances
            .iter()
            .map(|c| {
                Array2::from_shape_vec((d, d), c.iter().map(|&v| T::lit(v)).collect())
                    .map_err(|_| Error::Format("covariance is not dim x dim".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        GmmModel::new(
            f.weights.iter().map(|&w| T::lit(w)).collect(),
            means,
            covs,
            T::lit(f.reg_eps),
        )
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(&self.to_file())?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let f: GmmFile = serde_json::from_slice(&std::fs::read(path)?)?;
        Self::from_file(&f)
    }
}

/// Serialized mixture; covariances are row-major `dim * dim` arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFile {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
    pub dim: usize,
    pub n_components: usize,
    #[serde(default = "default_reg_eps")]
    pub reg_eps: f64,
}

fn default_reg_eps() -> f64 {
    1e-6
}

/// Fits a mixture to the rows of `data` by expectation maximization.
pub fn fit_em<T: Scalar>(
    data: ArrayView2<T>,
    n_components: usize,
    config: &EmConfig,
) -> Result<GmmFit<T>> {
    let (n, d) = data.dim();
    if d == 0 {
        return Err(Error::InvalidArgument("data has no columns".into()));
    }
    if n_components == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    if n < n_components {
        return Err(Error::Degenerate(format!(
            "{n} points cannot support {n_components} components"
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training data".into()));
    }
    let reg = T::lit(config.reg_eps);
    let mut rng = crate::seeds::rng(config.seed);

    let global_cov = regularized(sample_covariance(data), reg);
    let mut means = kmeans_pp(data, n_components, &mut rng);
    let mut covs = vec![global_cov.clone(); n_components];
    let mut weights = vec![T::one() / T::lit(n_components as f64); n_components];

    let mut history = Vec::new();
    let mut reseeds = 0;
    let mut converged = false;
    let mut resp = Array2::<T>::zeros((n, n_components));
    for iter in 0..=config.max_iters {
        let model = GmmModel::new(weights.clone(), means.clone(), covs.clone(), reg)?;
        let ll = e_step(&model, data, &mut resp);
        history.push(ll);
        if let [.., prev, last] = history[..] {
            let rel = (last - prev) / prev.abs().max(T::min_positive_value());
            if rel.abs() < T::lit(config.tol) {
                converged = true;
            }
        }
        if converged || iter == config.max_iters {
            debug!("em: {} iterations, ll {last}", iter, last = ll);
            return Ok(GmmFit {
                model,
                log_likelihood: history,
                reseeds,
                converged,
            });
        }
        // M-step
        let nk = resp.sum_axis(Axis(0));
        let empty_floor = T::lit(1e-10) * T::lit(n as f64);
        for k in 0..n_components {
            if nk[k] <= empty_floor {
                let i = rng.random_range(0..n);
                means[k] = data.row(i).to_owned();
                covs[k] = global_cov.clone();
                weights[k] = T::one() / T::lit(n as f64);
                reseeds += 1;
                continue;
            }
            let mu = resp.column(k).dot(&data) / nk[k];
            let mut c = Array2::<T>::zeros((d, d));
            let mut diff = vec![T::zero(); d];
            for (x, r) in data.rows().into_iter().zip(resp.column(k)) {
                for j in 0..d {
                    diff[j] = x[j] - mu[j];
                }
                for a in 0..d {
                    let ra = *r * diff[a];
                    for b in 0..=a {
                        c[[a, b]] += ra * diff[b];
                    }
                }
            }
            for a in 0..d {
                for b in 0..a {
                    c[[b, a]] = c[[a, b]];
                }
            }
            c /= nk[k];
            means[k] = mu;
            covs[k] = regularized(c, reg);
            weights[k] = nk[k] / T::lit(n as f64);
        }
        let total: T = weights.iter().copied().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
    }
    unreachable!("loop returns on its final iteration")
}

/// Fills `resp` with responsibilities and returns the total log-likelihood.
fn e_step<T: Scalar>(model: &GmmModel<T>, data: ArrayView2<T>, resp: &mut Array2<T>) -> T {
    let d = model.dim();
    let kc = model.n_components();
    let log_2pi = (T::two() * T::PI()).ln();
    let consts: Vec<T> = (0..kc)
        .map(|k| {
            model.weights[k].ln()
                - T::half()
                    * (T::lit(d as f64) * log_2pi
                        + crate::linalg::log_det_from_cholesky(model.factors[k].view()))
        })
        .collect();
    // the Mahalanobis term is |L^{-1} (x - mu)|^2
    let inverses: Vec<Array2<T>> = model
        .factors
        .iter()
        .map(|l| crate::linalg::lower_inverse(l.view()))
        .collect();
    let mut diff = vec![T::zero(); d];
    let mut total = T::zero();
    for (x, mut row) in data.rows().into_iter().zip(resp.rows_mut()) {
        let out = row.as_slice_mut().expect("row-major");
        for k in 0..kc {
            let mu = &model.means[k];
            for j in 0..d {
                diff[j] = x[j] - mu[j];
            }
            let li = &inverses[k];
            let mut q = T::zero();
            for r in 0..d {
                let mut z = T::zero();
                for c in 0..=r {
                    z += li[[r, c]] * diff[c];
                }
                q += z * z;
            }
            out[k] = consts[k] - T::half() * q;
        }
        let max = out.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in out.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in out.iter_mut() {
            *v /= sum;
        }
        total += max + sum.ln();
    }
    total
}

fn kmeans_pp<T: Scalar, R: Rng + ?Sized>(
    data: ArrayView2<T>,
    k: usize,
    rng: &mut R,
) -> Vec<Array1<T>> {
    let n = data.nrows();
    let mut centers = vec![data.row(rng.random_range(0..n)).to_owned()];
    let mut d2: Vec<f64> = data
        .rows()
        .into_iter()
        .map(|x| sq_dist(x, centers[0].view()))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, v) in d2.iter().enumerate() {
                acc += v;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = data.row(next).to_owned();
        for (i, x) in data.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, c.view()));
        }
        centers.push(c);
    }
    centers
}

fn sq_dist<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = (*x - *y).as_f64();
            d * d
        })
        .sum()
}

/// Maximum-likelihood (biased) covariance of the rows of `data`.
pub fn sample_covariance<T: Scalar>(data: ArrayView2<T>) -> Array2<T> {
    let n = T::lit(data.nrows() as f64);
    let mean = data.sum_axis(Axis(0)) / n;
    let centered = &data - &mean;
    centered.t().dot(&centered) / n
}

fn regularized<T: Scalar>(mut c: Array2<T>, reg: T) -> Array2<T> {
    for i in 0..c.nrows() {
        c[[i, i]] += reg;
    }
    c
}

fn symmetrize<T: Scalar>(c: &mut Array2<T>) {
    let d = c.nrows();
    for a in 0..d {
        for b in 0..a {
            let v = T::half() * (c[[a, b]] + c[[b, a]]);
            c[[a, b]] = v;
            c[[b, a]] = v;
        }
    }
}

fn outer<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> Array2<T> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

fn select<T: Scalar>(v: ArrayView1<T>, idx: &[usize]) -> Array1<T> {
    idx.iter().map(|&i| v[i]).collect()
}

fn select2<T: Scalar>(m: ArrayView2<T>, rows: &[usize], cols: &[usize]) -> Array2<T> {
    Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| m[[rows[i], cols[j]]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symmetric_eigenvalues;
    use crate::seeds;
    use ndarray::array;

    fn two_blob_data(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeds::rng(seed);
        let mut out = Array2::zeros((n, 2));
        for mut row in out.rows_mut() {
            let c = if rng.random::<f64>() < 0.5 { 0.0 } else { 5.0 };
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            row[0] = c + a;
            row[1] = c + b;
        }
        out
    }

    fn std_normal_1d() -> GmmModel<f64> {
        GmmModel::<f64>::new(vec![1.0], vec![array![0.0]], vec![array![[1.0]]], 1e-6).unwrap()
    }

    #[test]
    fn single_component_is_closed_form() {
        let data = two_blob_data(500, 1);
        let cfg = EmConfig::default();
        let fit = fit_em(data.view(), 1, &cfg).unwrap();
        let mean = data.mean_axis(Axis(0)).unwrap();
        let cov = sample_covariance(data.view());
        let m = &fit.model;
        for i in 0..2 {
            assert!((m.means()[0][i] - mean[i]).abs() < 1e-10);
            for j in 0..2 {
                let expect = cov[[i, j]] + if i == j { cfg.reg_eps } else { 0.0 };
                assert!((m.covariances()[0][[i, j]] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn recovers_two_well_separated_blobs() {
        let data = two_blob_data(10_000, 2);
        let fit = fit_em(data.view(), 2, &EmConfig::default()).unwrap();
        let m = &fit.model;
        let truth = [[0.0, 0.0], [5.0, 5.0]];
        let err = |perm: [usize; 2]| -> f64 {
            (0..2)
                .map(|k| {
                    let mu = &m.means()[perm[k]];
                    ((mu[0] - truth[k][0]).abs()).max((mu[1] - truth[k][1]).abs())
                })
                .fold(0.0, f64::max)
        };
        let best = err([0, 1]).min(err([1, 0]));
        assert!(best < 0.1, "mean error {best}");
    }

    #[test]
    fn log_likelihood_is_monotone_and_invariants_hold() {
        let data = two_blob_data(3000, 3);
        let fit = fit_em(data.view(), 4, &EmConfig::default()).unwrap();
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
        let m = &fit.model;
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(m.weights().iter().all(|w| *w >= 0.0));
        for c in m.covariances() {
            let ev = symmetric_eigenvalues(c.view());
            assert!(ev[0] >= 1e-6 * (1.0 - 1e-6));
        }
    }

    #[test]
    fn too_few_points_is_an_error() {
        let data = Array2::<f64>::zeros((3, 2));
        assert!(matches!(
            fit_em(data.view(), 4, &EmConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn duplicated_points_do_not_break_fit() {
        // many identical rows tempt components to collapse onto a point mass
        let mut data = two_blob_data(400, 4);
        for i in 0..200 {
            data[[i, 0]] = 1.0;
            data[[i, 1]] = 1.0;
        }
        let fit = fit_em(data.view(), 8, &EmConfig::default()).unwrap();
        assert!(fit.model.log_density(&[1.0, 1.0]).unwrap().is_finite());
    }

    #[test]
    fn standard_normal_density_at_zero() {
        let ld = std_normal_1d().log_density(&[0.0]).unwrap();
        assert!((ld - (-0.5 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
        assert!((ld + 0.9189).abs() < 1e-4);
    }

    #[test]
    fn equal_weight_mixture_density_is_logsumexp() {
        let m = GmmModel::<f64>::new(
            vec![0.5, 0.5],
            vec![array![0.0, 0.0], array![1.0, -1.0]],
            vec![array![[1.0, 0.2], [0.2, 2.0]], array![[0.5, 0.0], [0.0, 0.5]]],
            1e-6,
        )
        .unwrap();
        let x = [0.3, 0.4];
        let comps: Vec<f64> = (0..2)
            .map(|k| {
                gaussian_log_density(
                    ArrayView1::from(&x),
                    m.means()[k].view(),
                    m.factors[k].view(),
                )
            })
            .collect();
        let expect = log_sum_exp(&comps) + 0.5f64.ln();
        assert!((m.log_density(&x).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_one() {
        let m = GmmModel::<f64>::new(
            vec![0.3, 0.7],
            vec![array![-1.0, 0.5], array![1.5, -0.5]],
            vec![array![[0.6, 0.2], [0.2, 0.4]], array![[0.3, -0.1], [-0.1, 0.5]]],
            1e-6,
        )
        .unwrap();
        // midpoint rule over a box covering +-6 sigma of every component
        let (lo, hi, steps) = (-7.0, 7.0, 700);
        let h = (hi - lo) / steps as f64;
        let mut total = 0.0;
        for i in 0..steps {
            for j in 0..steps {
                let x = [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h];
                total += m.log_density(&x).unwrap().exp() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 0.01, "{total}");
    }

    #[test]
    fn tiny_covariance_samples_hug_the_mean() {
        let m = GmmModel::<f64>::new(vec![1.0], vec![array![0.3, -0.2]], vec![array![[1e-6, 0.0], [0.0, 1e-6]]], 1e-6)
            .unwrap();
        let mut rng = seeds::rng(0);
        for _ in 0..1000 {
            let x = m.sample(&mut rng);
            assert!((x[0] - 0.3).abs() < 5e-3 && (x[1] + 0.2).abs() < 5e-3);
        }
    }

    #[test]
    fn sample_mean_within_three_standard_errors() {
        let data = two_blob_data(2000, 5);
        let m = fit_em(data.view(), 3, &EmConfig::default()).unwrap().model;
        let n = 10_000;
        let xs = m.sample_n(n, &mut seeds::rng(6));
        let emp = xs.mean_axis(Axis(0)).unwrap();
        let mu = m.mean();
        let cov = m.covariance();
        for i in 0..2 {
            let se = (cov[[i, i]] / n as f64).sqrt();
            assert!((emp[i] - mu[i]).abs() < 3.0 * se, "dim {i}: {} vs {}", emp[i], mu[i]);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = std_normal_1d();
        let a = m.sample_n(50, &mut seeds::rng(11));
        let b = m.sample_n(50, &mut seeds::rng(11));
        assert_eq!(a, b);
    }

    #[test]
    fn bivariate_conditioning_identity() {
        let (mu1, mu2, s11, s12, s22) = (0.5, -1.0, 2.0, 0.8, 1.5);
        let m = GmmModel::<f64>::new(
            vec![1.0],
            vec![array![mu1, mu2]],
            vec![array![[s11, s12], [s12, s22]]],
            1e-6,
        )
        .unwrap();
        let c = m.condition(&[0], &[1.3]).unwrap();
        assert_eq!(c.dim(), 1);
        let expect_mean = mu2 + s12 / s11 * (1.3 - mu1);
        let expect_var = s22 - s12 * s12 / s11;
        assert!((c.means()[0][0] - expect_mean).abs() < 1e-12);
        assert!((c.covariances()[0][[0, 0]] - expect_var).abs() < 1e-12);
    }

    #[test]
    fn diagonal_components_only_reweight() {
        let m = GmmModel::<f64>::new(
            vec![0.4, 0.6],
            vec![array![0.0, 1.0], array![2.0, -1.0]],
            vec![array![[1.0, 0.0], [0.0, 0.5]], array![[0.5, 0.0], [0.0, 2.0]]],
            1e-6,
        )
        .unwrap();
        let c = m.condition(&[0], &[1.5]).unwrap();
        for k in 0..2 {
            assert!((c.means()[k][0] - m.means()[k][1]).abs() < 1e-12);
            assert!((c.covariances()[k][[0, 0]] - m.covariances()[k][[1, 1]]).abs() < 1e-12);
        }
        let l0 = 0.4f64.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * 1.5 * 1.5;
        let l1 = 0.6f64.ln() - 0.5 * (2.0 * std::f64::consts::PI * 0.5).ln() - 0.5 * 0.25 / 0.5;
        let w0 = 1.0 / (1.0 + (l1 - l0).exp());
        assert!((c.weights()[0] - w0).abs() < 1e-12);
    }

    #[test]
    fn normalizer_equals_marginal_density() {
        let data = two_blob_data(1500, 7);
        let data3 = ndarray::concatenate![Axis(1), data, data.column(0).to_owned().insert_axis(Axis(1)) * 0.5];
        let m = fit_em(data3.view(), 3, &EmConfig::default()).unwrap().model;
        let obs = [2usize, 0];
        let vals = [1.1, 2.0];
        let (_, norm) = m.condition_with_normalizer(&obs, &vals).unwrap();
        let marg = m.marginal(&obs).unwrap().log_density(&vals).unwrap();
        assert!((norm - marg).abs() < 1e-9);
    }

    #[test]
    fn conditioning_rejects_bad_subsets() {
        let m = std_normal_1d();
        assert!(m.condition(&[0], &[0.0]).is_err());
        let m2 = GmmModel::<f64>::new(vec![1.0], vec![array![0.0, 0.0]], vec![Array2::eye(2)], 1e-6).unwrap();
        assert!(m2.condition(&[], &[]).is_err());
        assert!(m2.condition(&[0, 0], &[1.0, 1.0]).is_err());
        assert!(m2.condition(&[3], &[1.0]).is_err());
    }

    #[test]
    fn singular_observed_block_does_not_crash() {
        let m = GmmModel::<f64>::new(
            vec![1.0],
            vec![array![0.0, 0.0, 0.0]],
            vec![array![[1.0, 1.0, 0.3], [1.0, 1.0, 0.3], [0.3, 0.3, 1.0]]],
            1e-6,
        )
        .unwrap();
        let c = m.condition(&[0, 1], &[0.5, 0.5]).unwrap();
        assert!(c.means()[0][0].is_finite());
    }

    #[test]
    fn json_round_trip_and_f32() {
        let data = two_blob_data(500, 8);
        let m = fit_em(data.view(), 2, &EmConfig::default()).unwrap().model;
        let back: GmmModel<f64> = GmmModel::from_file(&m.to_file()).unwrap();
        assert!((back.log_density(&[0.1, 0.2]).unwrap() - m.log_density(&[0.1, 0.2]).unwrap()).abs() < 1e-12);

        let data32 = data.mapv(|v| v as f32);
        let m32 = fit_em(data32.view(), 2, &EmConfig { reg_eps: 1e-4, ..Default::default() })
            .unwrap()
            .model;
        let ld32 = m32.log_density(&[0.1, 0.2]).unwrap() as f64;
        assert!((ld32 - m.log_density(&[0.1, 0.2]).unwrap()).abs() < 1e-2);
    }
}
