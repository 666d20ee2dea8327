use ndarray::{Array2, ArrayView2};

use crate::scalar::Scalar;

pub const LOGSTD_MIN: f64 = -7.0;
pub const LOGSTD_MAX: f64 = 2.0;

/// Mean squared error over all entries and its gradient.
pub fn mse_loss<T: Scalar>(pred: ArrayView2<T>, target: ArrayView2<T>) -> (T, Array2<T>) {
    assert_eq!(pred.shape(), target.shape(), "mse shape mismatch");
    let n = T::lit(pred.len().max(1) as f64);
    let diff = &pred - &target;
    let loss = diff.iter().map(|d| *d * *d).sum::<T>() / n;
    let grad = diff.mapv(|d| T::two() * d / n);
    (loss, grad)
}

/// Gaussian negative log-likelihood for a head emitting `[mean | logstd]`
/// (`2d` columns) against `d`-column targets, averaged over rows and
/// dimensions. The log-std is clamped to `[LOGSTD_MIN, LOGSTD_MAX]`; the
/// gradient through the clamp is zero outside the interval.
pub fn gaussian_nll<T: Scalar>(output: ArrayView2<T>, target: ArrayView2<T>) -> (T, Array2<T>) {
    let d = target.ncols();
    assert_eq!(output.ncols(), 2 * d, "gaussian head needs 2d outputs");
    assert_eq!(output.nrows(), target.nrows(), "row count mismatch");
    let count = T::lit((target.len()).max(1) as f64);
    let half_ln_2pi = T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
    let (lo, hi) = (T::lit(LOGSTD_MIN), T::lit(LOGSTD_MAX));
    let mut grad = Array2::zeros(output.raw_dim());
    let mut loss = T::zero();
    for r in 0..target.nrows() {
        for j in 0..d {
            let mu = output[[r, j]];
            let raw = output[[r, d + j]];
            let ls = raw.max(lo).min(hi);
            let inv_sigma = (-ls).exp();
            let z = (target[[r, j]] - mu) * inv_sigma;
            loss += T::half() * z * z + ls + half_ln_2pi;
            grad[[r, j]] = -z * inv_sigma / count;
            if raw > lo && raw < hi {
                grad[[r, d + j]] = (T::one() - z * z) / count;
            }
        }
    }
    (loss / count, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn nll_mean_gradient_vanishes_at_target() {
        let out = array![[0.3, -0.1, 0.0, -1.0]];
        let tgt = array![[0.3, -0.1]];
        let (_, g) = gaussian_nll(out.view(), tgt.view());
        assert_eq!(g[[0, 0]], 0.0);
        assert_eq!(g[[0, 1]], 0.0);
    }

    #[test]
    fn nll_matches_closed_form() {
        let out = array![[1.0, 0.5f64.ln()]];
        let tgt = array![[2.0]];
        let (l, _) = gaussian_nll(out.view(), tgt.view());
        let z: f64 = 2.0;
        let expect = 0.5 * z * z + 0.5f64.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((l - expect).abs() < 1e-12);
    }

    #[test]
    fn clamp_blocks_logstd_gradient() {
        let out: Array2<f64> = array![[0.0, 5.0], [0.0, -9.0]];
        let tgt = array![[1.0], [1.0]];
        let (l, g) = gaussian_nll(out.view(), tgt.view());
        assert!(l.is_finite());
        assert_eq!(g[[0, 1]], 0.0);
        assert_eq!(g[[1, 1]], 0.0);
    }

    #[test]
    fn mse_gradient_is_scaled_residual() {
        let (l, g) = mse_loss(array![[1.0, 3.0]].view(), array![[0.0, 1.0]].view());
        assert_eq!(l, 2.5);
        assert_eq!(g, array![[1.0, 2.0]]);
    }
}
