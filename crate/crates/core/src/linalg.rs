//! Small dense linear algebra for covariance matrices.
//!
//! Dimensions here are tiny (parent sets of a handful of coordinates), so
//! straightforward O(d^3) routines are all that is needed.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor `L` with `L L^T = a`.
pub fn cholesky<T: Scalar>(a: ArrayView2<T>) -> Result<Array2<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidArgument("cholesky of non-square matrix".into()));
    }
    let mut l = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(Error::Degenerate(format!(
                "matrix not positive definite at pivot {j}"
            )));
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Ok(l)
}

/// Cholesky with escalating diagonal jitter, starting at `reg_eps`. Never
/// fails for a finite symmetric input; returns the factor and the jitter
/// that was added (zero when the plain factorization succeeded).
pub fn cholesky_jittered<T: Scalar>(a: ArrayView2<T>, reg_eps: T) -> (Array2<T>, T) {
    if let Ok(l) = cholesky(a) {
        return (l, T::zero());
    }
    let n = a.nrows();
    let scale = (0..n)
        .map(|i| a[[i, i]].abs())
        .fold(T::one(), T::max);
    let mut jitter = reg_eps.max(T::epsilon() * scale);
    loop {
        let mut b = a.to_owned();
        for i in 0..n {
            b[[i, i]] += jitter;
        }
        if let Ok(l) = cholesky(b.view()) {
            return (l, jitter);
        }
        jitter = jitter * T::lit(10.0);
        if !jitter.is_finite() {
            // unreachable for finite input; fall back to a scaled identity
            let mut l = Array2::zeros((n, n));
            for i in 0..n {
                l[[i, i]] = scale.sqrt();
            }
            return (l, jitter);
        }
    }
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower<T: Scalar>(l: ArrayView2<T>, b: ArrayView1<T>) -> Array1<T> {
    let n = l.nrows();
    let mut x = Array1::<T>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solves `L^T x = b` for lower-triangular `L`.
pub fn solve_upper_t<T: Scalar>(l: ArrayView2<T>, b: ArrayView1<T>) -> Array1<T> {
    let n = l.nrows();
    let mut x = Array1::<T>::zeros(n);
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solves `(L L^T) X = B` column by column.
pub fn cholesky_solve_mat<T: Scalar>(l: ArrayView2<T>, b: ArrayView2<T>) -> Array2<T> {
    let mut x = Array2::<T>::zeros(b.raw_dim());
    for (j, col) in b.columns().into_iter().enumerate() {
        let y = solve_lower(l, col);
        let z = solve_upper_t(l, y.view());
        x.column_mut(j).assign(&z);
    }
    x
}

/// Inverse of a lower-triangular matrix.
pub fn lower_inverse<T: Scalar>(l: ArrayView2<T>) -> Array2<T> {
    let n = l.nrows();
    let mut inv = Array2::zeros((n, n));
    for c in 0..n {
        let mut e = Array1::zeros(n);
        e[c] = T::one();
        inv.column_mut(c).assign(&solve_lower(l, e.view()));
    }
    inv
}

/// `log det(L L^T)`.
pub fn log_det_from_cholesky<T: Scalar>(l: ArrayView2<T>) -> T {
    T::two() * l.diag().iter().map(|d| d.ln()).sum::<T>()
}

/// Log-density of `N(x; mean, L L^T)`.
pub fn gaussian_log_density<T: Scalar>(
    x: ArrayView1<T>,
    mean: ArrayView1<T>,
    l: ArrayView2<T>,
) -> T {
    let d = x.len();
    let diff = &x - &mean;
    let z = solve_lower(l, diff.view());
    let maha: T = z.iter().map(|v| *v * *v).sum();
    let log_2pi = (T::two() * T::PI()).ln();
    -T::half() * (T::lit(d as f64) * log_2pi + log_det_from_cholesky(l) + maha)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues<T: Scalar>(a: ArrayView2<T>) -> Vec<T> {
    let n = a.nrows();
    let mut m = a.to_owned();
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off <= T::epsilon() * T::epsilon() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (T::two() * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<T> = (0..n).map(|i| m[[i, i]]).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}
