//! Gaussian kernel density estimation over low-dimensional feature vectors.
//!
//! Kernels are isotropic Gaussians with a shared bandwidth. Reference points
//! are bucketed on a grid whose cell size equals the kernel cutoff radius,
//! so a query only visits the `3^d` neighbouring cells. Contributions
//! beyond `CUTOFF_SIGMAS` bandwidths are dropped; each dropped term is below
//! `exp(-18)` of the kernel peak.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const CUTOFF_SIGMAS: f64 = 6.0;
/// Above this dimension the grid visits too many cells; use brute force.
const MAX_GRID_DIM: usize = 3;

#[derive(Debug, Clone)]
pub struct Kde<T: Scalar> {
    dim: usize,
    bandwidth: T,
    points: Vec<Vec<T>>,
    grid: Option<HashMap<Vec<i64>, Vec<usize>>>,
    cell: T,
}

impl<T: Scalar> Kde<T> {
    pub fn fit(points: Vec<Vec<T>>, bandwidth: T) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("kde needs at least one point".into()));
        }
        if !(bandwidth > T::zero()) {
            return Err(Error::InvalidArgument("bandwidth must be positive".into()));
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidArgument("kde points must share a nonzero dim".into()));
        }
        let cell = bandwidth * T::lit(CUTOFF_SIGMAS);
        let grid = (dim <= MAX_GRID_DIM).then(|| {
            let mut g: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
            for (i, p) in points.iter().enumerate() {
                g.entry(cell_of(p, cell)).or_default().push(i);
            }
            g
        });
        Ok(Self {
            dim,
            bandwidth,
            points,
            grid,
            cell,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Normalized density at `x`.
    pub fn density(&self, x: &[T]) -> T {
        let h = self.bandwidth;
        let inv2h2 = T::one() / (T::two() * h * h);
        let cutoff2 = self.cell * self.cell;
        let norm = (T::two() * T::PI()).sqrt() * h;
        let norm = norm.powi(self.dim as i32) * T::lit(self.points.len() as f64);
        let mut acc = T::zero();
        let mut visit = |i: usize| {
            let d2: T = self.points[i]
                .iter()
                .zip(x)
                .map(|(a, b)| (*a - *b) * (*a - *b))
                .sum();
            if d2 <= cutoff2 {
                acc += (-d2 * inv2h2).exp();
            }
        };
        match &self.grid {
            Some(grid) => {
                let center = cell_of(x, self.cell);
                for offset in neighbour_offsets(self.dim) {
                    let key: Vec<i64> = center.iter().zip(&offset).map(|(c, o)| c + o).collect();
                    if let Some(ids) = grid.get(&key) {
                        ids.iter().for_each(|&i| visit(i));
                    }
                }
            }
            None => (0..self.points.len()).for_each(&mut visit),
        }
        acc / norm
    }

    pub fn log_density(&self, x: &[T]) -> T {
        self.density(x).ln()
    }
}

fn cell_of<T: Scalar>(p: &[T], cell: T) -> Vec<i64> {
    p.iter()
        .map(|v| (*v / cell).floor().to_i64().unwrap_or(i64::MAX / 2))
        .collect()
}

fn neighbour_offsets(dim: usize) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (-1..=1).map(move |o| {
                    let mut p = prefix.clone();
                    p.push(o);
                    p
                })
            })
            .collect();
    }
    out
}
