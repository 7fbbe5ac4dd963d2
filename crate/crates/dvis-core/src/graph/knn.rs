//! Exact k-nearest-neighbor search over pixel spectra.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hsi::PixelSet;

/// Squared Euclidean distance between two spectra.
#[inline]
pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// The k nearest neighbors of every pixel, self excluded, each row sorted by
/// (squared distance, pixel index) ascending. Ties are broken toward the
/// lower index so results do not depend on search order.
#[derive(Debug, Clone)]
pub struct KnnTable {
    n: usize,
    k: usize,
    indices: Vec<u32>,
    dist_sq: Vec<f64>,
}

impl KnnTable {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Neighbors per pixel.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Neighbor indices of pixel `i`, nearest first.
    #[inline]
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    /// Squared distances matching `neighbors(i)`.
    #[inline]
    pub fn distances_sq(&self, i: usize) -> &[f64] {
        &self.dist_sq[i * self.k..(i + 1) * self.k]
    }
}

/// Exact KNN by full pairwise search.
///
/// O(n² D) work, parallelized over query pixels; the per-pixel result is
/// independent of scheduling because selection uses the total order
/// (distance, index).
pub fn knn_table(pixels: &PixelSet, k: usize) -> Result<KnnTable> {
    let n = pixels.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidParameter {
            name: "n_neighbors",
            reason: format!("need 1 <= n_neighbors < n, got {k} with n = {n}"),
        });
    }
    let rows: Vec<(Vec<u32>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = pixels.row(i);
            let mut cand: Vec<(f64, u32)> = Vec::with_capacity(n - 1);
            for j in 0..n {
                if j != i {
                    cand.push((dist_sq(xi, pixels.row(j)), j as u32));
                }
            }
            let cmp = |a: &(f64, u32), b: &(f64, u32)| {
                a.0.partial_cmp(&b.0)
                    .expect("finite distances")
                    .then(a.1.cmp(&b.1))
            };
            cand.select_nth_unstable_by(k - 1, cmp);
            cand.truncate(k);
            cand.sort_unstable_by(cmp);
            let (dists, idx): (Vec<f64>, Vec<u32>) = cand.into_iter().unzip();
            (idx, dists)
        })
        .collect();

    let mut indices = Vec::with_capacity(n * k);
    let mut dist_sq = Vec::with_capacity(n * k);
    for (idx, d) in rows {
        indices.extend_from_slice(&idx);
        dist_sq.extend_from_slice(&d);
    }
    Ok(KnnTable {
        n,
        k,
        indices,
        dist_sq,
    })
}
