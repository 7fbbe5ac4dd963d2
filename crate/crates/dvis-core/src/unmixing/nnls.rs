//! Nonnegative least squares by the Lawson-Hanson active-set method.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hsi::PixelSet;

/// KKT tolerance: a coordinate is optimal when its gradient exceeds -tol at
/// zero, or sits within tol of zero while positive.
pub const KKT_TOL: f64 = 1e-10;

/// Solve min ‖a·U − x‖₂, a ≥ 0, for one pixel given the precomputed Gram
/// matrix G = U·Uᵀ and right side b = U·xᵀ.
fn nnls_single(gram: &DMatrix<f64>, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let m = b.len();
    let mut a = vec![0.0f64; m];
    let mut passive = vec![false; m];
    let mut w: Vec<f64> = b.to_vec();

    let solve_passive = |passive: &[bool]| -> Result<Vec<f64>> {
        let idx: Vec<usize> = (0..m).filter(|&j| passive[j]).collect();
        let k = idx.len();
        let gp = DMatrix::from_fn(k, k, |r, c| gram[(idx[r], idx[c])]);
        let bp = nalgebra::DVector::from_fn(k, |r, _| b[idx[r]]);
        let chol = gp.cholesky().ok_or(Error::RankDeficient {
            context: "nonnegative least squares",
            achieved: k.saturating_sub(1),
            needed: k,
        })?;
        let z = chol.solve(&bp);
        let mut full = vec![0.0; m];
        for (r, &j) in idx.iter().enumerate() {
            full[j] = z[r];
        }
        Ok(full)
    };

    let mut outer = 0usize;
    loop {
        outer += 1;
        if outer > 30 * (m + 1) {
            return Err(Error::Numerical {
                context: "nonnegative least squares",
                reason: "active-set iteration did not terminate".into(),
            });
        }
        // Best inactive coordinate with a descent direction.
        let mut best: Option<usize> = None;
        for j in 0..m {
            if !passive[j] && w[j] > tol && best.is_none_or(|b0| w[j] > w[b0]) {
                best = Some(j);
            }
        }
        let Some(j_star) = best else { break };
        passive[j_star] = true;

        loop {
            let z = solve_passive(&passive)?;
            let negative: Vec<usize> = (0..m).filter(|&j| passive[j] && z[j] <= 0.0).collect();
            if negative.is_empty() {
                a = z;
                break;
            }
            // Step toward z until the first passive coordinate hits zero.
            let mut alpha = f64::INFINITY;
            for &j in &negative {
                let step = a[j] / (a[j] - z[j]);
                if step < alpha {
                    alpha = step;
                }
            }
            for j in 0..m {
                if passive[j] {
                    a[j] += alpha * (z[j] - a[j]);
                }
            }
            for j in 0..m {
                if passive[j] && a[j] <= tol {
                    a[j] = 0.0;
                    passive[j] = false;
                }
            }
        }

        for j in 0..m {
            let gj: f64 = (0..m).map(|k| gram[(j, k)] * a[k]).sum();
            w[j] = b[j] - gj;
        }
    }
    Ok(a)
}

/// Abundance matrix: row i solves min ‖x_i − A_i·U‖₂ with A_i ≥ 0.
///
/// `endmembers` is m×D row-major. Rows are independent and solved in
/// parallel; each solve is deterministic, so the result is too.
pub fn abundances(pixels: &PixelSet, endmembers: &[f64], m: usize) -> Result<Vec<f64>> {
    let dims = pixels.dims();
    if m == 0 || endmembers.len() != m * dims {
        return Err(Error::InvalidParameter {
            name: "endmembers",
            reason: format!(
                "expected an m x {dims} matrix with m >= 1, got {} values for m = {m}",
                endmembers.len()
            ),
        });
    }
    // The Gram matrix is shared by every pixel; it also reveals rank
    // deficiency up front.
    let gram = DMatrix::from_fn(m, m, |r, c| {
        let ur = &endmembers[r * dims..(r + 1) * dims];
        let uc = &endmembers[c * dims..(c + 1) * dims];
        ur.iter().zip(uc).map(|(x, y)| x * y).sum::<f64>()
    });
    let rank = gram
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .filter(|&&v| v > 1e-10 * gram.trace().max(1e-300))
        .count();
    if rank < m {
        return Err(Error::RankDeficient {
            context: "endmember matrix",
            achieved: rank,
            needed: m,
        });
    }

    let scale = gram.trace() / m as f64;
    let tol = KKT_TOL * scale.max(1.0);
    let rows: Result<Vec<Vec<f64>>> = (0..pixels.len())
        .into_par_iter()
        .map(|i| {
            let x = pixels.row(i);
            let b: Vec<f64> = (0..m)
                .map(|r| {
                    endmembers[r * dims..(r + 1) * dims]
                        .iter()
                        .zip(x)
                        .map(|(u, v)| u * v)
                        .sum()
                })
                .collect();
            nnls_single(&gram, &b, tol)
        })
        .collect();
    let rows = rows?;
    let mut out = Vec::with_capacity(pixels.len() * m);
    for row in rows {
        out.extend_from_slice(&row);
    }
    Ok(out)
}
