//! Vertex component analysis: pick the pixels that span the data simplex by
//! repeatedly projecting onto a direction orthogonal to the endmembers found
//! so far and taking the extreme point.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::hsi::PixelSet;

/// Extracted endmembers; `spectra` rows are copies of the pixels named by
/// `indices`, in selection order.
#[derive(Debug, Clone)]
pub struct Endmembers {
    pub count: usize,
    pub indices: Vec<usize>,
    pub spectra: Vec<f64>,
}

fn top_eigenvectors(matrix: DMatrix<f64>, keep: usize) -> DMatrix<f64> {
    let dims = matrix.nrows();
    let eig = matrix.symmetric_eigen();
    let mut order: Vec<usize> = (0..dims).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    DMatrix::from_fn(dims, keep, |r, c| eig.eigenvectors[(r, order[c])])
}

/// Index of the entry with the largest magnitude, lowest index on ties.
fn argmax_abs(v: &DVector<f64>) -> usize {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    best
}

/// Extract `m` endmembers from `pixels`, deterministically for a given seed.
///
/// The SNR (which picks between the projective and the additive reduction)
/// is estimated from the data; use [`vca_with_snr`] to supply a better
/// estimate, e.g. one derived from a subspace noise model.
pub fn vca(pixels: &PixelSet, m: usize, seed: u64) -> Result<Endmembers> {
    vca_with_snr(pixels, m, seed, None)
}

/// [`vca`] with an externally supplied SNR in dB (infinity for noiseless).
pub fn vca_with_snr(
    pixels: &PixelSet,
    m: usize,
    seed: u64,
    snr_db: Option<f64>,
) -> Result<Endmembers> {
    let n = pixels.len();
    let dims = pixels.dims();
    if m == 0 || m > dims || m > n {
        return Err(Error::InvalidParameter {
            name: "endmembers",
            reason: format!(
                "need 1 <= m <= min(bands, pixels), got m = {m} with {n} pixels x {dims} bands"
            ),
        });
    }

    // Uncentered band correlation, reused for the rank check, the signal
    // power estimate, and the high-SNR projection basis.
    let mut corr = DMatrix::<f64>::zeros(dims, dims);
    let mut mean = DVector::<f64>::zeros(dims);
    for i in 0..n {
        let x = pixels.row(i);
        for r in 0..dims {
            mean[r] += x[r];
            for c in r..dims {
                corr[(r, c)] += x[r] * x[c];
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    for r in 0..dims {
        mean[r] *= inv_n;
        for c in r..dims {
            corr[(r, c)] *= inv_n;
            corr[(c, r)] = corr[(r, c)];
        }
    }

    let corr_eig = corr.clone().symmetric_eigen();
    let max_eig = corr_eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let rank = corr_eig
        .eigenvalues
        .iter()
        .filter(|&&v| v > 1e-9 * max_eig.max(1e-300))
        .count();
    if rank < m {
        return Err(Error::RankDeficient {
            context: "vertex component analysis",
            achieved: rank,
            needed: m,
        });
    }

    let extract = |indices: &[usize]| -> Endmembers {
        let mut spectra = Vec::with_capacity(indices.len() * dims);
        for &i in indices {
            spectra.extend_from_slice(pixels.row(i));
        }
        Endmembers {
            count: indices.len(),
            indices: indices.to_vec(),
            spectra,
        }
    };

    if m == 1 {
        // A single endmember is just the most energetic pixel.
        let mut best = 0usize;
        let mut best_norm = f64::NEG_INFINITY;
        for i in 0..n {
            let norm: f64 = pixels.row(i).iter().map(|v| v * v).sum();
            if norm > best_norm {
                best = i;
                best_norm = norm;
            }
        }
        return Ok(extract(&[best]));
    }

    // SNR estimate from the power captured by the top m principal components
    // of the centered data, unless the caller supplied one.
    let snr_db = snr_db.unwrap_or_else(|| {
        let centered = &corr - &mean * mean.transpose();
        let basis_centered = top_eigenvectors(centered, m);
        let power_total = corr.trace();
        let mut power_projected = mean.norm_squared();
        for i in 0..n {
            let x = DVector::from_column_slice(pixels.row(i));
            let z = basis_centered.transpose() * (&x - &mean);
            power_projected += z.norm_squared() * inv_n;
        }
        let denom = power_total - power_projected;
        if denom <= 64.0 * f64::EPSILON * power_total {
            f64::INFINITY
        } else {
            let numer = power_projected - (m as f64 / dims as f64) * power_total;
            10.0 * (numer / denom).log10()
        }
    });
    let snr_threshold_db = 15.0 + 10.0 * (m as f64).log10();
    debug!("estimated SNR {snr_db:.2} dB (projective threshold {snr_threshold_db:.2} dB)");

    // Reduce every pixel to an m-dimensional point y_i on which the simplex
    // vertices are extreme.
    let mut points = DMatrix::<f64>::zeros(m, n);
    if snr_db > snr_threshold_db {
        // Projective: scale each PCA image to the hyperplane zᵀu = 1.
        let basis = top_eigenvectors(corr.clone(), m);
        let mut projected = DMatrix::<f64>::zeros(m, n);
        let mut centroid = DVector::<f64>::zeros(m);
        for i in 0..n {
            let z = basis.transpose() * DVector::from_column_slice(pixels.row(i));
            centroid += &z * inv_n;
            projected.set_column(i, &z);
        }
        let mut dropped = 0usize;
        let scale_floor = 1e-12 * centroid.norm().max(1e-300);
        for i in 0..n {
            let z = projected.column(i);
            let d = z.dot(&centroid);
            if d.abs() <= scale_floor {
                dropped += 1;
            } else {
                points.set_column(i, &(z / d));
            }
        }
        if dropped > 0 {
            warn!("{dropped} pixel(s) orthogonal to the data centroid were excluded from endmember search");
        }
    } else {
        // Additive: centered PCA to m-1 dimensions plus a constant
        // coordinate sized to the data spread.
        let basis = top_eigenvectors(&corr - &mean * mean.transpose(), m - 1);
        let mut radius: f64 = 0.0;
        for i in 0..n {
            let x = DVector::from_column_slice(pixels.row(i));
            let z = basis.transpose() * (&x - &mean);
            radius = radius.max(z.norm());
            for r in 0..m - 1 {
                points[(r, i)] = z[r];
            }
        }
        for i in 0..n {
            points[(m - 1, i)] = radius;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected = DMatrix::<f64>::zeros(m, m);
    selected[(m - 1, 0)] = 1.0;
    let mut indices: Vec<usize> = Vec::with_capacity(m);
    for it in 0..m {
        let w = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
        let pinv = selected
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|reason| Error::Numerical {
                context: "vertex component analysis",
                reason: reason.into(),
            })?;
        let mut f = &w - &selected * (pinv * &w);
        let norm = f.norm();
        if norm <= f64::EPSILON {
            return Err(Error::Numerical {
                context: "vertex component analysis",
                reason: "projection direction collapsed".into(),
            });
        }
        f /= norm;
        let scores = points.tr_mul(&f);
        let mut pick = argmax_abs(&scores);
        if indices.contains(&pick) {
            // Degenerate data can zero out every unselected score; fall back
            // to the best unselected pixel to keep the indices distinct.
            debug!("projection re-selected pixel {pick}; taking best unselected instead");
            let mut fallback: Option<usize> = None;
            for i in 0..n {
                if !indices.contains(&i)
                    && fallback.is_none_or(|b| scores[i].abs() > scores[b].abs())
                {
                    fallback = Some(i);
                }
            }
            pick = fallback.ok_or(Error::Numerical {
                context: "vertex component analysis",
                reason: "fewer distinct pixels than endmembers".into(),
            })?;
        }
        selected.set_column(it, &points.column(pick).into_owned());
        indices.push(pick);
    }
    Ok(extract(&indices))
}
