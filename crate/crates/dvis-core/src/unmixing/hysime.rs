//! Signal-subspace dimension by noise-whitened eigen analysis.
//!
//! The noise in each band is estimated by regressing that band on all the
//! others; the subspace dimension is then the number of signal-correlation
//! eigendirections whose signal power exceeds twice their noise power.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hsi::PixelSet;

/// Estimated signal subspace.
#[derive(Debug, Clone)]
pub struct SubspaceEstimate {
    /// Number of endmembers (at least 1).
    pub dimension: usize,
    /// Per-pixel noise estimate, n x D row-major, same layout as the input.
    pub noise: Vec<f64>,
    /// Cost terms, ascending: including direction k changes the projection
    /// error by `delta[k]`, so the cumulative sum is minimized at `dimension`
    /// (or at 0 when even the best direction has nonnegative cost).
    pub delta: Vec<f64>,
}

/// Estimate the signal subspace dimension of `pixels`.
///
/// Requires more pixels than bands so the band-on-band regressions are
/// overdetermined. Collinear or constant bands are handled by ridge
/// regularization and reported through a warning.
pub fn hysime(pixels: &PixelSet) -> Result<SubspaceEstimate> {
    let n = pixels.len();
    let dims = pixels.dims();
    if n <= dims {
        return Err(Error::InvalidParameter {
            name: "pixels",
            reason: format!(
                "noise regression needs more pixels than bands, got {n} pixels x {dims} bands"
            ),
        });
    }

    // Band correlation R = YᵀY.
    let mut corr = DMatrix::<f64>::zeros(dims, dims);
    for i in 0..n {
        let x = pixels.row(i);
        for r in 0..dims {
            for c in r..dims {
                corr[(r, c)] += x[r] * x[c];
            }
        }
    }
    for r in 0..dims {
        for c in 0..r {
            corr[(r, c)] = corr[(c, r)];
        }
    }

    let flat_bands: Vec<usize> = (0..dims)
        .filter(|&b| {
            let first = pixels.row(0)[b];
            (1..n).all(|i| pixels.row(i)[b] == first)
        })
        .collect();
    if !flat_bands.is_empty() {
        warn!(
            "{} constant band(s) (first: {}); stabilizing the regression",
            flat_bands.len(),
            flat_bands[0]
        );
    }

    let inv = match corr.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => {
            let ridge = 1e-6 * corr.trace();
            warn!("band correlation is singular; adding ridge {ridge:.3e}");
            let mut stabilized = corr.clone();
            for b in 0..dims {
                stabilized[(b, b)] += ridge;
            }
            stabilized
                .cholesky()
                .ok_or(Error::Numerical {
                    context: "subspace estimation",
                    reason: "band correlation not positive definite after ridge".into(),
                })?
                .inverse()
        }
    };

    // Residual of regressing band b on the others: (Y R⁻¹ e_b) / (R⁻¹)_bb.
    let mut noise = vec![0.0f64; n * dims];
    for i in 0..n {
        let x = pixels.row(i);
        let out = &mut noise[i * dims..(i + 1) * dims];
        for b in 0..dims {
            let yr: f64 = (0..dims).map(|c| x[c] * inv[(c, b)]).sum();
            out[b] = yr / inv[(b, b)];
        }
    }

    // Correlations of noise and of the denoised signal.
    let mut noise_corr = DMatrix::<f64>::zeros(dims, dims);
    let mut signal_corr = DMatrix::<f64>::zeros(dims, dims);
    for i in 0..n {
        let x = pixels.row(i);
        let e = &noise[i * dims..(i + 1) * dims];
        for r in 0..dims {
            for c in r..dims {
                noise_corr[(r, c)] += e[r] * e[c];
                signal_corr[(r, c)] += (x[r] - e[r]) * (x[c] - e[c]);
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    for r in 0..dims {
        for c in r..dims {
            noise_corr[(r, c)] *= inv_n;
            noise_corr[(c, r)] = noise_corr[(r, c)];
            signal_corr[(r, c)] *= inv_n;
            signal_corr[(c, r)] = signal_corr[(r, c)];
        }
    }

    // A direction is signal if including it lowers the projection error:
    // power along it must exceed twice the noise power along it.
    let eig = signal_corr.symmetric_eigen();
    let mut delta: Vec<f64> = (0..dims)
        .map(|k| {
            let e: DVector<f64> = eig.eigenvectors.column(k).into_owned();
            let noise_power = (&noise_corr * &e).dot(&e);
            let total_power = (&corr * &e).dot(&e) * inv_n;
            2.0 * noise_power - total_power
        })
        .collect();
    delta.sort_by(f64::total_cmp);
    let dimension = delta.iter().filter(|&&d| d < 0.0).count();
    Ok(SubspaceEstimate {
        dimension: dimension.max(1),
        noise,
        delta,
    })
}
