//! Band-wise spatial downsampling with the Keys bicubic kernel (a = -0.5).

use crate::error::{Error, Result};
use crate::hsi::HsiCube;

/// Keys cubic convolution weight, a = -0.5.
fn keys_weight(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * A
    } else {
        0.0
    }
}

/// Four taps and weights for a 1-D sample at `src` on an axis of length `len`,
/// indices clamped to the edge (border replication).
#[inline]
fn taps(src: f64, len: usize) -> ([usize; 4], [f64; 4]) {
    let base = src.floor();
    let frac = src - base;
    let base = base as i64;
    let mut idx = [0usize; 4];
    let mut w = [0.0f64; 4];
    for k in 0..4 {
        let o = k as i64 - 1;
        idx[k] = (base + o).clamp(0, len as i64 - 1) as usize;
        w[k] = keys_weight(frac - o as f64);
    }
    (idx, w)
}

/// Downsample each band of `cube` by an integer `factor` using separable
/// bicubic convolution. Output pixel (i, j) samples source position
/// ((i + 0.5) * factor - 0.5, (j + 0.5) * factor - 0.5); output dimensions
/// are ceil(rows / factor) x ceil(cols / factor). The spatial resolution
/// metadata, when present, is scaled by `factor`.
pub fn bicubic_downsample(cube: &HsiCube, factor: u32) -> Result<HsiCube> {
    if factor == 0 {
        return Err(Error::InvalidParameter {
            name: "factor",
            reason: "must be at least 1".into(),
        });
    }
    if factor == 1 {
        return Ok(cube.clone());
    }
    let f = factor as usize;
    let (rows, cols, bands) = (cube.rows(), cube.cols(), cube.bands());
    let out_rows = rows.div_ceil(f);
    let out_cols = cols.div_ceil(f);

    let row_taps: Vec<([usize; 4], [f64; 4])> = (0..out_rows)
        .map(|i| taps((i as f64 + 0.5) * factor as f64 - 0.5, rows))
        .collect();
    let col_taps: Vec<([usize; 4], [f64; 4])> = (0..out_cols)
        .map(|j| taps((j as f64 + 0.5) * factor as f64 - 0.5, cols))
        .collect();

    // Horizontal pass into rows x out_cols, then vertical.
    let mut mid = vec![0.0f64; rows * out_cols * bands];
    for r in 0..rows {
        for (j, (ci, cw)) in col_taps.iter().enumerate() {
            for b in 0..bands {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += cw[k] * cube.at(r, ci[k], b);
                }
                mid[(r * out_cols + j) * bands + b] = acc;
            }
        }
    }
    let mut out = vec![0.0f64; out_rows * out_cols * bands];
    for (i, (ri, rw)) in row_taps.iter().enumerate() {
        for j in 0..out_cols {
            for b in 0..bands {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += rw[k] * mid[(ri[k] * out_cols + j) * bands + b];
                }
                out[(i * out_cols + j) * bands + b] = acc;
            }
        }
    }

    let wavelengths = cube.wavelengths_nm().map(<[f64]>::to_vec);
    let result = HsiCube::new(out_rows, out_cols, bands, out, wavelengths)?;
    Ok(match cube.resolution_m() {
        Some(res) => result.with_resolution_m(res * factor as f64),
        None => result,
    })
}
