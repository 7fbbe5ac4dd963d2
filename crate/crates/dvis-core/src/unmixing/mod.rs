//! Linear spectral unmixing: material count, endmember spectra, nonnegative
//! abundances, and the per-pixel purity score used by the clustering stage.

pub mod cache;
mod hysime;
mod nnls;
mod vca;

use log::warn;

pub use hysime::{hysime, SubspaceEstimate};
pub use nnls::abundances;
pub use vca::{vca, vca_with_snr, Endmembers};

use crate::error::{Error, Result};
use crate::hsi::PixelSet;

/// Per-pixel purity: the largest abundance divided by the row sum.
///
/// Rows whose abundances sum to (numerically) zero get purity 0; their count
/// is reported through a warning since such pixels carry no mixing signal.
pub fn purity(abundances: &[f64], m: usize) -> Result<Vec<f64>> {
    if m == 0 || !abundances.len().is_multiple_of(m) {
        return Err(Error::InvalidParameter {
            name: "abundances",
            reason: format!("{} values do not form rows of width {m}", abundances.len()),
        });
    }
    if let Some(pos) = abundances.iter().position(|&v| v < 0.0) {
        return Err(Error::InvalidParameter {
            name: "abundances",
            reason: format!(
                "negative entry {} at row {}, column {}",
                abundances[pos],
                pos / m,
                pos % m
            ),
        });
    }
    let mut zero_rows = 0usize;
    let eta = abundances
        .chunks_exact(m)
        .map(|row| {
            let sum: f64 = row.iter().sum();
            if sum < 1e-12 {
                zero_rows += 1;
                0.0
            } else {
                row.iter().fold(0.0f64, |a, &b| a.max(b)) / sum
            }
        })
        .collect();
    if zero_rows > 0 {
        warn!("{zero_rows} pixel(s) have zero abundance mass; purity set to 0 for them");
    }
    Ok(eta)
}

/// SNR in dB implied by a per-pixel noise estimate: signal power over noise
/// power, infinite when the noise estimate vanishes.
pub fn snr_from_noise(pixels: &PixelSet, noise: &[f64]) -> Result<f64> {
    let total = pixels.len() * pixels.dims();
    if noise.len() != total {
        return Err(Error::DimensionMismatch {
            context: "noise estimate",
            left_rows: pixels.len(),
            left_cols: pixels.dims(),
            right_rows: noise.len() / pixels.dims().max(1),
            right_cols: pixels.dims(),
        });
    }
    let noise_power: f64 = noise.iter().map(|e| e * e).sum();
    let signal_power: f64 = pixels
        .spectra()
        .iter()
        .zip(noise)
        .map(|(x, e)| (x - e) * (x - e))
        .sum();
    if noise_power <= f64::MIN_POSITIVE * total as f64 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal_power / noise_power).log10())
}

/// Complete unmixing result for one pixel set.
#[derive(Debug, Clone)]
pub struct UnmixingModel {
    m: usize,
    dims: usize,
    endmembers: Vec<f64>,
    endmember_indices: Vec<usize>,
    abundances: Vec<f64>,
    purity: Vec<f64>,
}

impl UnmixingModel {
    fn from_parts(
        m: usize,
        dims: usize,
        endmembers: Vec<f64>,
        endmember_indices: Vec<usize>,
        abundances: Vec<f64>,
        purity: Vec<f64>,
    ) -> Result<Self> {
        let n = purity.len();
        let shape_ok = m > 0
            && endmembers.len() == m * dims
            && endmember_indices.len() == m
            && abundances.len() == n * m;
        if !shape_ok {
            return Err(Error::InvalidCube(format!(
                "inconsistent unmixing model shapes: m = {m}, D = {dims}, n = {n}, \
                 {} endmember values, {} indices, {} abundances",
                endmembers.len(),
                endmember_indices.len(),
                abundances.len()
            )));
        }
        if abundances.iter().any(|&a| a < 0.0) {
            return Err(Error::Numerical {
                context: "unmixing model",
                reason: "negative abundance".into(),
            });
        }
        if purity.iter().any(|&e| !(0.0..=1.0).contains(&e)) {
            return Err(Error::Numerical {
                context: "unmixing model",
                reason: "purity outside [0, 1]".into(),
            });
        }
        Ok(Self {
            m,
            dims,
            endmembers,
            endmember_indices,
            abundances,
            purity,
        })
    }

    /// Number of materials.
    pub fn material_count(&self) -> usize {
        self.m
    }

    /// Spectral dimension.
    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.purity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.purity.is_empty()
    }

    /// Endmember matrix, m x D row-major.
    pub fn endmembers(&self) -> &[f64] {
        &self.endmembers
    }

    /// Pixel index each endmember was copied from, in selection order.
    pub fn endmember_indices(&self) -> &[usize] {
        &self.endmember_indices
    }

    /// Abundance matrix, n x m row-major.
    pub fn abundances(&self) -> &[f64] {
        &self.abundances
    }

    /// Abundance row for pixel `i`.
    pub fn abundance_row(&self, i: usize) -> &[f64] {
        &self.abundances[i * self.m..(i + 1) * self.m]
    }

    /// Per-pixel purity in [0, 1].
    pub fn purity(&self) -> &[f64] {
        &self.purity
    }
}

/// Run the full unmixing chain: estimate the material count, extract
/// endmembers, solve abundances, and score purity.
pub fn unmix(pixels: &PixelSet, seed: u64) -> Result<UnmixingModel> {
    let subspace = hysime(pixels).map_err(|e| e.in_stage("subspace estimation"))?;
    let snr_db = snr_from_noise(pixels, &subspace.noise)?;
    unmix_with_dimension_and_snr(pixels, subspace.dimension, seed, Some(snr_db))
}

/// Unmixing chain with the material count fixed by the caller.
pub fn unmix_with_dimension(pixels: &PixelSet, m: usize, seed: u64) -> Result<UnmixingModel> {
    unmix_with_dimension_and_snr(pixels, m, seed, None)
}

fn unmix_with_dimension_and_snr(
    pixels: &PixelSet,
    m: usize,
    seed: u64,
    snr_db: Option<f64>,
) -> Result<UnmixingModel> {
    let endmembers =
        vca_with_snr(pixels, m, seed, snr_db).map_err(|e| e.in_stage("endmember extraction"))?;
    let a = abundances(pixels, &endmembers.spectra, m).map_err(|e| e.in_stage("abundances"))?;
    let eta = purity(&a, m).map_err(|e| e.in_stage("purity"))?;
    UnmixingModel::from_parts(
        m,
        pixels.dims(),
        endmembers.spectra,
        endmembers.indices,
        a,
        eta,
    )
}

/// Endmember matrix as CSV: one row per endmember with its source pixel
/// index, then the spectrum.
pub fn endmembers_csv(model: &UnmixingModel) -> String {
    let mut out = String::from("endmember,pixel_index");
    for b in 0..model.dims() {
        out.push_str(&format!(",band_{b}"));
    }
    out.push('\n');
    for j in 0..model.material_count() {
        out.push_str(&format!("{},{}", j + 1, model.endmember_indices()[j]));
        for v in &model.endmembers()[j * model.dims()..(j + 1) * model.dims()] {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Abundance matrix as CSV: one row per pixel, abundances then purity.
pub fn abundances_csv(model: &UnmixingModel) -> String {
    let mut out = String::from("pixel");
    for j in 0..model.material_count() {
        out.push_str(&format!(",abundance_{}", j + 1));
    }
    out.push_str(",purity\n");
    for i in 0..model.len() {
        out.push_str(&format!("{i}"));
        for v in model.abundance_row(i) {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{}\n", model.purity()[i]));
    }
    out
}
