//! Hyperspectral cube data model: ingestion, normalization, resampling, and
//! mask-based pixel extraction.

mod envi;
mod resample;

pub use envi::{load_envi, write_envi, Interleave};
pub use resample::bicubic_downsample;

use crate::error::{Error, Result};

/// A hyperspectral reflectance cube stored in (row, col, band) order.
#[derive(Debug, Clone)]
pub struct HsiCube {
    rows: usize,
    cols: usize,
    bands: usize,
    data: Vec<f64>,
    wavelengths_nm: Option<Vec<f64>>,
    resolution_m: Option<f64>,
}

impl HsiCube {
    /// Build a cube, validating shape, finiteness, and wavelength ordering.
    pub fn new(
        rows: usize,
        cols: usize,
        bands: usize,
        data: Vec<f64>,
        wavelengths_nm: Option<Vec<f64>>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || bands == 0 {
            return Err(Error::InvalidCube(format!(
                "dimensions must be positive, got {rows}x{cols}x{bands}"
            )));
        }
        let expected = rows * cols * bands;
        if data.len() != expected {
            return Err(Error::InvalidCube(format!(
                "data length {} does not match {rows}x{cols}x{bands} = {expected}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            let (r, c, b) = (bad / (cols * bands), (bad / bands) % cols, bad % bands);
            return Err(Error::InvalidCube(format!(
                "non-finite reflectance at (row {r}, col {c}, band {b})"
            )));
        }
        if let Some(w) = &wavelengths_nm {
            if w.len() != bands {
                return Err(Error::InvalidCube(format!(
                    "wavelength list length {} does not match band count {bands}",
                    w.len()
                )));
            }
            // partial_cmp so a NaN wavelength also fails the check
            if w.windows(2)
                .any(|p| p[0].partial_cmp(&p[1]) != Some(std::cmp::Ordering::Less))
            {
                return Err(Error::InvalidCube(
                    "wavelengths must be strictly increasing".into(),
                ));
            }
        }
        Ok(Self {
            rows,
            cols,
            bands,
            data,
            wavelengths_nm,
            resolution_m: None,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Raw data in (row, col, band) order.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn wavelengths_nm(&self) -> Option<&[f64]> {
        self.wavelengths_nm.as_deref()
    }

    pub fn resolution_m(&self) -> Option<f64> {
        self.resolution_m
    }

    pub fn with_resolution_m(mut self, meters: f64) -> Self {
        self.resolution_m = Some(meters);
        self
    }

    /// Reflectance value at (row, col, band).
    #[inline]
    pub fn at(&self, row: usize, col: usize, band: usize) -> f64 {
        debug_assert!(row < self.rows && col < self.cols && band < self.bands);
        self.data[(row * self.cols + col) * self.bands + band]
    }

    /// Spectrum of one pixel as a contiguous slice.
    #[inline]
    pub fn spectrum(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.cols + col) * self.bands;
        &self.data[start..start + self.bands]
    }
}

/// Boolean keep/discard mask over a cube's spatial grid.
#[derive(Debug, Clone)]
pub struct PixelMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl PixelMask {
    pub fn new(rows: usize, cols: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != rows * cols {
            return Err(Error::InvalidCube(format!(
                "mask length {} does not match {rows}x{cols}",
                keep.len()
            )));
        }
        if !keep.iter().any(|&k| k) {
            return Err(Error::EmptyMask);
        }
        Ok(Self { rows, cols, keep })
    }

    /// Mask keeping every pixel.
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            keep: vec![true; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn keep(&self, row: usize, col: usize) -> bool {
        self.keep[row * self.cols + col]
    }

    /// Number of kept pixels.
    pub fn count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

/// A flat set of pixel spectra with their source-grid coordinates.
///
/// Spectra are stored row-major, one pixel per row.
#[derive(Debug, Clone)]
pub struct PixelSet {
    n: usize,
    dims: usize,
    spectra: Vec<f64>,
    origins: Vec<(u32, u32)>,
}

impl PixelSet {
    /// Build directly from a row-major spectra buffer.
    pub fn from_rows(spectra: Vec<f64>, dims: usize, origins: Vec<(u32, u32)>) -> Result<Self> {
        if dims == 0 || !spectra.len().is_multiple_of(dims) {
            return Err(Error::InvalidCube(format!(
                "spectra length {} is not a multiple of band count {dims}",
                spectra.len()
            )));
        }
        let n = spectra.len() / dims;
        if n == 0 {
            return Err(Error::EmptyMask);
        }
        if origins.len() != n {
            return Err(Error::InvalidCube(format!(
                "origin count {} does not match pixel count {n}",
                origins.len()
            )));
        }
        if let Some(bad) = spectra.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidCube(format!(
                "non-finite value in pixel {} band {}",
                bad / dims,
                bad % dims
            )));
        }
        Ok(Self {
            n,
            dims,
            spectra,
            origins,
        })
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Spectral dimension (band count).
    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Spectrum of pixel `i`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.spectra[i * self.dims..(i + 1) * self.dims]
    }

    /// The whole spectra buffer, row-major.
    pub fn spectra(&self) -> &[f64] {
        &self.spectra
    }

    /// (row, col) coordinates of each pixel in the source cube.
    pub fn origins(&self) -> &[(u32, u32)] {
        &self.origins
    }
}

/// Euclidean norm of a spectrum.
#[inline]
pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scale every pixel spectrum to unit Euclidean norm.
///
/// Illumination differences scale a spectrum multiplicatively, so unit-norm
/// spectra compare shape rather than brightness. Origins are preserved.
/// A zero-norm row is an error naming the offending coordinate.
pub fn normalize_spectra(pixels: &PixelSet) -> Result<PixelSet> {
    let mut out = pixels.spectra.clone();
    for i in 0..pixels.n {
        let row = &mut out[i * pixels.dims..(i + 1) * pixels.dims];
        let nrm = norm(row);
        if nrm == 0.0 {
            let (r, c) = pixels.origins[i];
            return Err(Error::DegeneratePixel {
                row: r as usize,
                col: c as usize,
            });
        }
        for v in row.iter_mut() {
            *v /= nrm;
        }
    }
    PixelSet::from_rows(out, pixels.dims, pixels.origins.clone())
}

/// Extract the kept pixels of a cube in row-major order.
pub fn extract_pixels(cube: &HsiCube, mask: &PixelMask) -> Result<PixelSet> {
    if mask.rows != cube.rows || mask.cols != cube.cols {
        return Err(Error::DimensionMismatch {
            context: "mask vs cube",
            left_rows: mask.rows,
            left_cols: mask.cols,
            right_rows: cube.rows,
            right_cols: cube.cols,
        });
    }
    let count = mask.count();
    let mut spectra = Vec::with_capacity(count * cube.bands);
    let mut origins = Vec::with_capacity(count);
    for r in 0..cube.rows {
        for c in 0..cube.cols {
            if mask.keep(r, c) {
                spectra.extend_from_slice(cube.spectrum(r, c));
                origins.push((r as u32, c as u32));
            }
        }
    }
    PixelSet::from_rows(spectra, cube.bands, origins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn px(rows: &[&[f64]]) -> PixelSet {
        let dims = rows[0].len();
        let spectra: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let origins = (0..rows.len()).map(|i| (i as u32, 0)).collect();
        PixelSet::from_rows(spectra, dims, origins).unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let p = normalize_spectra(&px(&[&[3.0, 4.0]])).unwrap();
        assert_relative_eq!(p.row(0)[0], 0.6, epsilon = 1e-15);
        assert_relative_eq!(p.row(0)[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn normalize_unit_row_unchanged() {
        let p = normalize_spectra(&px(&[&[0.6, 0.8]])).unwrap();
        assert_relative_eq!(p.row(0)[0], 0.6, epsilon = 1e-12);
        assert_relative_eq!(p.row(0)[1], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn normalize_uniform_vector() {
        let p = normalize_spectra(&px(&[&[2.0, 2.0, 2.0, 2.0]])).unwrap();
        for &v in p.row(0) {
            assert_relative_eq!(v, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn normalize_zero_row_names_coordinate() {
        let spectra = vec![1.0, 0.0, 0.0, 0.0];
        let set = PixelSet::from_rows(spectra, 2, vec![(0, 0), (3, 7)]).unwrap();
        match normalize_spectra(&set) {
            Err(Error::DegeneratePixel { row: 3, col: 7 }) => {}
            other => panic!("expected degenerate pixel at (3,7), got {other:?}"),
        }
    }

    #[test]
    fn extract_full_mask() {
        let cube = HsiCube::new(2, 2, 3, (0..12).map(f64::from).collect(), None).unwrap();
        let set = extract_pixels(&cube, &PixelMask::full(2, 2)).unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!(set.row(0), &[0.0, 1.0, 2.0]);
        assert_eq!(set.origins()[3], (1, 1));
    }

    #[test]
    fn extract_singleton_mask() {
        let cube = HsiCube::new(2, 2, 1, vec![5.0, 6.0, 7.0, 8.0], None).unwrap();
        let mut keep = vec![false; 4];
        keep[0] = true;
        let mask = PixelMask::new(2, 2, keep).unwrap();
        let set = extract_pixels(&cube, &mask).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.origins(), &[(0, 0)]);
        assert_eq!(set.row(0), &[5.0]);
    }

    #[test]
    fn extract_checkerboard() {
        let cube = HsiCube::new(4, 4, 1, (0..16).map(f64::from).collect(), None).unwrap();
        let keep: Vec<bool> = (0..16).map(|i| (i / 4 + i % 4) % 2 == 0).collect();
        let mask = PixelMask::new(4, 4, keep).unwrap();
        let set = extract_pixels(&cube, &mask).unwrap();
        assert_eq!(set.len(), 8);
        for (r, c) in set.origins() {
            assert_eq!((r + c) % 2, 0);
        }
    }

    #[test]
    fn extract_dim_mismatch() {
        let cube = HsiCube::new(2, 2, 1, vec![0.0; 4], None).unwrap();
        let mask = PixelMask::full(3, 2);
        assert!(matches!(
            extract_pixels(&cube, &mask),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cube_rejects_bad_wavelengths() {
        let err = HsiCube::new(1, 1, 3, vec![0.0; 3], Some(vec![500.0, 500.0, 600.0]));
        assert!(err.is_err());
    }

    #[test]
    fn cube_rejects_non_finite() {
        let err = HsiCube::new(1, 1, 2, vec![0.0, f64::NAN], None);
        assert!(err.is_err());
    }

    proptest! {
        /// normalize(c*x) == normalize(x) and normalize is idempotent.
        #[test]
        fn normalize_scale_invariant_and_idempotent(
            rows in prop::collection::vec(
                prop::collection::vec(0.01f64..10.0, 4), 1..8),
            scale in 0.01f64..100.0,
        ) {
            let dims = rows[0].len();
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let scaled: Vec<f64> = flat.iter().map(|v| v * scale).collect();
            let origins: Vec<(u32, u32)> = (0..rows.len()).map(|i| (i as u32, 0)).collect();
            let a = normalize_spectra(
                &PixelSet::from_rows(flat, dims, origins.clone()).unwrap()).unwrap();
            let b = normalize_spectra(
                &PixelSet::from_rows(scaled, dims, origins).unwrap()).unwrap();
            for (x, y) in a.spectra().iter().zip(b.spectra()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let again = normalize_spectra(&a).unwrap();
            for (x, y) in a.spectra().iter().zip(again.spectra()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            for i in 0..a.len() {
                prop_assert!((norm(a.row(i)) - 1.0).abs() < 1e-12);
            }
        }

        /// Extracted pixel count equals the mask's true-count.
        #[test]
        fn extract_count_matches_mask(
            rows in 1usize..5, cols in 1usize..5,
            seed in 0u64..1000,
        ) {
            let mut keep = vec![false; rows * cols];
            let mut s = seed;
            for k in keep.iter_mut() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *k = s >> 63 == 1;
            }
            keep[0] = true; // at least one
            let mask = PixelMask::new(rows, cols, keep).unwrap();
            let cube = HsiCube::new(
                rows, cols, 2, vec![1.0; rows * cols * 2], None).unwrap();
            let set = extract_pixels(&cube, &mask).unwrap();
            prop_assert_eq!(set.len(), mask.count());
        }
    }
}
