//! Synthetic linear-mixture scenes for benchmarks and regression tests.
//!
//! Every pixel is a convex combination of `m` planted endmember spectra.
//! Each cluster favours one endmember through a Dirichlet concentration,
//! one exact pure pixel is planted per endmember, and optional white
//! Gaussian noise is added at a requested SNR.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::hsi::HsiCube;
use crate::io::IntGrid;

/// Description of a scene to generate. `cluster_sizes` must sum to `pixels`.
#[derive(Debug, Clone)]
pub struct SyntheticSceneSpec {
    pub pixels: usize,
    pub bands: usize,
    pub endmembers: usize,
    /// Dirichlet weight on the cluster's dominant endmember; the others get 1.
    pub concentration: f64,
    /// `None` generates a noiseless scene.
    pub snr_db: Option<f64>,
    pub cluster_sizes: Vec<usize>,
    pub seed: u64,
}

impl SyntheticSceneSpec {
    /// Two equal clusters, each dominated by one of two endmembers.
    pub fn two_material(pixels: usize, bands: usize, snr_db: Option<f64>, seed: u64) -> Self {
        let half = pixels / 2;
        SyntheticSceneSpec {
            pixels,
            bands,
            endmembers: 2,
            concentration: 8.0,
            snr_db,
            cluster_sizes: vec![half, pixels - half],
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.pixels == 0 {
            return Err(Error::InvalidParameter {
                name: "pixels",
                reason: "scene must contain at least one pixel".into(),
            });
        }
        if self.bands == 0 {
            return Err(Error::InvalidParameter {
                name: "bands",
                reason: "scene must have at least one band".into(),
            });
        }
        if self.endmembers == 0 || self.endmembers > self.bands {
            return Err(Error::InvalidParameter {
                name: "endmembers",
                reason: format!(
                    "need 1..={} endmembers for {} bands, got {}",
                    self.bands, self.bands, self.endmembers
                ),
            });
        }
        if !(self.concentration.is_finite() && self.concentration > 0.0) {
            return Err(Error::InvalidParameter {
                name: "concentration",
                reason: format!("must be positive and finite, got {}", self.concentration),
            });
        }
        if let Some(snr) = self.snr_db {
            if !(snr.is_finite() && snr > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "snr_db",
                    reason: format!("must be positive and finite, got {snr}"),
                });
            }
        }
        if self.cluster_sizes.is_empty() || self.cluster_sizes.contains(&0) {
            return Err(Error::InvalidParameter {
                name: "cluster_sizes",
                reason: "every cluster must hold at least one pixel".into(),
            });
        }
        let total: usize = self.cluster_sizes.iter().sum();
        if total != self.pixels {
            return Err(Error::InvalidParameter {
                name: "cluster_sizes",
                reason: format!("sizes sum to {total}, expected {} pixels", self.pixels),
            });
        }
        // Pure pixel j is planted in cluster j % K at offset j / K.
        let k = self.cluster_sizes.len();
        for (c, &size) in self.cluster_sizes.iter().enumerate() {
            let planted = (self.endmembers + k - 1 - c) / k;
            if size < planted {
                return Err(Error::InvalidParameter {
                    name: "cluster_sizes",
                    reason: format!(
                        "cluster {c} holds {size} pixels but must host {planted} pure pixels"
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Generated scene plus planted ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub cube: HsiCube,
    /// Cluster label 1..=K per grid cell.
    pub labels: IntGrid,
    /// Planted endmember spectra, `endmembers x bands` row-major, pre-noise.
    pub endmembers: Vec<f64>,
    /// Row-major pixel index of the planted pure pixel for each endmember.
    pub pure_pixels: Vec<usize>,
    /// Planted abundances, `pixels x endmembers` row-major, pre-noise.
    pub abundances: Vec<f64>,
    /// Measured from the realised noise; infinite for noiseless scenes.
    pub achieved_snr_db: f64,
}

/// Split `n` into the most square `rows x cols` factorisation with `rows <= cols`.
pub fn near_square(n: usize) -> (usize, usize) {
    let mut rows = (n as f64).sqrt().floor() as usize;
    rows = rows.max(1);
    while !n.is_multiple_of(rows) {
        rows -= 1;
    }
    (rows, n / rows)
}

/// Unit-norm, non-negative, nearly orthogonal spectra: one band block per
/// endmember carries most of the energy, plus a small random jitter.
fn planted_endmembers(rng: &mut ChaCha8Rng, m: usize, bands: usize) -> Vec<f64> {
    let mut spectra = vec![0.0; m * bands];
    for j in 0..m {
        let row = &mut spectra[j * bands..(j + 1) * bands];
        let block = j * bands / m..(j + 1) * bands / m;
        for (b, value) in row.iter_mut().enumerate() {
            let base = if block.contains(&b) { 1.0 } else { 0.05 };
            *value = base + 0.15 * rng.gen::<f64>();
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    spectra
}

fn dirichlet(rng: &mut ChaCha8Rng, gammas: &[Gamma<f64>], out: &mut [f64]) {
    loop {
        let mut total = 0.0;
        for (a, g) in out.iter_mut().zip(gammas) {
            *a = g.sample(rng);
            total += *a;
        }
        if total > 1e-12 {
            out.iter_mut().for_each(|a| *a /= total);
            return;
        }
    }
}

/// Generate a scene. The same spec always produces the same scene.
pub fn generate(spec: &SyntheticSceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let (n, bands, m) = (spec.pixels, spec.bands, spec.endmembers);
    let k = spec.cluster_sizes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let endmembers = planted_endmembers(&mut rng, m, bands);
    let row_of = |j: usize| &endmembers[j * bands..(j + 1) * bands];

    let mut starts = vec![0usize; k];
    for c in 1..k {
        starts[c] = starts[c - 1] + spec.cluster_sizes[c - 1];
    }

    let mut data = vec![0.0; n * bands];
    let mut abundances = vec![0.0; n * m];
    let mut labels = vec![0u32; n];
    let mut alphas: Vec<Gamma<f64>> = Vec::with_capacity(m);
    for (c, (&start, &size)) in starts.iter().zip(&spec.cluster_sizes).enumerate() {
        let dominant = c % m;
        alphas.clear();
        for j in 0..m {
            let a = if j == dominant {
                spec.concentration
            } else {
                1.0
            };
            alphas.push(Gamma::new(a, 1.0).expect("positive shape"));
        }
        for i in start..start + size {
            labels[i] = c as u32 + 1;
            let weights = &mut abundances[i * m..(i + 1) * m];
            dirichlet(&mut rng, &alphas, weights);
            let pixel = &mut data[i * bands..(i + 1) * bands];
            for (j, &w) in weights.iter().enumerate() {
                for (p, e) in pixel.iter_mut().zip(row_of(j)) {
                    *p += w * e;
                }
            }
        }
    }

    let mut pure_pixels = Vec::with_capacity(m);
    for j in 0..m {
        let index = starts[j % k] + j / k;
        pure_pixels.push(index);
        data[index * bands..(index + 1) * bands].copy_from_slice(row_of(j));
        let weights = &mut abundances[index * m..(index + 1) * m];
        weights.fill(0.0);
        weights[j] = 1.0;
    }

    let signal_power: f64 = data.iter().map(|v| v * v).sum();
    let achieved_snr_db = match spec.snr_db {
        None => f64::INFINITY,
        Some(snr) => {
            let sigma = (signal_power / (n * bands) as f64 / 10f64.powf(snr / 10.0)).sqrt();
            let mut noise_power = 0.0;
            for value in data.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                let e = sigma * e;
                noise_power += e * e;
                *value += e;
            }
            10.0 * (signal_power / noise_power).log10()
        }
    };

    let (rows, cols) = near_square(n);
    let wavelengths: Vec<f64> = (0..bands).map(|b| 400.0 + 5.0 * b as f64).collect();
    let cube = HsiCube::new(rows, cols, bands, data, Some(wavelengths))?;
    let labels = IntGrid::new(rows, cols, labels)?;

    Ok(SyntheticScene {
        cube,
        labels,
        endmembers,
        pure_pixels,
        abundances,
        achieved_snr_db,
    })
}
