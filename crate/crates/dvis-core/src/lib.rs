//! Unsupervised clustering of hyperspectral images by diffusion geometry
//! weighted with spectral-unmixing pixel purity, plus the evaluation and
//! synthetic-data tooling needed to exercise the pipeline end to end.
//!
//! The pipeline: load a reflectance cube, optionally downsample and mask it,
//! normalize the kept pixel spectra, build a KNN graph and its Markov
//! transition structure, estimate the material subspace and per-pixel purity
//! by unmixing, score pixels by the harmonic mean of density and purity,
//! pick cluster modes where that score and diffusion distance are jointly
//! large, and propagate labels down the score ordering.

pub mod cluster;
pub mod error;
pub mod eval;
pub mod graph;
pub mod hsi;
pub mod io;
pub mod synth;
pub mod unmixing;

pub use error::{Error, ErrorKind, Result};
