//! Run configuration: a plain `key=value` file merged with command-line
//! flags, flags winning. The defaults are the 1 m forest study settings.

use std::fs;
use std::path::{Path, PathBuf};

use dvis_core::cluster::ClusterParams;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    pub cube: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub crowns: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub predicted: Option<PathBuf>,
    pub k: Option<usize>,
    pub n_neighbors: Option<usize>,
    pub sigma0: Option<f64>,
    pub time: Option<u32>,
    pub seed: Option<u64>,
    pub factor: Option<u32>,
    pub eigen_tolerance: Option<f64>,
    pub normalize: Option<bool>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

fn parse<T: std::str::FromStr>(path: &Path, line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| CliError::Config {
        path: path.to_path_buf(),
        line,
        message: format!("cannot parse {key}={raw}"),
    })
}

impl PipelineConfig {
    /// Read a config file. Blank lines and `#` comments are ignored; every
    /// other line must be `key=value` with a known key.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config = PipelineConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let n = idx + 1;
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config {
                    path: path.to_path_buf(),
                    line: n,
                    message: format!("expected key=value, got {line:?}"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "cube" => config.cube = Some(value.into()),
                "mask" => config.mask = Some(value.into()),
                "crowns" => config.crowns = Some(value.into()),
                "reference" => config.reference = Some(value.into()),
                "predicted" => config.predicted = Some(value.into()),
                "k" => config.k = Some(parse(path, n, key, value)?),
                "n_neighbors" => config.n_neighbors = Some(parse(path, n, key, value)?),
                "sigma0" => config.sigma0 = Some(parse(path, n, key, value)?),
                "time" => config.time = Some(parse(path, n, key, value)?),
                "seed" => config.seed = Some(parse(path, n, key, value)?),
                "factor" => config.factor = Some(parse(path, n, key, value)?),
                "eigen_tolerance" => config.eigen_tolerance = Some(parse(path, n, key, value)?),
                "normalize" => config.normalize = Some(parse(path, n, key, value)?),
                "threads" => config.threads = Some(parse(path, n, key, value)?),
                "out" => config.out = Some(value.into()),
                "cache_dir" => config.cache_dir = Some(value.into()),
                _ => {
                    return Err(CliError::Config {
                        path: path.to_path_buf(),
                        line: n,
                        message: format!("unknown key `{key}`"),
                    });
                }
            }
        }
        Ok(config)
    }

    pub fn k(&self) -> usize {
        self.k.unwrap_or(2)
    }

    pub fn n_neighbors(&self) -> usize {
        self.n_neighbors.unwrap_or(150)
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0.unwrap_or(3.89e-4)
    }

    pub fn time(&self) -> u32 {
        self.time.unwrap_or(32)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn factor(&self) -> u32 {
        self.factor.unwrap_or(4)
    }

    pub fn normalize(&self) -> bool {
        self.normalize.unwrap_or(false)
    }

    pub fn out(&self) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| PathBuf::from("dvis-out"))
    }

    /// Explicit config wins, then the environment, then a directory beside
    /// the other outputs.
    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .or_else(|| std::env::var_os("DVIS_CACHE_DIR").map(PathBuf::from))
            .unwrap_or_else(|| self.out().join("cache"))
    }

    pub fn cluster_params(&self) -> ClusterParams {
        let defaults = ClusterParams::default();
        ClusterParams {
            clusters: self.k(),
            n_neighbors: self.n_neighbors(),
            density_neighbors: None,
            sigma0: self.sigma0(),
            time: self.time(),
            seed: self.seed(),
            eigen_tolerance: self.eigen_tolerance.unwrap_or(defaults.eigen_tolerance),
            ..defaults
        }
    }

    pub fn require_cube(&self) -> Result<PathBuf> {
        self.cube
            .clone()
            .ok_or_else(|| CliError::flag("cube", "no ENVI header given (argument or config)"))
    }
}
