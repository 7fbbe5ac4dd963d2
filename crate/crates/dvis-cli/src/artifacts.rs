//! Manifest, timing log, and artifact writing. Everything except the timing
//! log is deterministic for a fixed config and inputs, so reruns are
//! byte-identical.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dvis_core::io::{write_atomic, ContentHash};

use crate::error::{CliError, Result};

pub fn hash_bytes(bytes: &[u8]) -> String {
    let mut h = ContentHash::new("artifact");
    h.bytes(bytes);
    h.finish_hex()
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hash_bytes(&bytes))
}

/// Ordered `key=value` record of one run: parameters, input hashes, output
/// hashes, and summary numbers. Written last so it covers every artifact.
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            entries: vec![("command".into(), command.into())],
        }
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    /// Record an input path together with its content hash.
    pub fn input(&mut self, key: &str, path: &Path) -> Result<&mut Self> {
        self.set(&format!("input.{key}"), path.display());
        let digest = hash_file(path)?;
        self.set(&format!("input.{key}.sha256"), digest);
        Ok(self)
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join("manifest.txt");
        write_atomic(&path, self.text().as_bytes())?;
        Ok(path)
    }
}

/// Write one artifact atomically and record its hash in the manifest.
pub fn write_artifact(
    manifest: &mut Manifest,
    out_dir: &Path,
    name: &str,
    bytes: &[u8],
) -> Result<PathBuf> {
    let path = out_dir.join(name);
    write_atomic(&path, bytes)?;
    manifest.set(&format!("output.{name}.sha256"), hash_bytes(bytes));
    Ok(path)
}

/// Wall-clock stage timings, written as `timing.log`.
pub struct Timings {
    started: Instant,
    stages: Vec<(&'static str, f64)>,
}

impl Timings {
    pub fn new() -> Self {
        Timings {
            started: Instant::now(),
            stages: Vec::new(),
        }
    }

    /// Run a stage and record how long it took.
    pub fn stage<T>(&mut self, name: &'static str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let value = f();
        self.stages.push((name, start.elapsed().as_secs_f64()));
        value
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let mut text = String::new();
        for (name, secs) in &self.stages {
            text.push_str(&format!("{name}: {secs:.3} s\n"));
        }
        text.push_str(&format!(
            "total: {:.3} s\n",
            self.started.elapsed().as_secs_f64()
        ));
        write_atomic(&out_dir.join("timing.log"), text.as_bytes())?;
        Ok(())
    }
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}
