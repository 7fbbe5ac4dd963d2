//! On-disk unmixing-model cache so reruns over the same pixels and seed skip
//! the subspace estimate, endmember search, and abundance solves.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::Result;
use crate::hsi::PixelSet;
use crate::io::{write_atomic, ContentHash};
use crate::unmixing::UnmixingModel;

const MAGIC: &[u8; 8] = b"DVUMX001";

/// Content hash identifying (pixels, seed).
pub fn cache_key(pixels: &PixelSet, seed: u64) -> String {
    let mut h = ContentHash::new("unmix-cache-v1");
    h.f64s(pixels.spectra())
        .u64(pixels.dims() as u64)
        .u64(pixels.len() as u64)
        .u64(seed);
    h.finish_hex()
}

fn model_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.unmix.bin"))
}

/// Persist a model under `dir/<key>.unmix.bin`.
pub fn store(dir: &Path, key: &str, model: &UnmixingModel) -> Result<()> {
    let mut blob = Vec::new();
    blob.extend_from_slice(MAGIC);
    blob.extend_from_slice(&(model.material_count() as u64).to_le_bytes());
    blob.extend_from_slice(&(model.dims() as u64).to_le_bytes());
    blob.extend_from_slice(&(model.len() as u64).to_le_bytes());
    for &i in model.endmember_indices() {
        blob.extend_from_slice(&(i as u64).to_le_bytes());
    }
    for &v in model.endmembers() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    for &v in model.abundances() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    for &v in model.purity() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&model_path(dir, key), &blob)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(len)?;
        if end > self.buf.len() {
            return None;
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Some(s)
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn parse_cached(blob: &[u8], pixels: &PixelSet) -> Option<UnmixingModel> {
    let mut r = Reader { buf: blob, pos: 0 };
    if r.take(8)? != MAGIC {
        return None;
    }
    let m = r.u64()? as usize;
    let dims = r.u64()? as usize;
    let n = r.u64()? as usize;
    if dims != pixels.dims() || n != pixels.len() || m == 0 || m > n {
        return None;
    }
    let mut indices = Vec::with_capacity(m);
    for _ in 0..m {
        let i = r.u64()? as usize;
        if i >= n {
            return None;
        }
        indices.push(i);
    }
    let mut endmembers = Vec::with_capacity(m * dims);
    for _ in 0..m * dims {
        endmembers.push(r.f64()?);
    }
    let mut abundances = Vec::with_capacity(n * m);
    for _ in 0..n * m {
        abundances.push(r.f64()?);
    }
    let mut purity = Vec::with_capacity(n);
    for _ in 0..n {
        purity.push(r.f64()?);
    }
    if r.pos != blob.len() {
        return None;
    }
    // The endmembers must still be exact copies of the named pixels.
    for (row, &i) in indices.iter().enumerate() {
        if endmembers[row * dims..(row + 1) * dims] != *pixels.row(i) {
            return None;
        }
    }
    UnmixingModel::from_parts(m, dims, endmembers, indices, abundances, purity).ok()
}

/// Look up a cached model. Absent, corrupt, or inconsistent entries are
/// misses, never errors.
pub fn load(dir: &Path, key: &str, pixels: &PixelSet) -> Result<Option<UnmixingModel>> {
    let path = model_path(dir, key);
    let Ok(blob) = fs::read(&path) else {
        return Ok(None);
    };
    match parse_cached(&blob, pixels) {
        Some(model) => Ok(Some(model)),
        None => {
            warn!("ignoring unusable unmixing cache entry {}", path.display());
            Ok(None)
        }
    }
}
