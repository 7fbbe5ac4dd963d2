//! On-disk graph cache: a CSV edge list plus a versioned binary blob holding
//! the eigenpairs, so reruns over the same pixels skip the eigensolve.
//!
//! The cache key is a content hash of the pixel matrix and N. The binary
//! header additionally records the eigen options used; a lookup with
//! different options is a miss, never a wrong answer.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::graph::{GraphOptions, PixelGraph};
use crate::hsi::PixelSet;
use crate::io::{write_atomic, ContentHash};

const MAGIC: &[u8; 8] = b"DVEIG001";

/// Content hash identifying (pixels, N).
pub fn cache_key(pixels: &PixelSet, n_neighbors: usize) -> String {
    let mut h = ContentHash::new("graph-cache-v1");
    h.f64s(pixels.spectra())
        .u64(pixels.dims() as u64)
        .u64(pixels.len() as u64)
        .u64(n_neighbors as u64);
    h.finish_hex()
}

fn edges_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.edges.csv"))
}

fn eigen_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.eigen.bin"))
}

/// Persist a built graph under `dir/<key>.*`.
pub fn store(dir: &Path, key: &str, graph: &PixelGraph, opts: &GraphOptions) -> Result<()> {
    let mut edges = String::new();
    for i in 0..graph.len() {
        for &j in graph.neighbors(i) {
            if (j as usize) > i {
                edges.push_str(&format!("{i},{j}\n"));
            }
        }
    }

    let n = graph.len() as u64;
    let k_eig = graph.eigenvalues().len() as u64;
    let mut blob = Vec::new();
    blob.extend_from_slice(MAGIC);
    blob.extend_from_slice(&n.to_le_bytes());
    blob.extend_from_slice(&(graph.n_neighbors() as u64).to_le_bytes());
    blob.extend_from_slice(&k_eig.to_le_bytes());
    let t_code = opts.truncation_t.map_or(u64::MAX, u64::from);
    blob.extend_from_slice(&t_code.to_le_bytes());
    blob.extend_from_slice(&opts.eigen_tolerance.to_le_bytes());
    blob.extend_from_slice(&(opts.eigen_cap.min(u64::MAX as usize) as u64).to_le_bytes());
    blob.extend_from_slice(&(graph.bridges().len() as u64).to_le_bytes());
    for &(a, b) in graph.bridges() {
        blob.extend_from_slice(&a.to_le_bytes());
        blob.extend_from_slice(&b.to_le_bytes());
    }
    for k in 0..graph.eigenvalues().len() {
        blob.extend_from_slice(&graph.eigenvalues()[k].to_le_bytes());
    }
    for k in 0..graph.eigenvalues().len() {
        for &v in graph.eigenvector(k) {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }

    write_atomic(&edges_path(dir, key), edges.as_bytes())?;
    write_atomic(&eigen_path(dir, key), &blob)
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

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn parse_cached(edges_text: &str, blob: &[u8], opts: &GraphOptions) -> Option<PixelGraph> {
    let mut r = Reader { buf: blob, pos: 0 };
    if r.take(8)? != MAGIC {
        return None;
    }
    let n = r.u64()? as usize;
    let n_neighbors = r.u64()? as usize;
    let k_eig = r.u64()? as usize;
    let t_code = r.u64()?;
    let tolerance = r.f64()?;
    let cap = r.u64()?;
    let stored_t = if t_code == u64::MAX {
        None
    } else {
        Some(t_code as u32)
    };
    if stored_t != opts.truncation_t
        || tolerance.to_bits() != opts.eigen_tolerance.to_bits()
        || cap != opts.eigen_cap.min(u64::MAX as usize) as u64
    {
        return None;
    }
    let bridge_count = r.u64()? as usize;
    let mut bridges = Vec::with_capacity(bridge_count);
    for _ in 0..bridge_count {
        bridges.push((r.u32()?, r.u32()?));
    }
    let mut eigenvalues = Vec::with_capacity(k_eig);
    for _ in 0..k_eig {
        eigenvalues.push(r.f64()?);
    }
    let mut eigenvectors = Vec::with_capacity(k_eig * n);
    for _ in 0..k_eig * n {
        eigenvectors.push(r.f64()?);
    }
    if r.pos != blob.len() || n == 0 || k_eig == 0 {
        return None;
    }

    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n];
    for line in edges_text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (a, b) = line.split_once(',')?;
        let a: usize = a.trim().parse().ok()?;
        let b: usize = b.trim().parse().ok()?;
        if a >= n || b >= n || a == b {
            return None;
        }
        rows[a].push(b as u32);
        rows[b].push(a as u32);
    }
    let mut offsets = vec![0usize];
    let mut neighbors = Vec::new();
    let mut degrees = Vec::with_capacity(n);
    for row in rows.iter_mut() {
        row.sort_unstable();
        if row.windows(2).any(|w| w[0] == w[1]) || row.is_empty() {
            return None;
        }
        neighbors.extend_from_slice(row);
        offsets.push(neighbors.len());
        degrees.push(row.len() as f64);
    }
    let total: f64 = degrees.iter().sum();
    let stationary = degrees.iter().map(|d| d / total).collect();

    Some(PixelGraph {
        n,
        n_neighbors,
        offsets,
        neighbors,
        degrees,
        stationary,
        eigenvalues,
        eigenvectors,
        bridges,
    })
}

/// Look up a cached graph. A miss (absent, corrupt, or built with different
/// eigen options) returns Ok(None).
pub fn load(dir: &Path, key: &str, opts: &GraphOptions) -> Result<Option<PixelGraph>> {
    let edges_file = edges_path(dir, key);
    let eigen_file = eigen_path(dir, key);
    if !edges_file.is_file() || !eigen_file.is_file() {
        return Ok(None);
    }
    let edges_text = match fs::read_to_string(&edges_file) {
        Ok(t) => t,
        Err(_) => return Ok(None),
    };
    let blob = match fs::read(&eigen_file) {
        Ok(b) => b,
        Err(_) => return Ok(None),
    };
    match parse_cached(&edges_text, &blob, opts) {
        Some(graph) => Ok(Some(graph)),
        None => {
            log::warn!("graph cache entry {key} is unusable; recomputing");
            Ok(None)
        }
    }
}
