//! Grid CSV serialization, PGM raster output, atomic file writes, and
//! content hashing for cache keys.
//!
//! Masks, label maps, and crown maps all share one on-disk shape: a
//! `row,col,value` CSV listing every cell of a grid of nonnegative
//! integers, row-major, with a fixed header line. Zero means
//! "discarded" / "unlabeled" / "no crown" depending on the consumer.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A dense grid of nonnegative integers on a scene's spatial extent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntGrid {
    rows: usize,
    cols: usize,
    values: Vec<u32>,
}

impl IntGrid {
    pub fn new(rows: usize, cols: usize, values: Vec<u32>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::InvalidCube(format!(
                "grid of {} values does not fill {rows}x{cols}",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: u32) {
        self.values[row * self.cols + col] = value;
    }

    /// Row-major cell values.
    pub fn values(&self) -> &[u32] {
        &self.values
    }
}

/// Read a `row,col,value` CSV into a dense grid.
///
/// The grid extent is the smallest one covering every listed cell; cells
/// not listed are zero. A `row,col,value` header line is accepted and
/// skipped. Duplicate cells are rejected.
pub fn read_grid_csv(path: &Path) -> Result<IntGrid> {
    let path_str = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path_str.clone(), e))?;
    let mut triplets: Vec<(u32, u32, u32)> = Vec::new();
    let mut max_r = 0u32;
    let mut max_c = 0u32;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Csv {
                path: path_str,
                line: idx + 1,
                reason: format!("expected 3 comma-separated fields, got {}", fields.len()),
            });
        }
        let parsed: std::result::Result<Vec<u32>, _> =
            fields.iter().map(|f| f.parse::<u32>()).collect();
        match parsed {
            Ok(v) => {
                max_r = max_r.max(v[0]);
                max_c = max_c.max(v[1]);
                triplets.push((v[0], v[1], v[2]));
            }
            Err(_) if idx == 0 => continue, // header line
            Err(_) => {
                return Err(Error::Csv {
                    path: path_str,
                    line: idx + 1,
                    reason: format!("non-integer field in {line:?}"),
                });
            }
        }
    }
    if triplets.is_empty() {
        return Err(Error::Csv {
            path: path_str,
            line: 0,
            reason: "no cells listed".into(),
        });
    }
    let rows = max_r as usize + 1;
    let cols = max_c as usize + 1;
    let mut values = vec![0u32; rows * cols];
    let mut seen = vec![false; rows * cols];
    for (r, c, v) in triplets {
        let i = r as usize * cols + c as usize;
        if seen[i] {
            return Err(Error::Csv {
                path: path_str,
                line: 0,
                reason: format!("cell ({r}, {c}) listed more than once"),
            });
        }
        seen[i] = true;
        values[i] = v;
    }
    IntGrid::new(rows, cols, values)
}

/// Render a grid as `row,col,value` CSV text, every cell, row-major.
pub fn grid_csv_text(grid: &IntGrid, value_name: &str) -> String {
    let mut out = String::with_capacity(grid.values.len() * 8 + 16);
    out.push_str(&format!("row,col,{value_name}\n"));
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            out.push_str(&format!("{r},{c},{}\n", grid.get(r, c)));
        }
    }
    out
}

/// Write a grid as CSV atomically.
pub fn write_grid_csv(path: &Path, grid: &IntGrid, value_name: &str) -> Result<()> {
    write_atomic(path, grid_csv_text(grid, value_name).as_bytes())
}

/// Render a grid as a binary PGM (P5) raster.
///
/// Cell values must fit in a byte; label maps with K ≤ 255 always do.
pub fn grid_pgm_bytes(grid: &IntGrid) -> Result<Vec<u8>> {
    if let Some(&big) = grid.values.iter().find(|&&v| v > 255) {
        return Err(Error::InvalidParameter {
            name: "labels",
            reason: format!("PGM output supports values up to 255, found {big}"),
        });
    }
    let mut out = format!("P5\n{} {}\n255\n", grid.cols, grid.rows).into_bytes();
    out.extend(grid.values.iter().map(|&v| v as u8));
    Ok(out)
}

/// Write a grid as a PGM raster atomically.
pub fn write_grid_pgm(path: &Path, grid: &IntGrid) -> Result<()> {
    write_atomic(path, &grid_pgm_bytes(grid)?)
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Write bytes to `path` via a temp file in the same directory plus rename,
/// so readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let path_str = path.display().to_string();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter {
            name: "path",
            reason: format!("{path_str} has no file name"),
        })?
        .to_string_lossy()
        .into_owned();
    let nonce = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp_name = format!(".{file_name}.tmp-{}-{nonce}", std::process::id());
    let tmp = match dir {
        Some(d) => d.join(&tmp_name),
        None => Path::new(&tmp_name).to_path_buf(),
    };
    fs::write(&tmp, bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path_str, e)
    })
}

/// Incremental SHA-256 content hash with length-prefixed fields, used to key
/// on-disk caches. Equal inputs hash equal; fields cannot bleed into each
/// other because every update carries its own length.
pub struct ContentHash {
    hasher: Sha256,
}

impl ContentHash {
    pub fn new(domain: &str) -> Self {
        let mut h = ContentHash {
            hasher: Sha256::new(),
        };
        h.str(domain);
        h
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.hasher.update((s.len() as u64).to_le_bytes());
        self.hasher.update(s.as_bytes());
        self
    }

    pub fn bytes(&mut self, bs: &[u8]) -> &mut Self {
        self.hasher.update((bs.len() as u64).to_le_bytes());
        self.hasher.update(bs);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.hasher.update(1u64.to_le_bytes());
        self.hasher.update(v.to_le_bytes());
        self
    }

    pub fn f64s(&mut self, vs: &[f64]) -> &mut Self {
        self.hasher.update((vs.len() as u64).to_le_bytes());
        for v in vs {
            self.hasher.update(v.to_le_bytes());
        }
        self
    }

    /// Hex digest of everything fed so far.
    pub fn finish_hex(self) -> String {
        let digest = self.hasher.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}
