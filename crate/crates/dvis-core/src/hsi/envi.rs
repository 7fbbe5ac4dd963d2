//! ENVI header/binary raster reading and writing.
//!
//! The header is a plain-text `key = value` file (values may be `{ ... }`
//! lists spanning lines); the companion file holds raw samples in BSQ, BIL,
//! or BIP interleave. Data type codes 4 (f32), 5 (f64), and 12 (u16) are
//! supported; cubes are always returned in (row, col, band) order.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::hsi::HsiCube;

/// On-disk sample ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interleave {
    /// Band-sequential: all of band 0, then band 1, ...
    Bsq,
    /// Band-interleaved-by-line: per row, all of band 0's row, then band 1's, ...
    Bil,
    /// Band-interleaved-by-pixel: per pixel, the full spectrum.
    Bip,
}

impl Interleave {
    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bsq" => Some(Interleave::Bsq),
            "bil" => Some(Interleave::Bil),
            "bip" => Some(Interleave::Bip),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Interleave::Bsq => "bsq",
            Interleave::Bil => "bil",
            Interleave::Bip => "bip",
        }
    }

    /// Flat offset of (row, col, band) under this interleave.
    #[inline]
    fn offset(self, rows: usize, cols: usize, bands: usize, r: usize, c: usize, b: usize) -> usize {
        let _ = rows;
        match self {
            Interleave::Bsq => (b * rows + r) * cols + c,
            Interleave::Bil => (r * bands + b) * cols + c,
            Interleave::Bip => (r * cols + c) * bands + b,
        }
    }
}

fn parse_header(text: &str, path: &str) -> Result<HashMap<String, String>> {
    let mut fields = HashMap::new();
    let mut rest = text;
    // Optional "ENVI" magic on the first line.
    if let Some(first) = rest.lines().next() {
        if first.trim() == "ENVI" {
            rest = &rest[first.len()..];
        }
    }
    while !rest.is_empty() {
        let line_end = rest.find('\n').unwrap_or(rest.len());
        let next_line = (line_end + 1).min(rest.len());
        let line = rest[..line_end].trim();
        if line.is_empty() || line.starts_with(';') {
            rest = &rest[next_line..];
            continue;
        }
        let eq = line.find('=').ok_or_else(|| Error::Header {
            path: path.into(),
            reason: format!("line without `=`: {line:?}"),
        })?;
        let key = line[..eq].trim().to_ascii_lowercase();
        let val_fragment = line[eq + 1..].trim();
        if val_fragment.starts_with('{') {
            // Braced value: runs until the closing brace, possibly spanning lines.
            let open = rest.find('{').expect("brace seen in this line");
            let close = rest[open..].find('}').ok_or_else(|| Error::Header {
                path: path.into(),
                reason: format!("unterminated {{ for key {key}"),
            })? + open;
            fields.insert(key, rest[open + 1..close].trim().to_string());
            rest = match rest[close..].find('\n') {
                Some(o) => &rest[close + o + 1..],
                None => "",
            };
        } else {
            fields.insert(key, val_fragment.to_string());
            rest = &rest[next_line..];
        }
    }
    Ok(fields)
}

fn required_usize(fields: &HashMap<String, String>, key: &str, path: &str) -> Result<usize> {
    let raw = fields.get(key).ok_or_else(|| Error::Header {
        path: path.into(),
        reason: format!("missing field `{key}`"),
    })?;
    raw.parse::<usize>().map_err(|_| Error::Header {
        path: path.into(),
        reason: format!("field `{key}` is not an integer: {raw:?}"),
    })
}

/// Locate the binary companion of a header file.
fn data_path_for(header: &Path) -> Result<PathBuf> {
    let mut candidates = Vec::new();
    if header.extension().map(|e| e.eq_ignore_ascii_case("hdr")) == Some(true) {
        candidates.push(header.with_extension(""));
        for ext in ["img", "dat", "raw", "bsq", "bil", "bip"] {
            candidates.push(header.with_extension(ext));
        }
    }
    candidates
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Header {
            path: header.display().to_string(),
            reason: "no companion binary file found".into(),
        })
}

/// Load an ENVI header/binary pair into a cube in (row, col, band) order.
///
/// Integer samples are converted to `f64` unchanged. The companion binary
/// must match the declared size exactly (after `header offset` bytes).
pub fn load_envi(header_path: &Path) -> Result<HsiCube> {
    let path_str = header_path.display().to_string();
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(path_str.clone(), e))?;
    let fields = parse_header(&text, &path_str)?;

    let cols = required_usize(&fields, "samples", &path_str)?;
    let rows = required_usize(&fields, "lines", &path_str)?;
    let bands = required_usize(&fields, "bands", &path_str)?;
    let dtype = required_usize(&fields, "data type", &path_str)? as u32;
    let byte_order = match fields.get("byte order").map(String::as_str) {
        Some("0") | None => 0u8,
        Some("1") => 1u8,
        Some(other) => {
            return Err(Error::Header {
                path: path_str,
                reason: format!("bad byte order {other:?}"),
            })
        }
    };
    let interleave_raw = fields.get("interleave").ok_or_else(|| Error::Header {
        path: path_str.clone(),
        reason: "missing field `interleave`".into(),
    })?;
    let interleave = Interleave::parse(interleave_raw).ok_or_else(|| Error::Header {
        path: path_str.clone(),
        reason: format!("unknown interleave {interleave_raw:?}"),
    })?;
    let offset = fields
        .get("header offset")
        .map(|v| {
            v.parse::<u64>().map_err(|_| Error::Header {
                path: path_str.clone(),
                reason: format!("bad header offset {v:?}"),
            })
        })
        .transpose()?
        .unwrap_or(0);

    let sample_bytes: u64 = match dtype {
        4 => 4,
        5 => 8,
        12 => 2,
        code => {
            return Err(Error::UnsupportedDataType {
                code,
                path: path_str,
            })
        }
    };

    let data_path = data_path_for(header_path)?;
    let data_str = data_path.display().to_string();
    let raw = fs::read(&data_path).map_err(|e| Error::io(data_str.clone(), e))?;
    let expected = offset + (rows * cols * bands) as u64 * sample_bytes;
    if raw.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: data_str,
            expected,
            found: raw.len() as u64,
        });
    }
    let body = &raw[offset as usize..];

    let n = rows * cols * bands;
    let mut disk = vec![0.0f64; n];
    match (dtype, byte_order) {
        (4, 0) => {
            for (i, chunk) in body.chunks_exact(4).enumerate() {
                disk[i] = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
            }
        }
        (4, 1) => {
            for (i, chunk) in body.chunks_exact(4).enumerate() {
                disk[i] = f32::from_be_bytes(chunk.try_into().unwrap()) as f64;
            }
        }
        (5, 0) => {
            for (i, chunk) in body.chunks_exact(8).enumerate() {
                disk[i] = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        (5, 1) => {
            for (i, chunk) in body.chunks_exact(8).enumerate() {
                disk[i] = f64::from_be_bytes(chunk.try_into().unwrap());
            }
        }
        (12, 0) => {
            for (i, chunk) in body.chunks_exact(2).enumerate() {
                disk[i] = u16::from_le_bytes(chunk.try_into().unwrap()) as f64;
            }
        }
        (12, 1) => {
            for (i, chunk) in body.chunks_exact(2).enumerate() {
                disk[i] = u16::from_be_bytes(chunk.try_into().unwrap()) as f64;
            }
        }
        _ => unreachable!(),
    }

    // Reorder to (row, col, band).
    let mut data = vec![0.0f64; n];
    for r in 0..rows {
        for c in 0..cols {
            for b in 0..bands {
                data[(r * cols + c) * bands + b] =
                    disk[interleave.offset(rows, cols, bands, r, c, b)];
            }
        }
    }

    let wavelengths = match fields.get("wavelength") {
        Some(list) => {
            let parsed: std::result::Result<Vec<f64>, _> = list
                .split(',')
                .map(|tok| tok.trim().parse::<f64>())
                .collect();
            let w = parsed.map_err(|_| Error::Header {
                path: path_str.clone(),
                reason: "unparsable wavelength list".into(),
            })?;
            if w.len() != bands {
                return Err(Error::Header {
                    path: path_str,
                    reason: format!("wavelength list has {} entries for {bands} bands", w.len()),
                });
            }
            Some(w)
        }
        None => None,
    };

    HsiCube::new(rows, cols, bands, data, wavelengths)
}

/// Write a cube as an ENVI pair (`<stem>.hdr` + `<stem>.img`), f64
/// little-endian in the requested interleave. Returns the header path.
pub fn write_envi(cube: &HsiCube, stem: &Path, interleave: Interleave) -> Result<PathBuf> {
    let hdr_path = stem.with_extension("hdr");
    let img_path = stem.with_extension("img");
    let (rows, cols, bands) = (cube.rows(), cube.cols(), cube.bands());

    let mut header = String::new();
    header.push_str("ENVI\n");
    header.push_str(&format!("samples = {cols}\n"));
    header.push_str(&format!("lines = {rows}\n"));
    header.push_str(&format!("bands = {bands}\n"));
    header.push_str("header offset = 0\n");
    header.push_str("file type = ENVI Standard\n");
    header.push_str("data type = 5\n");
    header.push_str(&format!("interleave = {}\n", interleave.name()));
    header.push_str("byte order = 0\n");
    if let Some(w) = cube.wavelengths_nm() {
        let list: Vec<String> = w.iter().map(|v| format!("{v}")).collect();
        header.push_str(&format!("wavelength = {{ {} }}\n", list.join(", ")));
    }
    fs::write(&hdr_path, header).map_err(|e| Error::io(hdr_path.display().to_string(), e))?;

    let mut buf = Vec::with_capacity(rows * cols * bands * 8);
    // Iterate in disk order for the chosen interleave.
    match interleave {
        Interleave::Bsq => {
            for b in 0..bands {
                for r in 0..rows {
                    for c in 0..cols {
                        buf.extend_from_slice(&cube.at(r, c, b).to_le_bytes());
                    }
                }
            }
        }
        Interleave::Bil => {
            for r in 0..rows {
                for b in 0..bands {
                    for c in 0..cols {
                        buf.extend_from_slice(&cube.at(r, c, b).to_le_bytes());
                    }
                }
            }
        }
        Interleave::Bip => {
            for v in cube.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let mut f =
        fs::File::create(&img_path).map_err(|e| Error::io(img_path.display().to_string(), e))?;
    f.write_all(&buf)
        .map_err(|e| Error::io(img_path.display().to_string(), e))?;
    Ok(hdr_path)
}
