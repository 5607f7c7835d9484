//! File helpers: atomic writes, JSON-lines, float32 rasters and PPM images.

use crate::error::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Serializes each item as one JSON line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path)?;
    parse_jsonl(std::io::BufReader::new(f))
}

pub fn parse_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
        out.push(item);
    }
    Ok(out)
}

/// JSON header describing a flat float32 raster (row-major, row 0 = lowest y).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: [f64; 2],
    pub dtype: String,
    pub byte_order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl RasterHeader {
    pub fn new(width: usize, height: usize, resolution: f64, origin: [f64; 2]) -> Self {
        RasterHeader {
            width,
            height,
            resolution,
            origin,
            dtype: "float32".into(),
            byte_order: "little".into(),
            label: None,
        }
    }
}

/// Little-endian float32 bytes of a raster; infinities are kept as IEEE inf.
pub fn f32_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn f32_from_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Parse("raster length is not a multiple of 4".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Writes `<path>` (float32) and `<path>.json` (header).
pub fn write_raster(path: &Path, header: &RasterHeader, values: &[f64]) -> Result<()> {
    write_atomic(path, &f32_bytes(values))?;
    let mut hp = path.as_os_str().to_owned();
    hp.push(".json");
    write_atomic(Path::new(&hp), &serde_json::to_vec_pretty(header)?)?;
    Ok(())
}

/// Fixed blue-white-red map for values in `[-1, 1]`.
pub fn diverging_color(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(-1.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64, s: f64| (a + (b - a) * s).round() as u8;
    if t >= 0.0 {
        [lerp(255.0, 178.0, t), lerp(255.0, 24.0, t), lerp(255.0, 43.0, t)]
    } else {
        let s = -t;
        [lerp(255.0, 33.0, s), lerp(255.0, 102.0, s), lerp(255.0, 172.0, s)]
    }
}

/// Encodes signed values as a binary PPM (P6), normalising by `scale`
/// (max |value| when `None`). Row 0 of the raster is drawn at the bottom.
pub fn encode_ppm(values: &[f64], width: usize, height: usize, scale: Option<f64>) -> Vec<u8> {
    let scale = scale.unwrap_or_else(|| {
        values.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs()))
    });
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for r in 0..height {
        let j = height - 1 - r;
        for i in 0..width {
            let v = values[j * width + i];
            let t = if scale > 0.0 { v / scale } else { 0.0 };
            out.extend_from_slice(&diverging_color(t));
        }
    }
    out
}
