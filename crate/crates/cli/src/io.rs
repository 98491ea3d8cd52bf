//! Artifact formats.
//!
//! Fields are CSV with header `i1,…,in,value`, one row per node in row-major
//! order and values to 17 significant digits. Masks are binary PGM (P5,
//! maxval 255, 255 inside); 3D masks are stacked along the first axis, one
//! PGM per slice plus a JSON index. Summaries are JSON with sorted keys.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageReader};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

/// Row-major strides for `shape`.
fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_field(path: &Path, shape: &[usize], values: &[f64]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::artifact(path, e))?;
    let mut header: Vec<String> = (1..=shape.len()).map(|k| format!("i{k}")).collect();
    header.push("value".into());
    w.write_record(&header).map_err(|e| CliError::artifact(path, e))?;
    let st = strides(shape);
    let mut row = Vec::with_capacity(shape.len() + 1);
    for (flat, v) in values.iter().enumerate() {
        row.clear();
        for (k, s) in st.iter().enumerate() {
            row.push(((flat / s) % shape[k]).to_string());
        }
        row.push(format_value(*v));
        w.write_record(&row).map_err(|e| CliError::artifact(path, e))?;
    }
    w.flush().map_err(|e| CliError::artifact(path, e))
}

/// Reads a field CSV; the shape is inferred from the largest index.
pub fn read_field(path: &Path) -> Result<(Vec<usize>, Vec<f64>), CliError> {
    let err = |m: String| CliError::artifact(path, m);
    let mut r = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let header = r.headers().map_err(|e| err(e.to_string()))?.clone();
    let n = header.len().checked_sub(1).filter(|&n| n > 0).ok_or_else(|| err("missing columns".into()))?;
    let expected: Vec<String> = (1..=n).map(|k| format!("i{k}")).chain(["value".to_string()]).collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(err(format!("header must be {}", expected.join(","))));
    }
    let mut idx = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        for k in 0..n {
            idx.push(rec[k].parse::<usize>().map_err(|e| err(format!("row {}: {e}", line + 2)))?);
        }
        values.push(rec[n].parse::<f64>().map_err(|e| err(format!("row {}: {e}", line + 2)))?);
    }
    let shape: Vec<usize> = (0..n).map(|k| idx.iter().skip(k).step_by(n).max().map_or(0, |m| m + 1)).collect();
    if shape.iter().product::<usize>() != values.len() {
        return Err(err("rows do not cover a full grid".into()));
    }
    let st = strides(&shape);
    for (flat, chunk) in idx.chunks(n).enumerate() {
        if chunk.iter().zip(&st).map(|(i, s)| i * s).sum::<usize>() != flat {
            return Err(err(format!("row {} is out of row-major order", flat + 2)));
        }
    }
    Ok((shape, values))
}

fn pgm_bytes(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(pixels, width as u32, height as u32, ExtendedColorType::L8)
        .map_err(|e| CliError::Io(e.to_string()))?;
    Ok(out)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), CliError> {
    fs::write(path, pgm_bytes(width, height, pixels)?).map_err(|e| CliError::artifact(path, e))
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::artifact(path, e))?;
    if !bytes.starts_with(b"P5") {
        return Err(CliError::artifact(path, "not a binary PGM (P5)"));
    }
    let img = ImageReader::with_format(Cursor::new(bytes), image::ImageFormat::Pnm)
        .decode()
        .map_err(|e| CliError::artifact(path, e))?;
    let img = img.as_luma8().ok_or_else(|| CliError::artifact(path, "expected 8-bit grey levels"))?;
    Ok((img.width() as usize, img.height() as usize, img.as_raw().clone()))
}

#[derive(Debug, Serialize, Deserialize)]
struct SliceIndex {
    shape: Vec<usize>,
    axis: usize,
    slices: Vec<String>,
}

/// `(width, height)` of the raster for a 1D or 2D shape.
fn raster(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (*n, 1),
        [h, w] => (*w, *h),
        _ => unreachable!("rasters are 1D or 2D"),
    }
}

/// Writes a mask and returns the file a reader should open: `stem.pgm`, or
/// `stem.json` indexing `stem_zNNN.pgm` slices in 3D.
pub fn write_mask(dir: &Path, stem: &str, shape: &[usize], inside: &[bool]) -> Result<PathBuf, CliError> {
    let pixels: Vec<u8> = inside.iter().map(|&b| if b { 255 } else { 0 }).collect();
    if shape.len() <= 2 {
        let (w, h) = raster(shape);
        let path = dir.join(format!("{stem}.pgm"));
        write_pgm(&path, w, h, &pixels)?;
        return Ok(path);
    }
    let per = shape[1..].iter().product::<usize>();
    let (w, h) = raster(&shape[1..]);
    if shape.len() != 3 {
        return Err(CliError::Format(format!("{}D masks", shape.len())));
    }
    let mut slices = Vec::with_capacity(shape[0]);
    for (k, chunk) in pixels.chunks(per).enumerate() {
        let name = format!("{stem}_z{k:03}.pgm");
        write_pgm(&dir.join(&name), w, h, chunk)?;
        slices.push(name);
    }
    let index = SliceIndex { shape: shape.to_vec(), axis: 0, slices };
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &serde_json::to_value(&index).map_err(|e| CliError::Io(e.to_string()))?)?;
    Ok(path)
}

fn pixels_to_mask(path: &Path, pixels: &[u8]) -> Result<Vec<bool>, CliError> {
    pixels
        .iter()
        .map(|&p| match p {
            255 => Ok(true),
            0 => Ok(false),
            v => Err(CliError::artifact(path, format!("grey level {v} in a mask"))),
        })
        .collect()
}

/// Reads a mask written by [`write_mask`]. The returned shape is `[h, w]` for
/// a 2D raster.
pub fn read_mask(path: &Path) -> Result<(Vec<usize>, Vec<bool>), CliError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => {
            let (w, h, px) = read_pgm(path)?;
            Ok((vec![h, w], pixels_to_mask(path, &px)?))
        }
        Some("json") => {
            let text = fs::read_to_string(path).map_err(|e| CliError::artifact(path, e))?;
            let index: SliceIndex = serde_json::from_str(&text).map_err(|e| CliError::artifact(path, e))?;
            if index.axis != 0 || index.shape.len() != 3 || index.slices.len() != index.shape[0] {
                return Err(CliError::artifact(path, "inconsistent slice index"));
            }
            let dir = path.parent().unwrap_or(Path::new("."));
            let mut out = Vec::with_capacity(index.shape.iter().product());
            for name in &index.slices {
                let p = dir.join(name);
                let (w, h, px) = read_pgm(&p)?;
                if (h, w) != (index.shape[1], index.shape[2]) {
                    return Err(CliError::artifact(&p, "slice size disagrees with the index"));
                }
                out.extend(pixels_to_mask(&p, &px)?);
            }
            Ok((index.shape, out))
        }
        _ => Err(CliError::artifact(path, "masks are .pgm files or .json slice indices")),
    }
}

/// Pretty JSON with keys sorted; non-finite numbers are rejected.
pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    fs::write(path, json_text(value)?).map_err(|e| CliError::artifact(path, e))
}

pub fn json_text(value: &Value) -> Result<String, CliError> {
    // serde_json's default map is a BTreeMap, so keys come out sorted.
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Fails when a serialised number came out as `null` (NaN or ±∞).
pub fn ensure_finite(value: &Value, at: &str) -> Result<(), CliError> {
    match value {
        Value::Null => Err(CliError::Invariant(format!("{at} is not a finite number"))),
        Value::Array(a) => a.iter().enumerate().try_for_each(|(i, v)| ensure_finite(v, &format!("{at}[{i}]"))),
        Value::Object(m) => m.iter().try_for_each(|(k, v)| ensure_finite(v, &format!("{at}.{k}"))),
        _ => Ok(()),
    }
}
