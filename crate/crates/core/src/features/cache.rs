//! On-disk HOG field cache.
//!
//! One blob per image, named `{source_id:08}-{config_hash}.hog`:
//!
//! ```text
//! magic  "PMSMHOG\0"           8 bytes
//! version                      u32 LE (= 1)
//! cells_x, cells_y, bins       u32 LE each
//! pixel digest                 32 bytes, SHA-256 of the image's f32 LE pixels
//! values                       cells_y*cells_x*bins × f32 LE
//! ```
//!
//! A blob whose digest does not match the image is treated as a miss.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{hog, HogConfig, HogField};
use crate::error::{Error, Result};
use crate::image::{Image, LabeledImage};
use crate::util::config_hash;

const MAGIC: &[u8; 8] = b"PMSMHOG\0";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 4 + 32;

pub fn blob_path(dir: &Path, source_id: u64, cfg: &HogConfig) -> PathBuf {
    dir.join(format!("{source_id:08}-{}.hog", config_hash(cfg)))
}

fn pixel_digest(img: &Image) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in img.as_raw() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

pub fn encode(field: &HogField, digest: &[u8; 32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + field.data.len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, field.cells_x as u32, field.cells_y as u32, field.bins as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(digest);
    for v in &field.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a blob, returning the field and the pixel digest it was computed from.
pub fn decode(bytes: &[u8]) -> Result<(HogField, [u8; 32])> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Cache("bad magic or truncated header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != VERSION {
        return Err(Error::Cache(format!("unsupported version {version}")));
    }
    let (cells_x, cells_y, bins) = (u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize);
    let digest: [u8; 32] = bytes[24..56].try_into().unwrap();
    let n = cells_x * cells_y * bins;
    let body = &bytes[HEADER_LEN..];
    if body.len() != n * 4 {
        return Err(Error::Cache(format!(
            "expected {n} values, blob holds {} bytes",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((
        HogField {
            cells_x,
            cells_y,
            bins,
            data,
        },
        digest,
    ))
}

pub fn load_or_compute(dir: &Path, img: &LabeledImage, cfg: &HogConfig) -> Result<HogField> {
    let path = blob_path(dir, img.source_id, cfg);
    let digest = pixel_digest(&img.pixels);
    if let Ok(bytes) = fs::read(&path) {
        match decode(&bytes) {
            Ok((field, d)) if d == digest => return Ok(field),
            Ok(_) => log::debug!("stale feature cache {}", path.display()),
            Err(e) => log::warn!("ignoring feature cache {}: {e}", path.display()),
        }
    }
    let field = hog(&img.pixels, cfg)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    fs::write(&path, encode(&field, &digest)).map_err(|e| Error::io(&path, e))?;
    Ok(field)
}
