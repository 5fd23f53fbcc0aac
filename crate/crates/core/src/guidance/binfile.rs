//! `dg.bin`: an 8-byte magic, `u32` height and width, then `height * width`
//! `f32` values in row-major order, all little endian.

use std::path::Path;

use super::GuidanceMap;
use crate::error::{Error, Result};
use crate::image::write_png;

pub const DG_MAGIC: &[u8; 8] = b"DISOCCDG";

pub fn write_dg_bin(dg: &GuidanceMap, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(16 + 4 * dg.values.len());
    out.extend(DG_MAGIC);
    out.extend((dg.height as u32).to_le_bytes());
    out.extend((dg.width as u32).to_le_bytes());
    for v in &dg.values {
        out.extend((*v as f32).to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a guidance grid; provenance is not stored in the file.
pub fn read_dg_bin(path: &Path) -> Result<GuidanceMap> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 16 || &buf[..8] != DG_MAGIC {
        return Err(Error::format(path, "missing guidance header"));
    }
    let height = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes")) as usize;
    let width = u32::from_le_bytes(buf[12..16].try_into().expect("4 bytes")) as usize;
    if buf.len() != 16 + 4 * height * width {
        return Err(Error::format(path, format!("expected {}x{} values", height, width)));
    }
    let values: Vec<f64> = buf[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
        return Err(Error::format(path, "guidance values outside [0, 1]"));
    }
    Ok(GuidanceMap {
        height,
        width,
        values,
        provenance: String::new(),
    })
}

/// 8-bit grayscale preview.
pub fn write_dg_preview(dg: &GuidanceMap, path: &Path) -> Result<()> {
    write_png(&dg.to_image(), path)
}
