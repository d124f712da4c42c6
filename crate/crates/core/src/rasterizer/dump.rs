//! Debug dumps of render buffers.
//!
//! The contributor grid is a 16-byte header (magic `LBGB`, width u32, height
//! u32, reserved u32 = 0) followed by width*height little-endian u32 indices.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use super::render::RenderBuffers;
use crate::error::{Error, Result};

pub const GRID_MAGIC: &[u8; 4] = b"LBGB";

pub fn to_rgb8(width: u32, height: u32, color: &[[f32; 3]]) -> image::RgbImage {
    image::RgbImage::from_fn(width, height, |x, y| {
        let c = color[(y * width + x) as usize];
        image::Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

pub fn save_color_png(buffers: &RenderBuffers, path: impl AsRef<Path>) -> Result<()> {
    to_rgb8(buffers.width, buffers.height, &buffers.color).save(path.as_ref())?;
    Ok(())
}

pub fn encode_contributor_grid(buffers: &RenderBuffers) -> Vec<u8> {
    let mut out = vec![0u8; 16 + 4 * buffers.max_contributor.len()];
    out[..4].copy_from_slice(GRID_MAGIC);
    LittleEndian::write_u32(&mut out[4..8], buffers.width);
    LittleEndian::write_u32(&mut out[8..12], buffers.height);
    LittleEndian::write_u32_into(&buffers.max_contributor, &mut out[16..]);
    out
}

pub fn decode_contributor_grid(bytes: &[u8]) -> Result<(u32, u32, Vec<u32>)> {
    if bytes.len() < 16 || &bytes[..4] != GRID_MAGIC {
        return Err(Error::Format("not an LBGB contributor grid".into()));
    }
    let w = LittleEndian::read_u32(&bytes[4..8]);
    let h = LittleEndian::read_u32(&bytes[8..12]);
    let expected = 4 * w as u64 * h as u64;
    let found = bytes.len() as u64 - 16;
    if found != expected {
        return Err(Error::Truncated { expected, found });
    }
    let mut ids = vec![0u32; (w * h) as usize];
    LittleEndian::read_u32_into(&bytes[16..], &mut ids);
    Ok((w, h, ids))
}

pub fn save_contributor_grid(buffers: &RenderBuffers, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_contributor_grid(buffers)).map_err(|e| Error::io(path, e))
}
