use std::collections::BTreeSet;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};

/// Per-pixel instance ids; 0 is unassigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMap {
    pub width: u32,
    pub height: u32,
    pub ids: Vec<u16>,
}

impl MaskMap {
    pub fn new(width: u32, height: u32, ids: Vec<u16>) -> Result<Self> {
        if ids.len() != width as usize * height as usize {
            return Err(Error::precondition(format!(
                "mask of {width}x{height} needs {} ids, got {}",
                width as usize * height as usize,
                ids.len()
            )));
        }
        Ok(Self { width, height, ids })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            ids: vec![0; width as usize * height as usize],
        }
    }

    pub fn max_id(&self) -> u16 {
        self.ids.iter().copied().max().unwrap_or(0)
    }

    /// Distinct nonzero ids.
    pub fn instance_ids(&self) -> BTreeSet<u16> {
        self.ids.iter().copied().filter(|&i| i != 0).collect()
    }

    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.ids[(y * self.width + x) as usize]
    }
}

/// Loads a 16-bit single-channel id map, checking its size.
pub fn load_mask_map(path: impl AsRef<Path>, expected_width: u32, expected_height: u32) -> Result<MaskMap> {
    let path = path.as_ref();
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()?;
    let (width, height) = (img.width(), img.height());
    let buf = match img {
        DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(Error::Format(format!(
                "{}: mask must be 16-bit single-channel, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    if width != expected_width || height != expected_height {
        return Err(Error::Dimension {
            expected_width,
            expected_height,
            width,
            height,
        });
    }
    MaskMap::new(width, height, buf.into_raw())
}

pub fn save_mask_map(mask: &MaskMap, path: impl AsRef<Path>) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(mask.width, mask.height, mask.ids.clone())
            .expect("dimensions validated on construction");
    buf.save(path.as_ref())?;
    Ok(())
}
