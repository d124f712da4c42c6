//! `LBGF` feature container: magic, version u32 = 1, M u32, D u32, then M*D
//! little-endian f32 values, row-major.

use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"LBGF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const NORM_TOL: f64 = 1e-4;

/// Per-mask feature rows; row `j - 1` belongs to mask id `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    dim: usize,
    rows: Vec<f32>,
}

impl FeatureTable {
    /// Builds a table from raw rows, unit-normalizing rows whose norm is off by more than 1e-4.
    /// All-zero rows are kept as they are.
    pub fn new(dim: usize, mut rows: Vec<f32>) -> Result<Self> {
        if dim == 0 && !rows.is_empty() || dim > 0 && !rows.len().is_multiple_of(dim) {
            return Err(Error::precondition(format!(
                "{} values do not form rows of dimension {dim}",
                rows.len()
            )));
        }
        if dim > 0 {
            for (j, row) in rows.chunks_mut(dim).enumerate() {
                if let Some(k) = row.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Data {
                        location: format!("feature row {j}, column {k}"),
                        message: "non-finite value".into(),
                    });
                }
                let norm = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
                if norm == 0.0 {
                    log::warn!("feature row {j} is all zeros");
                } else if (norm - 1.0).abs() > NORM_TOL {
                    for v in row.iter_mut() {
                        *v = (*v as f64 / norm) as f32;
                    }
                }
            }
        }
        Ok(Self { dim, rows })
    }

    /// A single-dimension table whose rows are all `1.0`; used when a frame carries no features.
    pub fn constant(masks: usize) -> Self {
        Self {
            dim: 1,
            rows: vec![1.0; masks],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Feature of a mask id (1-based).
    pub fn for_mask(&self, id: u32) -> Option<&[f32]> {
        let j = (id as usize).checked_sub(1)?;
        (j < self.len()).then(|| &self.rows[j * self.dim..(j + 1) * self.dim])
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.rows
    }
}

/// Dense per-pixel features, H*W rows in row-major pixel order. Rows are not normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFeatures {
    pub width: u32,
    pub height: u32,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl DenseFeatures {
    pub fn pixel(&self, x: u32, y: u32) -> &[f32] {
        let p = (y * self.width + x) as usize;
        &self.data[p * self.dim..(p + 1) * self.dim]
    }
}

fn parse_container(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format(format!(
            "bad feature magic {:?}, expected \"LBGF\"",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let version = LittleEndian::read_u32(&bytes[4..8]);
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!("unsupported feature file version {version}")));
    }
    let m = LittleEndian::read_u32(&bytes[8..12]) as usize;
    let d = LittleEndian::read_u32(&bytes[12..16]) as usize;
    let expected = (m as u64) * (d as u64) * 4;
    let payload = &bytes[HEADER_LEN..];
    if (payload.len() as u64) < expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len() as u64,
        });
    }
    if payload.len() as u64 > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after feature payload",
            payload.len() as u64 - expected
        )));
    }
    Ok((m, d, payload))
}

fn decode_f32(payload: &[u8]) -> Vec<f32> {
    let mut out = vec![0f32; payload.len() / 4];
    LittleEndian::read_f32_into(payload, &mut out);
    out
}

pub fn read_features(bytes: &[u8]) -> Result<FeatureTable> {
    let (m, d, payload) = parse_container(bytes)?;
    if m > 0 && d == 0 {
        return Err(Error::Format("feature dimension is 0".into()));
    }
    FeatureTable::new(if m == 0 { d.max(1) } else { d }, decode_f32(payload))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureTable> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_features(&bytes)
}

pub fn load_dense_features(path: impl AsRef<Path>, width: u32, height: u32) -> Result<DenseFeatures> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (m, d, payload) = parse_container(&bytes)?;
    if m != width as usize * height as usize {
        return Err(Error::Format(format!(
            "dense feature file holds {m} rows, expected {width}x{height} = {}",
            width as usize * height as usize
        )));
    }
    Ok(DenseFeatures {
        width,
        height,
        dim: d,
        data: decode_f32(payload),
    })
}

pub fn write_feature_rows<W: Write>(w: &mut W, rows: usize, dim: usize, data: &[f32]) -> std::io::Result<()> {
    assert_eq!(rows * dim, data.len());
    w.write_all(FEATURE_MAGIC)?;
    w.write_u32::<LittleEndian>(FEATURE_VERSION)?;
    w.write_u32::<LittleEndian>(rows as u32)?;
    w.write_u32::<LittleEndian>(dim as u32)?;
    for &v in data {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn save_features(table: &FeatureTable, path: impl AsRef<Path>) -> Result<()> {
    save_feature_rows(path, table.len(), table.dim(), table.as_slice())
}

pub fn save_feature_rows(path: impl AsRef<Path>, rows: usize, dim: usize, data: &[f32]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(HEADER_LEN + data.len() * 4);
    write_feature_rows(&mut buf, rows, dim, data).expect("writing to memory");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
