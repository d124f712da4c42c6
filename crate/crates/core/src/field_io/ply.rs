//! Binary little-endian PLY in the standard 3DGS vertex layout.
//!
//! Files hold raw (pre-activation) parameters: `opacity` is a logit, `scale_*`
//! are log-scales and `rot_*` an unnormalized `(w, x, y, z)` quaternion.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};

use super::field::{logit, sigmoid, GaussianField, SH_COEFF_COUNTS};
use crate::error::{Error, Result};
use crate::GaussianSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<(String, Scalar)>,
}

#[derive(Debug)]
struct Header {
    elements: Vec<Element>,
}

fn parse_header<R: BufRead>(reader: &mut R) -> Result<Header> {
    let mut elements: Vec<Element> = Vec::new();
    let mut line = String::new();
    let mut line_no = 0usize;
    let mut saw_format = false;
    loop {
        line.clear();
        line_no += 1;
        let read = reader
            .read_line(&mut line)
            .map_err(|e| Error::io("<ply header>", e))?;
        if read == 0 {
            return Err(Error::Parse {
                line: line_no,
                content: String::new(),
                message: "unexpected end of file before end_header".into(),
            });
        }
        let text = line.trim_end_matches(['\n', '\r']);
        let err = |message: &str| Error::Parse {
            line: line_no,
            content: text.to_string(),
            message: message.to_string(),
        };
        let mut tokens = text.split_whitespace();
        let Some(keyword) = tokens.next() else {
            return Err(err("empty header line"));
        };
        if line_no == 1 {
            if text != "ply" {
                return Err(err("missing 'ply' magic"));
            }
            continue;
        }
        match keyword {
            "format" => {
                if tokens.next() != Some("binary_little_endian") {
                    return Err(err("only binary_little_endian PLY is supported"));
                }
                saw_format = true;
            }
            "comment" | "obj_info" => {}
            "element" => {
                let (Some(name), Some(count), None) = (tokens.next(), tokens.next(), tokens.next())
                else {
                    return Err(err("expected 'element <name> <count>'"));
                };
                let count = count
                    .parse::<usize>()
                    .map_err(|_| err("element count is not a non-negative integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let Some(element) = elements.last_mut() else {
                    return Err(err("property declared before any element"));
                };
                let (Some(ty), Some(name), None) = (tokens.next(), tokens.next(), tokens.next())
                else {
                    return Err(err("expected 'property <type> <name>' (list properties unsupported)"));
                };
                let ty = Scalar::parse(ty).ok_or_else(|| err("unknown property type"))?;
                element.properties.push((name.to_string(), ty));
            }
            "end_header" => break,
            _ => return Err(err("unknown header keyword")),
        }
    }
    if !saw_format {
        return Err(Error::Parse {
            line: line_no,
            content: "end_header".into(),
            message: "header has no format line".into(),
        });
    }
    Ok(Header { elements })
}

/// Reads a 3DGS field and applies activations.
pub fn load_field(path: impl AsRef<Path>) -> Result<GaussianField> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_field(BufReader::new(file))
}

pub fn read_field<R: BufRead>(mut reader: R) -> Result<GaussianField> {
    let header = parse_header(&mut reader)?;
    let mut skip_bytes = 0usize;
    let mut vertex = None;
    for el in &header.elements {
        if el.name == "vertex" {
            vertex = Some(el);
            break;
        }
        skip_bytes += el.count * el.properties.iter().map(|p| p.1.size()).sum::<usize>();
    }
    let vertex = vertex.ok_or_else(|| Error::Schema("no 'vertex' element".into()))?;

    let find = |name: &str| vertex.properties.iter().position(|p| p.0 == name);
    let mut required: Vec<String> = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    required.extend((0..3).map(|i| format!("scale_{i}")));
    required.extend((0..4).map(|i| format!("rot_{i}")));
    let missing: Vec<String> = required.iter().filter(|n| find(n).is_none()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "missing required vertex properties: {}",
            missing.join(", ")
        )));
    }
    let rest_count = vertex
        .properties
        .iter()
        .filter(|p| p.0.starts_with("f_rest_"))
        .count();
    if rest_count % 3 != 0 || !SH_COEFF_COUNTS.contains(&(rest_count / 3 + 1)) {
        return Err(Error::Schema(format!(
            "{rest_count} f_rest properties do not match SH degree 0-3"
        )));
    }
    let coeffs = rest_count / 3 + 1;
    let rest_names: Vec<String> = (0..rest_count).map(|i| format!("f_rest_{i}")).collect();
    let missing_rest: Vec<String> = rest_names.iter().filter(|n| find(n).is_none()).cloned().collect();
    if !missing_rest.is_empty() {
        return Err(Error::Schema(format!(
            "missing required vertex properties: {}",
            missing_rest.join(", ")
        )));
    }

    let mut offsets = Vec::with_capacity(vertex.properties.len());
    let mut stride = 0usize;
    for (_, ty) in &vertex.properties {
        offsets.push(stride);
        stride += ty.size();
    }
    let slot = |name: &str| {
        let i = find(name).expect("checked above");
        (offsets[i], vertex.properties[i].1)
    };
    let pos = [slot("x"), slot("y"), slot("z")];
    let dc = [slot("f_dc_0"), slot("f_dc_1"), slot("f_dc_2")];
    let rest: Vec<_> = rest_names.iter().map(|n| slot(n)).collect();
    let opacity = slot("opacity");
    let scale = [slot("scale_0"), slot("scale_1"), slot("scale_2")];
    let rot = [slot("rot_0"), slot("rot_1"), slot("rot_2"), slot("rot_3")];

    if skip_bytes > 0 {
        std::io::copy(&mut (&mut reader).take(skip_bytes as u64), &mut std::io::sink())
            .map_err(|e| Error::io("<ply payload>", e))?;
    }
    let n = vertex.count;
    let expected = (n * stride) as u64;
    let mut payload = Vec::with_capacity(n * stride);
    (&mut reader)
        .take(expected)
        .read_to_end(&mut payload)
        .map_err(|e| Error::io("<ply payload>", e))?;
    if (payload.len() as u64) < expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len() as u64,
        });
    }

    let mut positions = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    let mut rotations = Vec::with_capacity(n);
    let mut opacities = Vec::with_capacity(n);
    let mut sh = Vec::with_capacity(n * coeffs * 3);
    let rest_per_channel = coeffs - 1;
    for i in 0..n {
        let rec = &payload[i * stride..(i + 1) * stride];
        let get = |(off, ty): (usize, Scalar)| ty.read(&rec[off..]);
        let mut raw: Vec<f64> = Vec::with_capacity(14 + rest_count);
        raw.extend(pos.iter().map(|&s| get(s)));
        raw.extend(dc.iter().map(|&s| get(s)));
        raw.extend(rest.iter().map(|&s| get(s)));
        raw.push(get(opacity));
        raw.extend(scale.iter().map(|&s| get(s)));
        raw.extend(rot.iter().map(|&s| get(s)));
        if let Some(bad) = raw.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data {
                location: format!("gaussian {i}"),
                message: format!("non-finite raw value in payload slot {bad}"),
            });
        }
        // Positions are copied without a round-trip through f64 arithmetic.
        positions.push([raw[0] as f32, raw[1] as f32, raw[2] as f32]);
        let mut rest_it = raw[6..6 + rest_count].iter();
        let mut coeff_block = vec![0f32; coeffs * 3];
        for c in 0..3 {
            coeff_block[c] = raw[3 + c] as f32;
        }
        for c in 0..3 {
            for k in 1..coeffs {
                coeff_block[k * 3 + c] = *rest_it.next().unwrap() as f32;
            }
        }
        debug_assert_eq!(rest_per_channel * 3, rest_count);
        sh.extend_from_slice(&coeff_block);
        let base = 6 + rest_count;
        opacities.push(sigmoid(raw[base]) as f32);
        scales.push([
            raw[base + 1].exp() as f32,
            raw[base + 2].exp() as f32,
            raw[base + 3].exp() as f32,
        ]);
        let q = &raw[base + 4..base + 8];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Data {
                location: format!("gaussian {i}"),
                message: "zero-length rotation quaternion".into(),
            });
        }
        rotations.push([
            (q[0] / norm) as f32,
            (q[1] / norm) as f32,
            (q[2] / norm) as f32,
            (q[3] / norm) as f32,
        ]);
        if let Some(s) = scales[i].iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Data {
                location: format!("gaussian {i}"),
                message: format!("scale activates to {s}"),
            });
        }
    }
    GaussianField::new(positions, scales, rotations, opacities, sh, coeffs)
}

/// Writes the whole field with inverse activations applied.
pub fn save_field(field: &GaussianField, path: impl AsRef<Path>) -> Result<()> {
    let all: GaussianSet = (0..field.len() as u32).collect();
    save_object_field(field, &all, path)
}

/// Writes the listed Gaussians as a standalone field loadable by standard 3DGS viewers.
pub fn save_object_field(
    field: &GaussianField,
    indices: &GaussianSet,
    path: impl AsRef<Path>,
) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::EmptyObject);
    }
    let sub = field.subset(indices)?;
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_field(&sub, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_field<W: Write>(field: &GaussianField, w: &mut W) -> std::io::Result<()> {
    let coeffs = field.sh_coeffs();
    let rest = (coeffs - 1) * 3;
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", field.len())?;
    for name in ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"] {
        writeln!(w, "property float {name}")?;
    }
    for i in 0..rest {
        writeln!(w, "property float f_rest_{i}")?;
    }
    writeln!(w, "property float opacity")?;
    for i in 0..3 {
        writeln!(w, "property float scale_{i}")?;
    }
    for i in 0..4 {
        writeln!(w, "property float rot_{i}")?;
    }
    writeln!(w, "end_header")?;
    for i in 0..field.len() {
        for &v in &field.positions()[i] {
            w.write_f32::<LittleEndian>(v)?;
        }
        for _ in 0..3 {
            w.write_f32::<LittleEndian>(0.0)?;
        }
        let sh = field.sh(i);
        for c in 0..3 {
            w.write_f32::<LittleEndian>(sh[c])?;
        }
        for c in 0..3 {
            for k in 1..coeffs {
                w.write_f32::<LittleEndian>(sh[k * 3 + c])?;
            }
        }
        w.write_f32::<LittleEndian>(logit(field.opacities()[i] as f64) as f32)?;
        for &s in &field.scales()[i] {
            w.write_f32::<LittleEndian>((s as f64).ln() as f32)?;
        }
        for &q in &field.rotations()[i] {
            w.write_f32::<LittleEndian>(q)?;
        }
    }
    Ok(())
}
