//! `LBGL` label sidecar.
//!
//! Layout (little-endian): magic, version u32 = 1, N u32, three u32 arrays of
//! length N (object, part, subpart ids), then the part->object and
//! subpart->part maps, each a u32 pair count followed by (child, parent) pairs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use super::Level;
use crate::error::{Error, Result};
use crate::GaussianSet;

pub const LABEL_MAGIC: &[u8; 4] = b"LBGL";
pub const LABEL_VERSION: u32 = 1;

/// Per-Gaussian ids at each hierarchy level plus the parent maps. Id 0 is unlabeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelStore {
    pub object: Vec<u32>,
    pub part: Vec<u32>,
    pub subpart: Vec<u32>,
    pub part_parent: BTreeMap<u32, u32>,
    pub subpart_parent: BTreeMap<u32, u32>,
}

impl LabelStore {
    pub fn unlabeled(n: usize) -> Self {
        Self {
            object: vec![0; n],
            part: vec![0; n],
            subpart: vec![0; n],
            part_parent: BTreeMap::new(),
            subpart_parent: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.object.len()
    }

    pub fn is_empty(&self) -> bool {
        self.object.is_empty()
    }

    pub fn level(&self, level: Level) -> &[u32] {
        match level {
            Level::Object => &self.object,
            Level::Part => &self.part,
            Level::Subpart => &self.subpart,
        }
    }

    /// Gaussian sets per id at one level, id 0 excluded.
    pub fn groups(&self, level: Level) -> BTreeMap<u32, GaussianSet> {
        let mut out: BTreeMap<u32, GaussianSet> = BTreeMap::new();
        for (g, &id) in self.level(level).iter().enumerate() {
            if id != 0 {
                out.entry(id).or_default().insert(g as u32);
            }
        }
        out
    }

    pub fn ids(&self, level: Level) -> BTreeSet<u32> {
        self.level(level).iter().copied().filter(|&i| i != 0).collect()
    }

    /// Checks array lengths and that the parent maps form a forest consistent with the per-Gaussian ids.
    pub fn validate(&self) -> Result<()> {
        let n = self.object.len();
        if self.part.len() != n || self.subpart.len() != n {
            return Err(Error::Integrity(format!(
                "level arrays differ in length: {n}, {}, {}",
                self.part.len(),
                self.subpart.len()
            )));
        }
        let objects = self.ids(Level::Object);
        for (&child, &parent) in &self.part_parent {
            if child == 0 || parent == 0 {
                return Err(Error::Integrity(format!("part map entry {child}->{parent} uses id 0")));
            }
            if !objects.contains(&parent) {
                return Err(Error::Integrity(format!(
                    "part {child} references absent object {parent}"
                )));
            }
        }
        for (&child, &parent) in &self.subpart_parent {
            if child == 0 || parent == 0 {
                return Err(Error::Integrity(format!(
                    "subpart map entry {child}->{parent} uses id 0"
                )));
            }
            if !self.part_parent.contains_key(&parent) {
                return Err(Error::Integrity(format!(
                    "subpart {child} references absent part {parent}"
                )));
            }
        }
        for g in 0..n {
            let (o, p, s) = (self.object[g], self.part[g], self.subpart[g]);
            if p != 0 {
                match self.part_parent.get(&p) {
                    None => {
                        return Err(Error::Integrity(format!("part {p} (gaussian {g}) has no parent")))
                    }
                    Some(&parent) if parent != o => {
                        return Err(Error::Integrity(format!(
                            "gaussian {g}: part {p} belongs to object {parent} but the Gaussian is in object {o}"
                        )))
                    }
                    _ => {}
                }
            }
            if s != 0 {
                match self.subpart_parent.get(&s) {
                    None => {
                        return Err(Error::Integrity(format!(
                            "subpart {s} (gaussian {g}) has no parent"
                        )))
                    }
                    Some(&parent) if parent != p => {
                        return Err(Error::Integrity(format!(
                            "gaussian {g}: subpart {s} belongs to part {parent} but the Gaussian is in part {p}"
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let n = self.len();
        let mut out = Vec::with_capacity(12 + 12 * n + 8 * (self.part_parent.len() + self.subpart_parent.len()) + 8);
        out.extend_from_slice(LABEL_MAGIC);
        let w = &mut out;
        w.write_u32::<LittleEndian>(LABEL_VERSION).unwrap();
        w.write_u32::<LittleEndian>(n as u32).unwrap();
        for arr in [&self.object, &self.part, &self.subpart] {
            for &v in arr.iter() {
                w.write_u32::<LittleEndian>(v).unwrap();
            }
        }
        for map in [&self.part_parent, &self.subpart_parent] {
            w.write_u32::<LittleEndian>(map.len() as u32).unwrap();
            for (&c, &p) in map {
                w.write_u32::<LittleEndian>(c).unwrap();
                w.write_u32::<LittleEndian>(p).unwrap();
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != LABEL_MAGIC {
            return Err(Error::Format("bad label magic, expected \"LBGL\"".into()));
        }
        let version = cur.u32()?;
        if version != LABEL_VERSION {
            return Err(Error::Format(format!("unsupported label file version {version}")));
        }
        let n = cur.u32()? as usize;
        let mut arrays = Vec::with_capacity(3);
        for _ in 0..3 {
            let raw = cur.take(n * 4)?;
            let mut arr = vec![0u32; n];
            LittleEndian::read_u32_into(raw, &mut arr);
            arrays.push(arr);
        }
        let mut maps = Vec::with_capacity(2);
        for name in ["part", "subpart"] {
            let len = cur.u32()? as usize;
            let mut map = BTreeMap::new();
            for _ in 0..len {
                let (c, p) = (cur.u32()?, cur.u32()?);
                if let Some(prev) = map.insert(c, p) {
                    if prev != p {
                        return Err(Error::Integrity(format!(
                            "{name} {c} has two parents ({prev} and {p})"
                        )));
                    }
                    return Err(Error::Integrity(format!("{name} {c} listed twice")));
                }
            }
            maps.push(map);
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes in label file",
                bytes.len() - cur.pos
            )));
        }
        let subpart_parent = maps.pop().unwrap();
        let part_parent = maps.pop().unwrap();
        let subpart = arrays.pop().unwrap();
        let part = arrays.pop().unwrap();
        let object = arrays.pop().unwrap();
        let store = LabelStore {
            object,
            part,
            subpart,
            part_parent,
            subpart_parent,
        };
        store.validate()?;
        Ok(store)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len()).ok_or(
            Error::Truncated {
                expected: (self.pos + len) as u64,
                found: self.bytes.len() as u64,
            },
        )?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }
}

pub fn save_labels(store: &LabelStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = store.to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    LabelStore::from_bytes(&bytes)
}
