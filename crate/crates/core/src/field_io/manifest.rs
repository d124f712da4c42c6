//! Scene manifest: a JSON document listing the field and the posed frames.
//!
//! ```json
//! {
//!   "field": "scene.ply",
//!   "frames": [{
//!     "frame_id": "000", "width": 640, "height": 480,
//!     "fx": 500.0, "fy": 500.0, "cx": 320.0, "cy": 240.0,
//!     "world_to_camera": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1],
//!     "mask_paths": {"object": "masks/000_object.png", "part": "masks/000_part.png"},
//!     "feature_path": "features/000_object.lbgf",
//!     "image_path": "images/000.png"
//!   }]
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. Cameras follow the
//! OpenCV convention: +x right, +y down, +z forward.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use super::Level;
use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_id: String,
    pub width: u32,
    pub height: u32,
    pub intrinsics: Intrinsics,
    pub world_to_camera: Matrix4<f64>,
    pub mask_paths: BTreeMap<Level, PathBuf>,
    /// Per-mask features paired with the object-level mask ids.
    pub feature_path: Option<PathBuf>,
    /// Per-mask features for the part/subpart levels, when the extractor emits them.
    pub level_feature_paths: BTreeMap<Level, PathBuf>,
    /// Dense per-pixel features (H*W rows) for feature lifting.
    pub dense_feature_path: Option<PathBuf>,
    pub image_path: Option<PathBuf>,
}

impl Frame {
    /// Frame with no inputs attached; used for synthetic and evaluation cameras.
    pub fn camera_only(
        frame_id: impl Into<String>,
        width: u32,
        height: u32,
        intrinsics: Intrinsics,
        world_to_camera: Matrix4<f64>,
    ) -> Self {
        Frame {
            frame_id: frame_id.into(),
            width,
            height,
            intrinsics,
            world_to_camera,
            mask_paths: BTreeMap::new(),
            feature_path: None,
            level_feature_paths: BTreeMap::new(),
            dense_feature_path: None,
            image_path: None,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    /// Per-mask feature file for a level.
    pub fn features_for(&self, level: Level) -> Option<&Path> {
        match level {
            Level::Object => self
                .feature_path
                .as_deref()
                .or(self.level_feature_paths.get(&level).map(|p| p.as_path())),
            _ => self.level_feature_paths.get(&level).map(|p| p.as_path()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let geom = |message: String| Error::Geometry {
            frame_id: self.frame_id.clone(),
            message,
        };
        if self.width == 0 || self.height == 0 {
            return Err(geom(format!("image size {}x{}", self.width, self.height)));
        }
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0 && k.cx.is_finite() && k.cy.is_finite()) {
            return Err(geom(format!("invalid intrinsics {k:?}")));
        }
        if self.world_to_camera.iter().any(|v| !v.is_finite()) {
            return Err(geom("non-finite world_to_camera".into()));
        }
        let r = self.rotation();
        let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
        if dev > ORTHONORMAL_TOL {
            return Err(geom(format!(
                "rotation block is not orthonormal (max deviation {dev:.3e})"
            )));
        }
        if r.determinant() < 0.0 {
            return Err(geom("rotation block is a reflection".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub field_path: Option<PathBuf>,
    /// Frames in document order; this order is the incremental processing order.
    pub frames: Vec<Frame>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<PathBuf>,
    #[serde(default)]
    pub frames: Vec<FrameDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameDoc {
    pub frame_id: String,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_camera: Vec<f64>,
    #[serde(default)]
    pub mask_paths: BTreeMap<Level, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub feature_paths: BTreeMap<Level, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense_feature_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<PathBuf>,
}

impl FrameDoc {
    pub fn from_frame(frame: &Frame) -> Self {
        let m = frame.world_to_camera;
        FrameDoc {
            frame_id: frame.frame_id.clone(),
            width: frame.width,
            height: frame.height,
            fx: frame.intrinsics.fx,
            fy: frame.intrinsics.fy,
            cx: frame.intrinsics.cx,
            cy: frame.intrinsics.cy,
            world_to_camera: (0..4).flat_map(|r| (0..4).map(move |c| m[(r, c)])).collect(),
            mask_paths: frame.mask_paths.clone(),
            feature_path: frame.feature_path.clone(),
            feature_paths: frame.level_feature_paths.clone(),
            dense_feature_path: frame.dense_feature_path.clone(),
            image_path: frame.image_path.clone(),
        }
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new("")))
}

/// Parses a manifest document, resolving relative paths against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Manifest> {
    let doc: ManifestDoc = serde_json::from_str(text).map_err(|e| {
        if e.is_data() {
            Error::Schema(format!("manifest: {e}"))
        } else {
            Error::Format(format!("manifest is not valid JSON: {e}"))
        }
    })?;
    let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
    let mut frames = Vec::with_capacity(doc.frames.len());
    for fd in doc.frames {
        if fd.world_to_camera.len() != 16 {
            return Err(Error::Schema(format!(
                "frame {:?}: world_to_camera needs 16 numbers, found {}",
                fd.frame_id,
                fd.world_to_camera.len()
            )));
        }
        if !fd.mask_paths.contains_key(&Level::Object) {
            return Err(Error::Schema(format!(
                "frame {:?}: mask_paths has no object-level entry",
                fd.frame_id
            )));
        }
        let frame = Frame {
            world_to_camera: Matrix4::from_row_slice(&fd.world_to_camera),
            frame_id: fd.frame_id,
            width: fd.width,
            height: fd.height,
            intrinsics: Intrinsics {
                fx: fd.fx,
                fy: fd.fy,
                cx: fd.cx,
                cy: fd.cy,
            },
            mask_paths: fd.mask_paths.into_iter().map(|(l, p)| (l, resolve(p))).collect(),
            feature_path: fd.feature_path.map(resolve),
            level_feature_paths: fd
                .feature_paths
                .into_iter()
                .map(|(l, p)| (l, resolve(p)))
                .collect(),
            dense_feature_path: fd.dense_feature_path.map(resolve),
            image_path: fd.image_path.map(resolve),
        };
        frame.validate()?;
        frames.push(frame);
    }
    Ok(Manifest {
        field_path: doc.field.map(resolve),
        frames,
    })
}

/// Writes a manifest; paths are stored as given.
pub fn save_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let doc = ManifestDoc {
        field: manifest.field_path.clone(),
        frames: manifest.frames.iter().map(FrameDoc::from_frame).collect(),
    };
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
