//! Scene inputs and outputs: 3DGS PLY fields, manifests, mask maps, feature
//! tables and label sidecars.

mod features;
mod field;
mod labels;
mod manifest;
mod mask;
mod ply;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use features::{
    load_dense_features, load_features, read_features, save_feature_rows, save_features,
    write_feature_rows, DenseFeatures, FeatureTable, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use field::{logit, sigmoid, GaussianField, SH_COEFF_COUNTS};
pub use labels::{load_labels, save_labels, LabelStore, LABEL_MAGIC, LABEL_VERSION};
pub use manifest::{
    load_manifest, parse_manifest, save_manifest, Frame, FrameDoc, Intrinsics, Manifest, ManifestDoc,
};
pub use mask::{load_mask_map, save_mask_map, MaskMap};
pub use ply::{load_field, read_field, save_field, save_object_field, write_field};

/// Segmentation granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Object,
    Part,
    Subpart,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Object, Level::Part, Level::Subpart];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Object => "object",
            Level::Part => "part",
            Level::Subpart => "subpart",
        }
    }

    /// The next coarser level, `None` for objects.
    pub fn parent(self) -> Option<Level> {
        match self {
            Level::Object => None,
            Level::Part => Some(Level::Object),
            Level::Subpart => Some(Level::Part),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "object" => Ok(Level::Object),
            "part" => Ok(Level::Part),
            "subpart" => Ok(Level::Subpart),
            other => Err(format!("unknown level {other:?} (expected object, part or subpart)")),
        }
    }
}
