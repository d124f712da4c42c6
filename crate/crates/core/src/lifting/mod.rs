//! Lifting 2D instance masks onto the Gaussians that dominate each pixel.
//!
//! Every masked pixel votes for its max-contributor Gaussian. A Gaussian
//! claimed by several masks of the same frame goes to the mask with the largest
//! summed max-weight over its pixels (lower mask id on ties), so the fragments
//! of one frame are disjoint.

mod dense;

use std::collections::{BTreeMap, HashMap};

pub use dense::{lift_features, pca_project, FeatureAccumulator, Pca};

use crate::error::{Error, Result};
use crate::field_io::{FeatureTable, Level, MaskMap};
use crate::rasterizer::{RenderBuffers, SENTINEL_NONE};
use crate::GaussianSet;

/// Speckle filters applied to lifted fragments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LiftFloors {
    pub min_pixels: u32,
    pub min_gaussians: u32,
}

impl Default for LiftFloors {
    fn default() -> Self {
        Self {
            min_pixels: 25,
            min_gaussians: 3,
        }
    }
}

impl LiftFloors {
    pub const NONE: LiftFloors = LiftFloors {
        min_pixels: 0,
        min_gaussians: 0,
    };
}

/// One mask's footprint on the field in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub mask_id: u32,
    pub gaussians: GaussianSet,
    /// Unit-norm feature.
    pub feature: Vec<f64>,
    /// Mask pixels that had a max contributor.
    pub pixel_count: u32,
    /// Parent object at the next coarser level, set during hierarchical decomposition.
    pub parent: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FragmentSet {
    pub frame_id: String,
    pub level: Level,
    pub fragments: Vec<Fragment>,
}

impl FragmentSet {
    /// True when no Gaussian appears in two fragments.
    pub fn is_disjoint(&self) -> bool {
        let mut seen = GaussianSet::new();
        self.fragments
            .iter()
            .all(|f| f.gaussians.iter().all(|&g| seen.insert(g)))
    }
}

pub(crate) fn unit_feature(row: &[f32], mask_id: u32) -> Result<Vec<f64>> {
    let v: Vec<f64> = row.iter().map(|&x| x as f64).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::Data {
            location: format!("feature row of mask {mask_id}"),
            message: "zero feature vector for a mask with pixels".into(),
        });
    }
    Ok(v.into_iter().map(|x| x / norm).collect())
}

/// Lifts one frame's mask map into disjoint 3D fragments.
pub fn lift_frame(
    buffers: &RenderBuffers,
    mask: &MaskMap,
    features: &FeatureTable,
    floors: LiftFloors,
    frame_id: &str,
    level: Level,
) -> Result<FragmentSet> {
    if mask.width != buffers.width || mask.height != buffers.height {
        return Err(Error::Dimension {
            expected_width: buffers.width,
            expected_height: buffers.height,
            width: mask.width,
            height: mask.height,
        });
    }
    let max_id = mask.max_id() as u32;
    if max_id as usize > features.len() {
        return Err(Error::MaskIndex {
            id: max_id,
            rows: features.len(),
        });
    }

    let mut votes: HashMap<(u32, u32), f64> = HashMap::new();
    let mut pixels: BTreeMap<u32, u32> = BTreeMap::new();
    for (p, &m) in mask.ids.iter().enumerate() {
        let g = buffers.max_contributor[p];
        if m == 0 || g == SENTINEL_NONE {
            continue;
        }
        let m = m as u32;
        *votes.entry((m, g)).or_insert(0.0) += buffers.max_weight[p] as f64;
        *pixels.entry(m).or_insert(0) += 1;
    }

    // Arbitration: each Gaussian to its heaviest mask, lower id on ties.
    let mut owner: HashMap<u32, (u32, f64)> = HashMap::new();
    for (&(m, g), &w) in &votes {
        owner
            .entry(g)
            .and_modify(|best| {
                if w > best.1 || (w == best.1 && m < best.0) {
                    *best = (m, w);
                }
            })
            .or_insert((m, w));
    }
    let mut sets: BTreeMap<u32, GaussianSet> = BTreeMap::new();
    for (g, (m, _)) in owner {
        sets.entry(m).or_default().insert(g);
    }

    let mut fragments = Vec::new();
    for (m, pixel_count) in pixels {
        let Some(gaussians) = sets.remove(&m) else {
            continue;
        };
        if pixel_count < floors.min_pixels || (gaussians.len() as u32) < floors.min_gaussians {
            continue;
        }
        let row = features.for_mask(m).expect("mask ids bounded by the table");
        fragments.push(Fragment {
            mask_id: m,
            gaussians,
            feature: unit_feature(row, m)?,
            pixel_count,
            parent: None,
        });
    }
    Ok(FragmentSet {
        frame_id: frame_id.to_string(),
        level,
        fragments,
    })
}
