//! Ground-truth to prediction matching by rendered binary masks, and 2D label
//! maps projected through the max-contributor buffer.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_io::{Frame, MaskMap};
use crate::rasterizer::{render_frame, ProjectedGaussian, RenderOptions, SENTINEL_NONE};
use crate::GaussianSet;

/// Alpha above which a pixel belongs to a rendered object mask.
pub const MASK_ALPHA: f32 = 0.5;

/// Binary masks of `object` in every frame (subset render, alpha > 0.5).
pub fn binary_masks(projected: &[Vec<ProjectedGaussian>], frames: &[Frame], object: &GaussianSet) -> Result<Vec<Vec<bool>>> {
    projected
        .par_iter()
        .zip(frames)
        .map(|(p, f)| {
            let b = render_frame(p, f.width, f.height, &RenderOptions::contributors(), Some(object))?;
            Ok(b.alpha.iter().map(|&a| a > MASK_ALPHA).collect())
        })
        .collect()
}

/// Mean over frames of the per-pixel squared error between binary masks.
pub fn mask_mse(a: &[Vec<bool>], b: &[Vec<bool>]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).filter(|(p, q)| p != q).count() as f64 / x.len().max(1) as f64)
        .sum::<f64>()
        / a.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMatch {
    pub gt_id: u32,
    pub pred_id: Option<u32>,
    /// Mask MSE against the match, or against an empty render when unmatched.
    pub mse: f64,
}

/// Greedy one-to-one matching in ascending mask-MSE order (ties by gt id,
/// then pred id).
pub fn match_objects_by_mse(
    gt: &BTreeMap<u32, GaussianSet>,
    pred: &BTreeMap<u32, GaussianSet>,
    projected: &[Vec<ProjectedGaussian>],
    frames: &[Frame],
) -> Result<Vec<ObjectMatch>> {
    let masks = |objs: &BTreeMap<u32, GaussianSet>| -> Result<BTreeMap<u32, Vec<Vec<bool>>>> {
        objs.iter()
            .map(|(&id, set)| Ok((id, binary_masks(projected, frames, set)?)))
            .collect()
    };
    let gt_masks = masks(gt)?;
    let pred_masks = masks(pred)?;
    let mut pairs: Vec<(f64, u32, u32)> = Vec::new();
    for (&g, gm) in &gt_masks {
        for (&p, pm) in &pred_masks {
            pairs.push((mask_mse(gm, pm), g, p));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut assigned: BTreeMap<u32, (u32, f64)> = BTreeMap::new();
    let mut used = GaussianSet::new();
    for (mse, g, p) in pairs {
        if assigned.contains_key(&g) || used.contains(&p) {
            continue;
        }
        assigned.insert(g, (p, mse));
        used.insert(p);
    }
    Ok(gt_masks
        .iter()
        .map(|(&g, gm)| match assigned.get(&g) {
            Some(&(p, mse)) => ObjectMatch {
                gt_id: g,
                pred_id: Some(p),
                mse,
            },
            None => {
                let empty: Vec<Vec<bool>> = gm.iter().map(|m| vec![false; m.len()]).collect();
                ObjectMatch {
                    gt_id: g,
                    pred_id: None,
                    mse: mask_mse(gm, &empty),
                }
            }
        })
        .collect())
}

/// Per-pixel instance ids: the label of each pixel's max contributor.
pub fn label_map(max_contributor: &[u32], labels: &[u32], width: u32, height: u32) -> Result<MaskMap> {
    let ids = max_contributor
        .iter()
        .map(|&g| {
            if g == SENTINEL_NONE {
                return Ok(0);
            }
            let l = *labels
                .get(g as usize)
                .ok_or_else(|| Error::precondition(format!("no label for Gaussian {g}")))?;
            u16::try_from(l).map_err(|_| Error::precondition(format!("label {l} does not fit a 16-bit mask")))
        })
        .collect::<Result<Vec<u16>>>()?;
    MaskMap::new(width, height, ids)
}
