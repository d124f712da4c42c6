//! Segmentation refinement: floater pruning, outlier removal, component
//! splitting and residue merging, applied in that order.

mod prune;
mod refine;
mod spatial;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use prune::prune_low_consistency;
pub use refine::{
    connected_components, default_radius, merge_residue, merge_residue_with_limits, remove_outliers,
    remove_outliers_until_stable, split_components, OutlierOutcome, ResidueStats, Split,
};
pub use spatial::SpatialIndex;

use crate::error::{Error, Result};
use crate::field_io::GaussianField;
use crate::merging::ObjectMap;
use crate::rasterizer::ViewStats;
use crate::GaussianSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    pub prune: bool,
    pub keep_fraction: f64,
    pub outliers: bool,
    pub k: usize,
    pub std_ratio: f64,
    /// Repeat outlier removal until a pass removes nothing.
    pub outliers_until_stable: bool,
    pub split: bool,
    /// Connectivity radius; per-object default when unset.
    pub radius: Option<f64>,
    pub salient_fraction: f64,
    pub merge_residue: bool,
    /// Residue distance limit; the connectivity radius when unset.
    pub max_distance: Option<f64>,
    pub min_overlap: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            prune: false,
            keep_fraction: 0.95,
            outliers: false,
            k: 16,
            std_ratio: 2.0,
            outliers_until_stable: false,
            split: false,
            radius: None,
            salient_fraction: 0.1,
            merge_residue: false,
            max_distance: None,
            min_overlap: 0.5,
        }
    }
}

impl PostprocessConfig {
    pub fn all_enabled() -> Self {
        Self {
            prune: true,
            outliers: true,
            split: true,
            merge_residue: true,
            ..Self::default()
        }
    }

    pub fn any_enabled(&self) -> bool {
        self.prune || self.outliers || self.split || self.merge_residue
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PostprocessReport {
    pub pruned: u64,
    pub pruned_labeled: u64,
    pub outliers_removed: u64,
    pub outlier_skipped_objects: Vec<u32>,
    pub split_new_objects: u32,
    pub residue: ResidueStats,
}

/// Runs the enabled stages over an object map.
///
/// `stats` is required when pruning. Per-object work runs in parallel; the
/// results are applied in ascending object id order.
pub fn postprocess(
    map: &mut ObjectMap,
    field: &GaussianField,
    stats: Option<&ViewStats>,
    cfg: &PostprocessConfig,
) -> Result<PostprocessReport> {
    let mut report = PostprocessReport::default();

    if cfg.prune {
        let stats = stats.ok_or_else(|| Error::precondition("pruning needs view statistics"))?;
        let kept = prune_low_consistency(stats, cfg.keep_fraction)?;
        let pruned: GaussianSet = (0..field.len() as u32).filter(|g| !kept.contains(g)).collect();
        report.pruned = pruned.len() as u64;
        report.pruned_labeled = pruned.iter().filter(|&&g| map.owner(g).is_some()).count() as u64;
        map.unlabel(&pruned);
    }

    if cfg.outliers {
        let objects: Vec<(u32, GaussianSet)> = map.objects().map(|o| (o.id, o.gaussians.clone())).collect();
        let outcomes: Vec<(u32, OutlierOutcome)> = objects
            .par_iter()
            .map(|(id, set)| {
                let out = if cfg.outliers_until_stable {
                    remove_outliers_until_stable(set, field, cfg.k, cfg.std_ratio)
                } else {
                    remove_outliers(set, field, cfg.k, cfg.std_ratio)
                };
                out.map(|o| (*id, o))
            })
            .collect::<Result<_>>()?;
        for (id, out) in outcomes {
            if let Some(msg) = &out.diagnostic {
                log::info!("object {id}: {msg}");
                report.outlier_skipped_objects.push(id);
            }
            report.outliers_removed += out.removed.len() as u64;
            map.unlabel(&out.removed);
        }
    }

    let mut residue: Vec<(GaussianSet, f64)> = Vec::new();
    if cfg.split {
        let objects: Vec<(u32, GaussianSet)> = map.objects().map(|o| (o.id, o.gaussians.clone())).collect();
        let splits: Vec<Option<(u32, Split, f64)>> = objects
            .par_iter()
            .map(|(id, set)| {
                let Some(radius) = cfg.radius.or_else(|| default_radius(set, field)) else {
                    return Ok(None);
                };
                let split = split_components(set, field, radius, cfg.salient_fraction)?;
                Ok(Some((*id, split, cfg.max_distance.unwrap_or(radius))))
            })
            .collect::<Result<_>>()?;
        for (id, split, limit) in splits.into_iter().flatten() {
            for extra in split.salient.iter().skip(1) {
                map.split_off(id, extra)?;
                report.split_new_objects += 1;
            }
            for r in split.residue {
                map.unlabel(&r);
                residue.push((r, limit));
            }
        }
    }
    if cfg.merge_residue && !residue.is_empty() {
        report.residue = merge_residue_with_limits(&residue, map, field, cfg.min_overlap)?;
    } else if !residue.is_empty() {
        report.residue.unlabeled_gaussians = residue.iter().map(|(r, _)| r.len() as u64).sum();
    }
    Ok(report)
}
