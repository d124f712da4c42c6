//! Per-object refinement: statistical outlier removal, connected-component
//! splitting and residue re-attachment.

use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spatial::SpatialIndex;
use crate::error::{Error, Result};
use crate::field_io::GaussianField;
use crate::merging::ObjectMap;
use crate::GaussianSet;

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierOutcome {
    pub kept: GaussianSet,
    pub removed: GaussianSet,
    /// Set when the object was too small to filter.
    pub diagnostic: Option<String>,
}

/// Removes members whose mean distance to their `k` nearest fellow members
/// exceeds `mean + std_ratio * std` over the object.
pub fn remove_outliers(members: &GaussianSet, field: &GaussianField, k: usize, std_ratio: f64) -> Result<OutlierOutcome> {
    if !(std_ratio > 0.0) {
        return Err(Error::precondition(format!("std_ratio must be positive, got {std_ratio}")));
    }
    if members.len() <= k || k == 0 {
        return Ok(OutlierOutcome {
            kept: members.clone(),
            removed: GaussianSet::new(),
            diagnostic: Some(format!(
                "object of {} Gaussians not filtered (needs more than k = {k})",
                members.len()
            )),
        });
    }
    let index = SpatialIndex::from_field(field, members);
    let ids: Vec<u32> = members.iter().copied().collect();
    let d: Vec<f64> = ids
        .par_iter()
        .map(|&g| {
            let nn = index.knn(&field.position(g as usize), k, Some(g));
            nn.iter().map(|(d, _)| d).sum::<f64>() / nn.len() as f64
        })
        .collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = mean + std_ratio * std;
    let (mut kept, mut removed) = (GaussianSet::new(), GaussianSet::new());
    for (g, dg) in ids.into_iter().zip(d) {
        if dg > threshold {
            removed.insert(g);
        } else {
            kept.insert(g);
        }
    }
    Ok(OutlierOutcome {
        kept,
        removed,
        diagnostic: None,
    })
}

/// Repeats [`remove_outliers`] until a pass removes nothing.
pub fn remove_outliers_until_stable(
    members: &GaussianSet,
    field: &GaussianField,
    k: usize,
    std_ratio: f64,
) -> Result<OutlierOutcome> {
    let mut out = remove_outliers(members, field, k, std_ratio)?;
    loop {
        if out.diagnostic.is_some() && out.removed.is_empty() {
            return Ok(out);
        }
        let next = remove_outliers(&out.kept, field, k, std_ratio)?;
        if next.removed.is_empty() {
            return Ok(out);
        }
        out.removed.extend(next.removed);
        out.kept = next.kept;
        out.diagnostic = next.diagnostic;
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    /// Salient components, largest first (lower smallest-id on ties).
    pub salient: Vec<GaussianSet>,
    /// Non-salient components in the same order.
    pub residue: Vec<GaussianSet>,
}

impl Split {
    pub fn residue_union(&self) -> GaussianSet {
        self.residue.iter().flatten().copied().collect()
    }
}

/// Connected components of the radius graph over an object's members.
pub fn connected_components(members: &GaussianSet, field: &GaussianField, radius: f64) -> Result<Vec<GaussianSet>> {
    if !(radius > 0.0) {
        return Err(Error::precondition(format!("connectivity radius must be positive, got {radius}")));
    }
    let index = SpatialIndex::from_field(field, members);
    let mut visited = GaussianSet::new();
    let mut components = Vec::new();
    for &seed in members {
        if !visited.insert(seed) {
            continue;
        }
        let mut comp = GaussianSet::from([seed]);
        let mut queue = VecDeque::from([seed]);
        while let Some(g) = queue.pop_front() {
            for n in index.within(&field.position(g as usize), radius) {
                if visited.insert(n) {
                    comp.insert(n);
                    queue.push_back(n);
                }
            }
        }
        components.push(comp);
    }
    components.sort_by(|a, b| b.len().cmp(&a.len()).then(a.first().cmp(&b.first())));
    Ok(components)
}

/// Splits an object into salient components (at least `salient_fraction` of
/// its size) and residue.
pub fn split_components(
    members: &GaussianSet,
    field: &GaussianField,
    radius: f64,
    salient_fraction: f64,
) -> Result<Split> {
    if !(salient_fraction > 0.0 && salient_fraction <= 1.0) {
        return Err(Error::precondition(format!(
            "salient_fraction must lie in (0, 1], got {salient_fraction}"
        )));
    }
    let min_size = salient_fraction * members.len() as f64;
    let (salient, residue) = connected_components(members, field, radius)?
        .into_iter()
        .partition(|c| c.len() as f64 >= min_size);
    Ok(Split { salient, residue })
}

/// Three times the median nearest-neighbor distance among the members.
pub fn default_radius(members: &GaussianSet, field: &GaussianField) -> Option<f64> {
    if members.len() < 2 {
        return None;
    }
    let index = SpatialIndex::from_field(field, members);
    let mut nn: Vec<f64> = members
        .par_iter()
        .map(|&g| index.nearest(&field.position(g as usize), Some(g)).expect("two members").0)
        .collect();
    nn.sort_by(f64::total_cmp);
    let median = nn[nn.len() / 2];
    Some(3.0 * median.max(1e-9))
}

/// Counters from residue re-attachment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidueStats {
    pub clusters: u32,
    pub attached: u32,
    pub attached_gaussians: u64,
    pub unlabeled_gaussians: u64,
}

/// Attaches each residue cluster to the object at the smallest mean
/// nearest-neighbor distance, when that distance is at most `max_distance`
/// and at least `min_overlap` of the members have their nearest labeled
/// neighbor in that object. Objects that are no member's nearest labeled
/// neighbor are not considered.
pub fn merge_residue(
    clusters: &[GaussianSet],
    map: &mut ObjectMap,
    field: &GaussianField,
    max_distance: f64,
    min_overlap: f64,
) -> Result<ResidueStats> {
    let with_limits: Vec<(GaussianSet, f64)> = clusters.iter().map(|c| (c.clone(), max_distance)).collect();
    merge_residue_with_limits(&with_limits, map, field, min_overlap)
}

/// As [`merge_residue`] with a distance limit per cluster.
pub fn merge_residue_with_limits(
    clusters: &[(GaussianSet, f64)],
    map: &mut ObjectMap,
    field: &GaussianField,
    min_overlap: f64,
) -> Result<ResidueStats> {
    for (c, _) in clusters {
        if let Some(g) = c.iter().find(|&&g| map.owner(g).is_some()) {
            return Err(Error::precondition(format!("residue Gaussian {g} is still labeled")));
        }
    }
    // Indices are built once from the map as it stands before any attachment.
    let labeled: GaussianSet = map.objects().flat_map(|o| o.gaussians.iter().copied()).collect();
    let global = SpatialIndex::from_field(field, &labeled);
    let per_object: BTreeMap<u32, SpatialIndex> = map
        .objects()
        .map(|o| (o.id, SpatialIndex::from_field(field, &o.gaussians)))
        .collect();

    let mut stats = ResidueStats::default();
    for (cluster, max_distance) in clusters {
        if cluster.is_empty() {
            continue;
        }
        stats.clusters += 1;
        let mut nearest_counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &g in cluster {
            if let Some((_, n)) = global.nearest(&field.position(g as usize), None) {
                let owner = map.owner(n).expect("indexed Gaussians are labeled");
                *nearest_counts.entry(owner).or_insert(0) += 1;
            }
        }
        let mut best: Option<(u32, f64)> = None;
        for &id in nearest_counts.keys() {
            let index = &per_object[&id];
            let mean = cluster
                .iter()
                .map(|&g| index.nearest(&field.position(g as usize), None).expect("object non-empty").0)
                .sum::<f64>()
                / cluster.len() as f64;
            if best.is_none_or(|(_, b)| mean < b) {
                best = Some((id, mean));
            }
        }
        let attach = best.filter(|&(id, mean)| {
            let overlap = nearest_counts[&id] as f64 / cluster.len() as f64;
            mean <= *max_distance && overlap >= min_overlap
        });
        match attach {
            Some((id, _)) => {
                map.assign(id, cluster)?;
                stats.attached += 1;
                stats.attached_gaussians += cluster.len() as u64;
            }
            None => stats.unlabeled_gaussians += cluster.len() as u64,
        }
    }
    Ok(stats)
}
