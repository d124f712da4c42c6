//! Object -> part -> subpart decomposition by merging finer-level fragments
//! inside their parent objects.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{merge_frame, MergeConfig, MergeStats, ObjectMap};
use crate::error::{Error, Result};
use crate::field_io::Level;
use crate::lifting::FragmentSet;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyDiagnostics {
    /// Fragments with no Gaussian inside any parent object.
    pub dropped_fragments: u32,
    /// Gaussians cut from fragments that straddled several parents.
    pub discarded_gaussians: u64,
    pub merge: MergeStats,
}

/// Restricts every fragment to the parent object owning the plurality of its
/// Gaussians (lower parent id on ties) and records that parent.
pub fn restrict_to_parents(fragments: &mut FragmentSet, parents: &ObjectMap) -> HierarchyDiagnostics {
    let mut diag = HierarchyDiagnostics::default();
    fragments.fragments.retain_mut(|frag| {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &g in &frag.gaussians {
            if let Some(p) = parents.owner(g) {
                *counts.entry(p).or_insert(0) += 1;
            }
        }
        // BTreeMap iterates ids ascending, so strict `>` keeps the lower id.
        let best = counts
            .iter()
            .fold(None::<(u32, usize)>, |best, (&p, &c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((p, c)),
            });
        let Some((parent, kept)) = best else {
            diag.dropped_fragments += 1;
            return false;
        };
        diag.discarded_gaussians += (frag.gaussians.len() - kept) as u64;
        frag.gaussians.retain(|&g| parents.owner(g) == Some(parent));
        frag.parent = Some(parent);
        true
    });
    diag
}

/// Builds the `level` map by merging that level's fragments frame by frame,
/// each confined to a single parent from `parents`.
pub fn hierarchical_decompose(
    parents: &ObjectMap,
    level: Level,
    frames: &[FragmentSet],
    config: &MergeConfig,
) -> Result<(ObjectMap, HierarchyDiagnostics)> {
    if level.parent() != Some(parents.level) {
        return Err(Error::precondition(format!(
            "cannot decompose {} objects into {level}",
            parents.level
        )));
    }
    let mut map = ObjectMap::new(level, parents.num_gaussians());
    let mut diag = HierarchyDiagnostics::default();
    for frame in frames {
        if frame.level != level {
            return Err(Error::precondition(format!(
                "frame {} holds {} fragments, expected {level}",
                frame.frame_id, frame.level
            )));
        }
        let mut restricted = frame.clone();
        let d = restrict_to_parents(&mut restricted, parents);
        diag.dropped_fragments += d.dropped_fragments;
        diag.discarded_gaussians += d.discarded_gaussians;
        diag.merge.add(&merge_frame(&mut map, &restricted, config)?);
    }
    if diag.dropped_fragments > 0 {
        log::info!(
            "{level}: dropped {} fragments outside every parent object",
            diag.dropped_fragments
        );
    }
    Ok((map, diag))
}
