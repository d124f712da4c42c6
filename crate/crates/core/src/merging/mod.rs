//! Incremental merging of per-frame fragments into scene-level objects.

mod hierarchy;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use hierarchy::{hierarchical_decompose, restrict_to_parents, HierarchyDiagnostics};

use crate::error::{Error, Result};
use crate::field_io::Level;
use crate::lifting::{Fragment, FragmentSet};
use crate::GaussianSet;

/// Tolerance on unit-norm feature inputs.
pub const UNIT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMode {
    /// `(1 + cos) / 2`, in [0, 1].
    #[default]
    Normalized,
    /// `cos / 2`, in [-1/2, 1/2].
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeConfig {
    pub tau_geom: f64,
    pub tau_sem: f64,
    pub lambda_sem: f64,
    pub similarity: SimilarityMode,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            tau_geom: 0.1,
            tau_sem: 0.75,
            lambda_sem: 1.0,
            similarity: SimilarityMode::Normalized,
        }
    }
}

impl MergeConfig {
    /// Thresholds zero: every overlapping candidate qualifies.
    pub const PERMISSIVE: MergeConfig = MergeConfig {
        tau_geom: 0.0,
        tau_sem: 0.0,
        lambda_sem: 1.0,
        similarity: SimilarityMode::Normalized,
    };

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.tau_geom) || !in_unit(self.tau_sem) {
            return Err(Error::Config(format!(
                "merge thresholds must lie in [0, 1] (tau_geom {}, tau_sem {})",
                self.tau_geom, self.tau_sem
            )));
        }
        if !(self.lambda_sem >= 0.0) || !self.lambda_sem.is_finite() {
            return Err(Error::Config(format!("lambda_sem must be >= 0, got {}", self.lambda_sem)));
        }
        Ok(())
    }
}

/// Fraction of the fragment's Gaussians that the object already holds.
pub fn geom_overlap(fragment: &GaussianSet, object: &GaussianSet) -> Result<f64> {
    if fragment.is_empty() {
        return Err(Error::precondition("geometric overlap of an empty fragment"));
    }
    let (small, large) = if fragment.len() <= object.len() {
        (fragment, object)
    } else {
        (object, fragment)
    };
    let shared = small.iter().filter(|g| large.contains(g)).count();
    Ok(shared as f64 / fragment.len() as f64)
}

fn check_unit(f: &[f64], what: &str) -> Result<()> {
    let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::precondition(format!("{what} feature has norm {norm}, expected 1")));
    }
    Ok(())
}

pub fn sem_similarity(a: &[f64], b: &[f64], mode: SimilarityMode) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::precondition(format!(
            "feature dimensions differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    check_unit(a, "first")?;
    check_unit(b, "second")?;
    let cos: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(match mode {
        SimilarityMode::Normalized => ((1.0 + cos) / 2.0).clamp(0.0, 1.0),
        SimilarityMode::Printed => cos / 2.0,
    })
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 1e-12) {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

/// Running average `(n f_prev + f_new) / (n + 1)`, renormalized.
///
/// A zero average (antipodal inputs with `n = 1`) keeps `f_prev`.
pub fn update_feature(f_prev: &[f64], n: u32, f_new: &[f64]) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(Error::precondition("feature update with n = 0"));
    }
    if f_prev.len() != f_new.len() {
        return Err(Error::precondition("feature dimensions differ"));
    }
    let n = n as f64;
    let mut avg: Vec<f64> = f_prev
        .iter()
        .zip(f_new)
        .map(|(p, q)| (n * p + q) / (n + 1.0))
        .collect();
    if !normalize(&mut avg) {
        log::warn!("feature update averaged to zero; keeping the previous feature");
        return Ok(f_prev.to_vec());
    }
    Ok(avg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: u32,
    pub gaussians: GaussianSet,
    pub feature: Vec<f64>,
    /// Number of fragments merged into the object.
    pub fragment_count: u32,
    /// Object id at the next coarser level.
    pub parent: Option<u32>,
}

/// Per-frame merge counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeStats {
    pub merged: u32,
    pub created: u32,
    pub absorbed: u32,
    pub reassigned: u64,
}

impl MergeStats {
    pub fn add(&mut self, o: &MergeStats) {
        self.merged += o.merged;
        self.created += o.created;
        self.absorbed += o.absorbed;
        self.reassigned += o.reassigned;
    }
}

const NO_OWNER: u32 = 0;

/// Scene-level segmentation at one hierarchy level.
///
/// Object ids start at 1; `owner` maps each Gaussian to its object or 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMap {
    pub level: Level,
    objects: BTreeMap<u32, SceneObject>,
    owner: Vec<u32>,
    next_id: u32,
}

impl ObjectMap {
    pub fn new(level: Level, gaussians: usize) -> Self {
        Self {
            level,
            objects: BTreeMap::new(),
            owner: vec![NO_OWNER; gaussians],
            next_id: 1,
        }
    }

    /// Builds a map from explicit objects (ids kept).
    pub fn from_objects(level: Level, gaussians: usize, objects: Vec<SceneObject>) -> Result<Self> {
        let mut map = Self::new(level, gaussians);
        for obj in objects {
            if obj.id == NO_OWNER || map.objects.contains_key(&obj.id) {
                return Err(Error::precondition(format!("invalid or duplicate object id {}", obj.id)));
            }
            for &g in &obj.gaussians {
                let slot = map
                    .owner
                    .get_mut(g as usize)
                    .ok_or_else(|| Error::precondition(format!("Gaussian {g} out of range")))?;
                if *slot != NO_OWNER {
                    return Err(Error::precondition(format!("Gaussian {g} owned by two objects")));
                }
                *slot = obj.id;
            }
            map.next_id = map.next_id.max(obj.id + 1);
            map.objects.insert(obj.id, obj);
        }
        Ok(map)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn num_gaussians(&self) -> usize {
        self.owner.len()
    }

    pub fn objects(&self) -> impl Iterator<Item = &SceneObject> {
        self.objects.values()
    }

    pub fn get(&self, id: u32) -> Option<&SceneObject> {
        self.objects.get(&id)
    }

    pub fn ids(&self) -> Vec<u32> {
        self.objects.keys().copied().collect()
    }

    pub fn owner(&self, g: u32) -> Option<u32> {
        match self.owner.get(g as usize) {
            Some(&o) if o != NO_OWNER => Some(o),
            _ => None,
        }
    }

    pub fn labeled_count(&self) -> usize {
        self.owner.iter().filter(|&&o| o != NO_OWNER).count()
    }

    /// Replaces an object's Gaussian set, unlabeling removed members and
    /// dropping the object if it becomes empty. Added members must be unowned.
    pub fn set_gaussians(&mut self, id: u32, gaussians: GaussianSet) -> Result<()> {
        let obj = self
            .objects
            .get(&id)
            .ok_or_else(|| Error::precondition(format!("no object {id}")))?;
        for &g in &gaussians {
            match self.owner.get(g as usize) {
                None => return Err(Error::precondition(format!("Gaussian {g} out of range"))),
                Some(&o) if o != NO_OWNER && o != id => {
                    return Err(Error::precondition(format!("Gaussian {g} already owned by object {o}")))
                }
                _ => {}
            }
        }
        for &g in &obj.gaussians {
            self.owner[g as usize] = NO_OWNER;
        }
        for &g in &gaussians {
            self.owner[g as usize] = id;
        }
        if gaussians.is_empty() {
            self.objects.remove(&id);
        } else {
            self.objects.get_mut(&id).expect("checked above").gaussians = gaussians;
        }
        Ok(())
    }

    /// Moves unowned Gaussians into an existing object.
    pub fn assign(&mut self, id: u32, extra: &GaussianSet) -> Result<()> {
        let mut set = self
            .objects
            .get(&id)
            .ok_or_else(|| Error::precondition(format!("no object {id}")))?
            .gaussians
            .clone();
        set.extend(extra.iter().copied());
        self.set_gaussians(id, set)
    }

    /// Adds an object with a fresh id built from unowned Gaussians.
    pub fn insert_new(&mut self, gaussians: GaussianSet, feature: Vec<f64>, parent: Option<u32>) -> Result<u32> {
        if gaussians.is_empty() {
            return Err(Error::precondition("new object with no Gaussians"));
        }
        let id = self.next_id;
        self.objects.insert(
            id,
            SceneObject {
                id,
                gaussians: GaussianSet::new(),
                feature,
                fragment_count: 1,
                parent,
            },
        );
        self.next_id += 1;
        self.set_gaussians(id, gaussians)?;
        Ok(id)
    }

    /// Moves `part` out of object `id` into a new object inheriting its
    /// feature, fragment count and parent.
    pub fn split_off(&mut self, id: u32, part: &GaussianSet) -> Result<u32> {
        let obj = self
            .objects
            .get(&id)
            .ok_or_else(|| Error::precondition(format!("no object {id}")))?;
        if !part.is_subset(&obj.gaussians) {
            return Err(Error::precondition(format!("split part is not inside object {id}")));
        }
        let (feature, count, parent) = (obj.feature.clone(), obj.fragment_count, obj.parent);
        let rest: GaussianSet = obj.gaussians.difference(part).copied().collect();
        self.set_gaussians(id, rest)?;
        let new_id = self.insert_new(part.clone(), feature, parent)?;
        self.objects.get_mut(&new_id).expect("just inserted").fragment_count = count;
        Ok(new_id)
    }

    /// Unlabels the given Gaussians wherever they are.
    pub fn unlabel(&mut self, gaussians: &GaussianSet) {
        for &g in gaussians {
            if let Some(o) = self.owner(g) {
                self.take_from(o, g);
                self.owner[g as usize] = NO_OWNER;
            }
        }
    }

    /// Checks owner consistency and pairwise disjointness.
    pub fn check_invariants(&self) -> Result<()> {
        let mut count = 0usize;
        for obj in self.objects.values() {
            if obj.gaussians.is_empty() {
                return Err(Error::Invariant(format!("object {} is empty", obj.id)));
            }
            for &g in &obj.gaussians {
                if self.owner.get(g as usize) != Some(&obj.id) {
                    return Err(Error::Invariant(format!(
                        "Gaussian {g} in object {} but owner index disagrees",
                        obj.id
                    )));
                }
            }
            count += obj.gaussians.len();
        }
        if count != self.labeled_count() {
            return Err(Error::Invariant("owner index labels Gaussians outside every object".into()));
        }
        Ok(())
    }

    fn take_from(&mut self, from: u32, g: u32) {
        let obj = self.objects.get_mut(&from).expect("owner points at a live object");
        obj.gaussians.remove(&g);
        if obj.gaussians.is_empty() {
            self.objects.remove(&from);
        }
    }

    /// Merges one fragment. Returns the id of the object it ended up in.
    fn merge_fragment(&mut self, frag: &Fragment, config: &MergeConfig, stats: &mut MergeStats) -> Result<u32> {
        if let Some(&g) = frag.gaussians.iter().find(|&&g| g as usize >= self.owner.len()) {
            return Err(Error::precondition(format!(
                "fragment {} references Gaussian {g} beyond the field",
                frag.mask_id
            )));
        }
        let mut shared: BTreeMap<u32, usize> = BTreeMap::new();
        for &g in &frag.gaussians {
            let o = self.owner[g as usize];
            if o != NO_OWNER {
                *shared.entry(o).or_insert(0) += 1;
            }
        }

        // Qualifying candidates with their scores, in ascending id order.
        let mut qualifying: Vec<(u32, f64)> = Vec::new();
        for (&id, &count) in &shared {
            let obj = &self.objects[&id];
            if obj.parent != frag.parent {
                continue;
            }
            let geom = count as f64 / frag.gaussians.len() as f64;
            let sem = sem_similarity(&frag.feature, &obj.feature, config.similarity)?;
            if geom >= config.tau_geom && sem >= config.tau_sem {
                qualifying.push((id, geom + config.lambda_sem * sem));
            }
        }
        let target = qualifying
            .iter()
            .fold(None::<(u32, f64)>, |best, &(id, s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((id, s)),
            })
            .map(|(id, _)| id);

        let Some(target) = target else {
            let mut gaussians = GaussianSet::new();
            for &g in &frag.gaussians {
                let o = self.owner[g as usize];
                if o != NO_OWNER {
                    self.take_from(o, g);
                    self.owner[g as usize] = NO_OWNER;
                    stats.reassigned += 1;
                }
                gaussians.insert(g);
            }
            stats.created += 1;
            return self.insert_new(gaussians, frag.feature.clone(), frag.parent);
        };

        // Every other qualifying candidate is the same object seen through this
        // fragment, so it is fused into the target.
        let target_feature = self.objects[&target].feature.clone();
        let mut fused_n = self.objects[&target].fragment_count;
        let mut fused_sum: Vec<f64> = target_feature.iter().map(|x| x * fused_n as f64).collect();
        for &(id, _) in &qualifying {
            if id == target {
                continue;
            }
            let obj = self.objects.remove(&id).expect("candidate is live");
            for (a, b) in fused_sum.iter_mut().zip(&obj.feature) {
                *a += b * obj.fragment_count as f64;
            }
            fused_n += obj.fragment_count;
            for &g in &obj.gaussians {
                self.owner[g as usize] = target;
            }
            self.objects
                .get_mut(&target)
                .expect("target is live")
                .gaussians
                .extend(obj.gaussians);
            stats.absorbed += 1;
        }
        let fused_feature = if qualifying.len() > 1 && normalize(&mut fused_sum) {
            fused_sum
        } else {
            target_feature
        };

        for &g in &frag.gaussians {
            let o = self.owner[g as usize];
            if o != NO_OWNER && o != target {
                self.take_from(o, g);
                stats.reassigned += 1;
            }
            self.owner[g as usize] = target;
        }
        let obj = self.objects.get_mut(&target).expect("target is live");
        obj.gaussians.extend(frag.gaussians.iter().copied());
        obj.feature = update_feature(&fused_feature, fused_n, &frag.feature)?;
        obj.fragment_count = fused_n + 1;
        stats.merged += 1;
        Ok(target)
    }
}

/// Merges one frame's fragments, largest first (lower mask id on ties).
pub fn merge_frame(map: &mut ObjectMap, fragments: &FragmentSet, config: &MergeConfig) -> Result<MergeStats> {
    config.validate()?;
    if !fragments.is_disjoint() {
        return Err(Error::precondition(format!(
            "fragments of frame {} overlap",
            fragments.frame_id
        )));
    }
    let mut order: Vec<&Fragment> = fragments.fragments.iter().filter(|f| !f.gaussians.is_empty()).collect();
    order.sort_by(|a, b| b.pixel_count.cmp(&a.pixel_count).then(a.mask_id.cmp(&b.mask_id)));
    let mut stats = MergeStats::default();
    for frag in order {
        map.merge_fragment(frag, config, &mut stats)?;
    }
    debug_assert!(map.check_invariants().is_ok());
    Ok(stats)
}

#[cfg(test)]
mod tests;
