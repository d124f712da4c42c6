use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{with_threads, RunConfig, LABELS_FILE, RUN_REPORT_FILE};
use crate::error::{Error, Result, ResultExt};
use crate::field_io::{
    load_features, load_field, load_manifest, load_mask_map, save_labels, FeatureTable, Frame, GaussianField,
    LabelStore, Level, MaskMap,
};
use crate::lifting::{lift_frame, FragmentSet};
use crate::merging::{hierarchical_decompose, merge_frame, HierarchyDiagnostics, MergeStats, ObjectMap};
use crate::postprocess::{postprocess, PostprocessReport};
use crate::rasterizer::{
    project_gaussians, render_frame, sort_by_depth, FrameContribution, RenderOptions, ViewStats,
};

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    /// Loading the field, masks and features.
    pub preprocessing: f64,
    /// Projection, rendering and lifting of all frames.
    pub lifting: f64,
    /// Object-level incremental merging.
    pub merging: f64,
    /// Part and subpart decomposition.
    pub hierarchy: f64,
    /// `lifting + merging + hierarchy`.
    pub lifting_merging: f64,
    pub postprocessing: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentationRun {
    pub frames: usize,
    pub gaussians: usize,
    pub threads: usize,
    pub seed: u64,
    pub timings: StageTimings,
    pub objects: BTreeMap<Level, usize>,
    pub labeled_gaussians: BTreeMap<Level, usize>,
    /// Fragments that passed the lifting floors.
    pub fragments: BTreeMap<Level, usize>,
    /// Fragments dropped by the seeded subsample.
    pub subsampled_out: BTreeMap<Level, usize>,
    pub merge: MergeStats,
    pub hierarchy: BTreeMap<Level, HierarchyDiagnostics>,
    pub postprocess: Option<PostprocessReport>,
}

/// Everything a segmentation run reads, loaded up front.
#[derive(Debug, Clone)]
pub struct SceneInputs {
    pub field: GaussianField,
    pub frames: Vec<Frame>,
    /// Per frame, per requested level: mask and features.
    pub masks: Vec<BTreeMap<Level, (MaskMap, FeatureTable)>>,
}

impl SceneInputs {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let manifest = load_manifest(&cfg.manifest)?;
        if manifest.frames.is_empty() {
            return Err(Error::precondition("empty manifest"));
        }
        let field_path = cfg
            .field
            .clone()
            .or(manifest.field_path)
            .ok_or_else(|| Error::Config("no field path in the config or manifest".into()))?;
        let field = load_field(&field_path)?;
        let levels = cfg.ordered_levels();
        let masks = manifest
            .frames
            .par_iter()
            .map(|frame| {
                let mut out = BTreeMap::new();
                for &level in &levels {
                    let Some(path) = frame.mask_paths.get(&level) else {
                        log::warn!("frame {}: no {level} mask, level skipped", frame.frame_id);
                        continue;
                    };
                    let mask = load_mask_map(path, frame.width, frame.height)?;
                    let features = match frame.features_for(level) {
                        Some(p) => load_features(p)?,
                        None => FeatureTable::constant(mask.max_id() as usize),
                    };
                    out.insert(level, (mask, features));
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            field,
            frames: manifest.frames,
            masks,
        })
    }
}

/// Loads inputs, segments, and writes the label sidecar and run report to
/// the output directory.
pub fn cmd_segment(cfg: &RunConfig) -> Result<(LabelStore, SegmentationRun)> {
    cfg.validate()?;
    with_threads(cfg.threads, || {
        let start = Instant::now();
        let inputs = SceneInputs::load(cfg).stage("preprocessing")?;
        let preprocessing = start.elapsed().as_secs_f64();
        let (labels, mut run) = segment_in_memory(&inputs, cfg)?;
        run.timings.preprocessing = preprocessing;
        std::fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
        save_labels(&labels, cfg.output.join(LABELS_FILE)).stage("writing")?;
        run.timings.total = start.elapsed().as_secs_f64();
        let report_path = cfg.output.join(RUN_REPORT_FILE);
        let json = serde_json::to_string_pretty(&run).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&report_path, json).map_err(|e| Error::io(&report_path, e))?;
        Ok((labels, run))
    })?
}

struct FrameOutput {
    fragments: BTreeMap<Level, FragmentSet>,
    subsampled_out: BTreeMap<Level, usize>,
    contribution: Option<FrameContribution>,
}

/// Segments preloaded inputs on the current rayon pool.
///
/// Frames are rendered and lifted in parallel; merging consumes them in
/// manifest order, so the result does not depend on the thread count.
pub fn segment_in_memory(inputs: &SceneInputs, cfg: &RunConfig) -> Result<(LabelStore, SegmentationRun)> {
    let start = Instant::now();
    let field = &inputs.field;
    let n = field.len();
    let levels = cfg.ordered_levels();
    let track = cfg.postprocess.prune;
    let mut run = SegmentationRun {
        frames: inputs.frames.len(),
        gaussians: n,
        threads: rayon::current_num_threads(),
        seed: cfg.seed,
        ..Default::default()
    };

    let t = Instant::now();
    let outputs: Vec<FrameOutput> = inputs
        .frames
        .par_iter()
        .zip(&inputs.masks)
        .enumerate()
        .map(|(index, (frame, masks))| lift_one(field, frame, masks, index, cfg, track))
        .collect::<Result<_>>()
        .stage("lifting")?;
    run.timings.lifting = t.elapsed().as_secs_f64();

    let mut stats = track.then(|| ViewStats::new(n));
    let mut per_level: BTreeMap<Level, Vec<FragmentSet>> = BTreeMap::new();
    for out in outputs {
        if let (Some(s), Some(c)) = (stats.as_mut(), &out.contribution) {
            s.add(c);
        }
        for (level, k) in out.subsampled_out {
            *run.subsampled_out.entry(level).or_default() += k;
        }
        for (level, set) in out.fragments {
            *run.fragments.entry(level).or_default() += set.fragments.len();
            per_level.entry(level).or_default().push(set);
        }
    }

    let t = Instant::now();
    let mut objects = ObjectMap::new(Level::Object, n);
    for frame in per_level.get(&Level::Object).into_iter().flatten() {
        let s = merge_frame(&mut objects, frame, &cfg.merge).stage("merging")?;
        run.merge.add(&s);
    }
    run.timings.merging = t.elapsed().as_secs_f64();

    let t = Instant::now();
    if cfg.postprocess.any_enabled() {
        let report = postprocess(&mut objects, field, stats.as_ref(), &cfg.postprocess).stage("postprocessing")?;
        run.postprocess = Some(report);
    }
    run.timings.postprocessing = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut maps = vec![objects];
    for &level in levels.iter().filter(|&&l| l != Level::Object) {
        let frames = per_level.get(&level).map(Vec::as_slice).unwrap_or(&[]);
        let (map, diag) =
            hierarchical_decompose(maps.last().expect("object map"), level, frames, &cfg.merge).stage("hierarchy")?;
        run.hierarchy.insert(level, diag);
        maps.push(map);
    }
    run.timings.hierarchy = t.elapsed().as_secs_f64();
    run.timings.lifting_merging = run.timings.lifting + run.timings.merging + run.timings.hierarchy;

    for map in &maps {
        map.check_invariants().stage("merging")?;
        run.objects.insert(map.level, map.len());
        run.labeled_gaussians.insert(map.level, map.labeled_count());
    }
    let labels = compact_labels(&maps, n)?;
    run.timings.total = start.elapsed().as_secs_f64();
    Ok((labels, run))
}

fn lift_one(
    field: &GaussianField,
    frame: &Frame,
    masks: &BTreeMap<Level, (MaskMap, FeatureTable)>,
    index: usize,
    cfg: &RunConfig,
    track: bool,
) -> Result<FrameOutput> {
    let mut projected = project_gaussians(field, frame, cfg.near)?;
    sort_by_depth(&mut projected);
    let options = RenderOptions {
        track_weights: track,
        ..RenderOptions::contributors()
    };
    let buffers = render_frame(&projected, frame.width, frame.height, &options, None)?;
    let mut out = FrameOutput {
        fragments: BTreeMap::new(),
        subsampled_out: BTreeMap::new(),
        contribution: track.then(|| FrameContribution::from_buffers(&buffers)),
    };
    for (&level, (mask, features)) in masks {
        let mut set = lift_frame(&buffers, mask, features, cfg.floors, &frame.frame_id, level)?;
        let before = set.fragments.len();
        subsample(&mut set, cfg.fragment_keep_fraction, fragment_seed(cfg.seed, index, level));
        out.subsampled_out.insert(level, before - set.fragments.len());
        out.fragments.insert(level, set);
    }
    Ok(out)
}

fn fragment_seed(seed: u64, frame_index: usize, level: Level) -> u64 {
    let level_index = Level::ALL.iter().position(|&l| l == level).expect("known level") as u64;
    splitmix(splitmix(seed ^ splitmix(frame_index as u64)) ^ level_index)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keeps `round(fraction * m)` fragments (at least one), chosen uniformly by `seed`.
fn subsample(set: &mut FragmentSet, fraction: f64, seed: u64) {
    let m = set.fragments.len();
    if fraction >= 1.0 || m == 0 {
        return;
    }
    let keep = ((fraction * m as f64).round() as usize).clamp(1, m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, m, keep).into_vec();
    chosen.sort_unstable();
    let mut it = chosen.into_iter().peekable();
    let mut i = 0;
    set.fragments.retain(|_| {
        let hit = it.peek() == Some(&i);
        if hit {
            it.next();
        }
        i += 1;
        hit
    });
}

/// Per-Gaussian labels with dense ids per level, in ascending order of the
/// map ids. A finer label is kept only where it agrees with its parent.
fn compact_labels(maps: &[ObjectMap], n: usize) -> Result<LabelStore> {
    let mut store = LabelStore::unlabeled(n);
    let mut dense_prev: BTreeMap<u32, u32> = BTreeMap::new();
    let mut prev_labels: Vec<u32> = Vec::new();
    for map in maps {
        let dense: BTreeMap<u32, u32> = map.ids().into_iter().zip(1..).collect();
        let mut labels = vec![0u32; n];
        let mut parents = BTreeMap::new();
        for obj in map.objects() {
            let id = dense[&obj.id];
            let parent = match map.level {
                Level::Object => None,
                _ => {
                    let p = obj
                        .parent
                        .and_then(|p| dense_prev.get(&p).copied())
                        .ok_or_else(|| Error::Invariant(format!("{} {} has no parent", map.level, obj.id)))?;
                    Some(p)
                }
            };
            for &g in &obj.gaussians {
                if parent.is_none_or(|p| prev_labels[g as usize] == p) {
                    labels[g as usize] = id;
                    if let Some(p) = parent {
                        parents.insert(id, p);
                    }
                }
            }
        }
        match map.level {
            Level::Object => store.object = labels.clone(),
            Level::Part => {
                store.part = labels.clone();
                store.part_parent = parents;
            }
            Level::Subpart => {
                store.subpart = labels.clone();
                store.subpart_parent = parents;
            }
        }
        dense_prev = dense;
        prev_labels = labels;
    }
    store.validate()?;
    Ok(store)
}
