use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ResultExt};
use crate::evaluation::{evaluate, EvalConfig, MetricReport};
use crate::field_io::{
    load_dense_features, load_field, load_labels, load_manifest, save_feature_rows, save_field, save_object_field,
    Frame, GaussianField, LabelStore, Level,
};
use crate::lifting::{lift_features, pca_project, FeatureAccumulator};
use crate::merging::{ObjectMap, SceneObject};
use crate::postprocess::{postprocess, prune_low_consistency, PostprocessConfig};
use crate::rasterizer::dump::{save_color_png, save_contributor_grid};
use crate::rasterizer::sh::rgb_to_sh_dc;
use crate::rasterizer::{render_view, RenderOptions, ViewStats};
use crate::GaussianSet;

fn load_scene(field: Option<&Path>, manifest: &Path) -> Result<(GaussianField, Vec<Frame>)> {
    let m = load_manifest(manifest)?;
    if m.frames.is_empty() {
        return Err(Error::precondition("empty manifest"));
    }
    let path = field
        .map(Path::to_path_buf)
        .or(m.field_path)
        .ok_or_else(|| Error::Config("no field path given or named in the manifest".into()))?;
    Ok((load_field(path)?, m.frames))
}

fn check_sizes(labels: &LabelStore, field: &GaussianField) -> Result<()> {
    if labels.len() != field.len() {
        return Err(Error::precondition(format!(
            "label sidecar covers {} Gaussians but the field has {}",
            labels.len(),
            field.len()
        )));
    }
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct ExtractArgs {
    pub labels: PathBuf,
    pub field: PathBuf,
    pub level: Level,
    pub object_id: u32,
    pub out: PathBuf,
    /// Refinement applied to the object before writing (pruning is ignored).
    pub refine: PostprocessConfig,
}

/// Writes one object's Gaussians as a standalone PLY and returns their indices.
pub fn cmd_extract(args: &ExtractArgs) -> Result<GaussianSet> {
    let labels = load_labels(&args.labels)?;
    let field = load_field(&args.field)?;
    check_sizes(&labels, &field)?;
    let groups = labels.groups(args.level);
    if !groups.contains_key(&args.object_id) {
        return Err(Error::UnknownObject {
            id: args.object_id,
            valid: groups.keys().copied().collect(),
        });
    }
    let mut set = groups[&args.object_id].clone();
    let refine = PostprocessConfig {
        prune: false,
        ..args.refine.clone()
    };
    if refine.any_enabled() {
        let objects = groups
            .into_iter()
            .map(|(id, gaussians)| SceneObject {
                id,
                gaussians,
                feature: vec![1.0],
                fragment_count: 1,
                parent: None,
            })
            .collect();
        let mut map = ObjectMap::from_objects(args.level, field.len(), objects)?;
        postprocess(&mut map, &field, None, &refine).stage("postprocessing")?;
        set = map
            .get(args.object_id)
            .map(|o| o.gaussians.clone())
            .ok_or(Error::EmptyObject)?;
    }
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_object_field(&field, &set, &args.out)?;
    Ok(set)
}

#[derive(Debug, Clone)]
pub struct PruneArgs {
    pub field: Option<PathBuf>,
    pub manifest: PathBuf,
    pub keep_fraction: f64,
    pub out: PathBuf,
    pub near: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub total: usize,
    pub kept: usize,
    pub pruned: usize,
    pub single_view_pruned: usize,
}

/// Ranks Gaussians by view consistency over the manifest's cameras and writes
/// the kept sub-field to `out/pruned.ply`.
pub fn cmd_prune(args: &PruneArgs) -> Result<PruneReport> {
    let (field, frames) = load_scene(args.field.as_deref(), &args.manifest)?;
    let stats = view_stats(&field, &frames, args.near)?;
    let kept = prune_low_consistency(&stats, args.keep_fraction)?;
    let single_view_pruned = (0..field.len())
        .filter(|&g| stats.view_count[g] <= 1 && !kept.contains(&(g as u32)))
        .count();
    let report = PruneReport {
        total: field.len(),
        kept: kept.len(),
        pruned: field.len() - kept.len(),
        single_view_pruned,
    };
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    save_object_field(&field, &kept, args.out.join("pruned.ply"))?;
    write_json(&report, &args.out.join("prune_report.json"))?;
    Ok(report)
}

/// View statistics with full weight tracking, folded in frame order.
pub(crate) fn view_stats(field: &GaussianField, frames: &[Frame], near: f64) -> Result<ViewStats> {
    let options = RenderOptions {
        track_weights: true,
        ..RenderOptions::contributors()
    };
    let contributions: Vec<_> = frames
        .par_iter()
        .map(|f| {
            render_view(field, f, near, &options, None).map(|b| crate::rasterizer::FrameContribution::from_buffers(&b))
        })
        .collect::<Result<_>>()?;
    let mut stats = ViewStats::new(field.len());
    for c in &contributions {
        stats.add(c);
    }
    Ok(stats)
}

#[derive(Debug, Clone)]
pub struct RenderArgs {
    pub field: Option<PathBuf>,
    pub manifest: PathBuf,
    pub out: PathBuf,
    /// Render only this object: `(labels, level, id)`.
    pub object: Option<(PathBuf, Level, u32)>,
    pub background: [f32; 3],
    pub near: f64,
    /// Also write each frame's contributor grid.
    pub contributors: bool,
}

/// Renders every manifest frame to `out/<frame_id>.png` (and `.lbgb` grids).
pub fn cmd_render(args: &RenderArgs) -> Result<usize> {
    let (field, frames) = load_scene(args.field.as_deref(), &args.manifest)?;
    let subset = match &args.object {
        Some((labels, level, id)) => {
            let labels = load_labels(labels)?;
            check_sizes(&labels, &field)?;
            let groups = labels.groups(*level);
            Some(groups.get(id).cloned().ok_or_else(|| Error::UnknownObject {
                id: *id,
                valid: groups.keys().copied().collect(),
            })?)
        }
        None => None,
    };
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let options = RenderOptions {
        background: args.background,
        ..RenderOptions::default()
    };
    frames.par_iter().try_for_each(|f| {
        let b = render_view(&field, f, args.near, &options, subset.as_ref())?;
        save_color_png(&b, args.out.join(format!("{}.png", f.frame_id)))?;
        if args.contributors {
            save_contributor_grid(&b, args.out.join(format!("{}.lbgb", f.frame_id)))?;
        }
        Ok::<_, Error>(())
    })?;
    Ok(frames.len())
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub gt_labels: PathBuf,
    pub pred_labels: PathBuf,
    pub field: Option<PathBuf>,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub config: EvalConfig,
}

/// Scores predicted labels against ground truth; writes `metrics.txt` and `metrics.json`.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<MetricReport> {
    let (field, frames) = load_scene(args.field.as_deref(), &args.manifest)?;
    let gt = load_labels(&args.gt_labels)?;
    let pred = load_labels(&args.pred_labels)?;
    check_sizes(&gt, &field)?;
    check_sizes(&pred, &field)?;
    let report = evaluate(&field, &frames, &gt, &pred, &args.config)?;
    for o in report.objects.iter().filter(|o| o.pred_id.is_none()) {
        log::warn!("ground-truth object {} has no matching prediction", o.gt_id);
    }
    report.save(&args.out)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct LiftFeaturesArgs {
    pub field: Option<PathBuf>,
    pub manifest: PathBuf,
    pub out: PathBuf,
    /// PCA components to keep; 0 skips PCA.
    pub pca_components: usize,
    pub near: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftFeaturesReport {
    pub gaussians: usize,
    pub covered: usize,
    pub dim: usize,
    pub pca_components: usize,
    pub explained_variance: Vec<f64>,
}

/// Averages dense per-pixel features onto Gaussians across all frames.
///
/// Writes `features.lbgf` (one row per Gaussian, zeros where no pixel was
/// owned) and, with PCA, `pca.lbgf` plus `pca_colors.ply` colored by the
/// first three components.
pub fn cmd_lift_features(args: &LiftFeaturesArgs) -> Result<LiftFeaturesReport> {
    let (field, frames) = load_scene(args.field.as_deref(), &args.manifest)?;
    let accs: Vec<FeatureAccumulator> = frames
        .par_iter()
        .map(|f| {
            let path = f.dense_feature_path.as_ref().ok_or_else(|| Error::Data {
                location: format!("frame {}", f.frame_id),
                message: "no dense feature file".into(),
            })?;
            let dense = load_dense_features(path, f.width, f.height)?;
            let b = render_view(&field, f, args.near, &RenderOptions::contributors(), None)?;
            lift_features(&b, &dense)
        })
        .collect::<Result<_>>()?;
    let mut total = FeatureAccumulator::default();
    for a in &accs {
        total.merge(a)?;
    }
    let dim = total.dim;
    let n = field.len();
    let mut rows = vec![0f32; n * dim];
    let covered: Vec<u32> = total.sums.keys().copied().collect();
    let means: Vec<Vec<f64>> = covered.iter().map(|&g| total.mean(g).expect("covered")).collect();
    for (&g, m) in covered.iter().zip(&means) {
        for (d, v) in m.iter().enumerate() {
            rows[g as usize * dim + d] = *v as f32;
        }
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    save_feature_rows(args.out.join("features.lbgf"), n, dim, &rows)?;
    let mut report = LiftFeaturesReport {
        gaussians: n,
        covered: covered.len(),
        dim,
        pca_components: 0,
        explained_variance: Vec::new(),
    };
    if args.pca_components > 0 && !means.is_empty() {
        let pca = pca_project(&means, args.pca_components)?;
        let c = pca.components.len();
        let mut out = vec![0f32; n * c];
        for (&g, p) in covered.iter().zip(&pca.projected) {
            for (d, v) in p.iter().enumerate() {
                out[g as usize * c + d] = *v as f32;
            }
        }
        save_feature_rows(args.out.join("pca.lbgf"), n, c, &out)?;
        save_field(&pca_colored(&field, &covered, &pca.projected)?, args.out.join("pca_colors.ply"))?;
        report.pca_components = c;
        report.explained_variance = pca.explained_variance;
    }
    write_json(&report, &args.out.join("lift_report.json"))?;
    Ok(report)
}

/// Field recolored by the first three PCA components, each min-max scaled to
/// [0, 1]; Gaussians without features are mid gray.
fn pca_colored(field: &GaussianField, covered: &[u32], projected: &[Vec<f64>]) -> Result<GaussianField> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in projected {
        for a in 0..3.min(p.len()) {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let stride = field.sh_coeffs() * 3;
    let mut sh = vec![0f32; field.len() * stride];
    let gray = rgb_to_sh_dc([0.5; 3]);
    for g in 0..field.len() {
        sh[g * stride..g * stride + 3].copy_from_slice(&gray);
    }
    for (&g, p) in covered.iter().zip(projected) {
        let mut rgb = [0.5f32; 3];
        for a in 0..3.min(p.len()) {
            let span = hi[a] - lo[a];
            if span > 0.0 {
                rgb[a] = ((p[a] - lo[a]) / span) as f32;
            }
        }
        let g = g as usize;
        sh[g * stride..g * stride + 3].copy_from_slice(&rgb_to_sh_dc(rgb));
    }
    field.clone().with_sh(sh)
}
