//! Asset and mask evaluation: object matching, hemisphere renders, PSNR/SSIM
//! and mask mIoU.

mod matching;
mod metrics;
mod rig;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use matching::{binary_masks, label_map, mask_mse, match_objects_by_mse, ObjectMatch, MASK_ALPHA};
pub use metrics::{
    adjusted_rand_index, match_masks_by_iou, mean_iou, mse, psnr, ssim, Image, PSNR_CAP, SSIM_SIGMA, SSIM_WINDOW,
};
pub use rig::{project_frames, render_hemisphere, render_projected, HemisphereRig, RigSettings, WHITE};

use crate::error::{Error, Result};
use crate::field_io::{Frame, GaussianField, LabelStore, Level, MaskMap};
use crate::rasterizer::{render_frame, RenderOptions};
use crate::GaussianSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectScore {
    pub gt_id: u32,
    pub pred_id: Option<u32>,
    pub mask_mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub objects: Vec<ObjectScore>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    /// Not computed: needs a pretrained perceptual network.
    pub lpips: Option<f64>,
    /// Mask mIoU keyed by level name, plus `multi` (ground-truth objects
    /// against predictions at every level).
    pub miou: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for o in &self.objects {
            let pred = o.pred_id.map_or("none".to_string(), |p| p.to_string());
            let _ = writeln!(
                s,
                "object gt={} pred={} mask_mse={:.6} psnr={:.4} ssim={:.6}",
                o.gt_id, pred, o.mask_mse, o.psnr, o.ssim
            );
        }
        if let (Some(p), Some(q)) = (self.mean_psnr, self.mean_ssim) {
            let _ = writeln!(s, "scene mean_psnr={p:.4} mean_ssim={q:.6} lpips=unimplemented");
        }
        for (level, v) in &self.miou {
            let _ = writeln!(s, "miou level={level} value={v:.6}");
        }
        s
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let text_path = dir.join("metrics.txt");
        std::fs::write(&text_path, self.to_text()).map_err(|e| Error::io(&text_path, e))?;
        let json_path = dir.join("metrics.json");
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub rig: RigSettings,
    pub near: f64,
    pub assets: bool,
    pub masks: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rig: RigSettings::default(),
            near: crate::rasterizer::DEFAULT_NEAR,
            assets: true,
            masks: true,
        }
    }
}

/// Per-object asset scores: each ground-truth object is matched to a
/// prediction by mask MSE over `frames`, then both are rendered from a rig
/// built around the ground-truth object and compared.
pub fn evaluate_assets(
    field: &GaussianField,
    frames: &[Frame],
    gt: &BTreeMap<u32, GaussianSet>,
    pred: &BTreeMap<u32, GaussianSet>,
    cfg: &EvalConfig,
) -> Result<Vec<ObjectScore>> {
    let projected = project_frames(field, frames, cfg.near)?;
    let matches = match_objects_by_mse(gt, pred, &projected, frames)?;
    let mut scores = Vec::with_capacity(matches.len());
    for m in matches {
        let gt_set = &gt[&m.gt_id];
        let rig = HemisphereRig::for_object(field, gt_set, &cfg.rig)?;
        let rig_frames = rig.frames();
        let rig_proj = project_frames(field, &rig_frames, cfg.near)?;
        let gt_imgs = render_projected(&rig_proj, &rig_frames, gt_set)?;
        let pred_imgs = match m.pred_id {
            Some(p) => render_projected(&rig_proj, &rig_frames, &pred[&p])?,
            None => rig_frames
                .iter()
                .map(|f| Image::filled(f.width, f.height, WHITE))
                .collect(),
        };
        let n = gt_imgs.len().max(1) as f64;
        let mut ps = 0.0;
        let mut ss = 0.0;
        for (a, b) in gt_imgs.iter().zip(&pred_imgs) {
            ps += psnr(a, b)?;
            ss += ssim(a, b)?;
        }
        scores.push(ObjectScore {
            gt_id: m.gt_id,
            pred_id: m.pred_id,
            mask_mse: m.mse,
            psnr: ps / n,
            ssim: ss / n,
        });
    }
    Ok(scores)
}

/// Mask mIoU from label sidecars projected through each frame's full-scene
/// max-contributor buffer.
pub fn evaluate_masks(
    field: &GaussianField,
    frames: &[Frame],
    gt: &LabelStore,
    pred: &LabelStore,
    near: f64,
) -> Result<BTreeMap<String, f64>> {
    if gt.len() != field.len() || pred.len() != field.len() {
        return Err(Error::precondition("label sidecars do not match the field size"));
    }
    let projected = project_frames(field, frames, near)?;
    let mut per_level: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (p, f) in projected.iter().zip(frames) {
        let b = render_frame(p, f.width, f.height, &RenderOptions::contributors(), None)?;
        let maps = |store: &LabelStore| -> Result<BTreeMap<Level, MaskMap>> {
            Level::ALL
                .iter()
                .map(|&l| Ok((l, label_map(&b.max_contributor, store.level(l), f.width, f.height)?)))
                .collect()
        };
        let gt_maps = maps(gt)?;
        let pred_maps = maps(pred)?;
        for level in Level::ALL {
            let ious = match_masks_by_iou(&gt_maps[&level], std::slice::from_ref(&pred_maps[&level]))?;
            per_level.entry(level.to_string()).or_default().extend(ious.values());
        }
        let all: Vec<MaskMap> = pred_maps.into_values().collect();
        let ious = match_masks_by_iou(&gt_maps[&Level::Object], &all)?;
        per_level.entry("multi".into()).or_default().extend(ious.values());
    }
    Ok(per_level
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(k, v)| (k, mean_iou(&v).expect("non-empty")))
        .collect())
}

/// Full report for a predicted label sidecar against ground truth.
pub fn evaluate(
    field: &GaussianField,
    frames: &[Frame],
    gt: &LabelStore,
    pred: &LabelStore,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    if cfg.assets {
        let objects = evaluate_assets(field, frames, &gt.groups(Level::Object), &pred.groups(Level::Object), cfg)?;
        if !objects.is_empty() {
            let n = objects.len() as f64;
            report.mean_psnr = Some(objects.iter().map(|o| o.psnr).sum::<f64>() / n);
            report.mean_ssim = Some(objects.iter().map(|o| o.ssim).sum::<f64>() / n);
        }
        report.objects = objects;
    }
    if cfg.masks {
        report.miou = evaluate_masks(field, frames, gt, pred, cfg.near)?;
    }
    Ok(report)
}
