//! End-to-end commands: segmentation runs, asset extraction, pruning,
//! rendering, evaluation and dense feature lifting.

mod commands;
mod segment;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use commands::{
    cmd_evaluate, cmd_extract, cmd_lift_features, cmd_prune, cmd_render, EvaluateArgs, ExtractArgs, LiftFeaturesArgs,
    LiftFeaturesReport, PruneArgs, PruneReport, RenderArgs,
};
pub use segment::{cmd_segment, segment_in_memory, SceneInputs, SegmentationRun, StageTimings};

use crate::error::{Error, Result};
use crate::field_io::Level;
use crate::lifting::LiftFloors;
use crate::merging::MergeConfig;
use crate::postprocess::PostprocessConfig;

pub const LABELS_FILE: &str = "labels.lbgl";
pub const RUN_REPORT_FILE: &str = "run_report.json";

/// Settings of one segmentation run, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    /// Overrides the field named in the manifest.
    pub field: Option<PathBuf>,
    pub output: PathBuf,
    pub merge: MergeConfig,
    pub floors: LiftFloors,
    pub postprocess: PostprocessConfig,
    pub levels: Vec<Level>,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
    pub seed: u64,
    /// Fraction of each frame's fragments kept per level (seeded subsample).
    pub fragment_keep_fraction: f64,
    pub near: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.json"),
            field: None,
            output: PathBuf::from("out"),
            merge: MergeConfig::default(),
            floors: LiftFloors::default(),
            postprocess: PostprocessConfig::default(),
            levels: vec![Level::Object],
            threads: 0,
            seed: 0,
            fragment_keep_fraction: 1.0,
            near: crate::rasterizer::DEFAULT_NEAR,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a TOML file; relative paths in it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.manifest);
        resolve(&mut cfg.output);
        if let Some(f) = cfg.field.as_mut() {
            resolve(f);
        }
        Ok(cfg)
    }

    /// Checks parameter ranges and that referenced inputs exist.
    pub fn validate(&self) -> Result<()> {
        self.merge.validate()?;
        if !self.levels.contains(&Level::Object) {
            return Err(Error::Config("levels must include object".into()));
        }
        if self.levels.contains(&Level::Subpart) && !self.levels.contains(&Level::Part) {
            return Err(Error::Config("subpart level needs the part level".into()));
        }
        if !(self.fragment_keep_fraction > 0.0 && self.fragment_keep_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "fragment_keep_fraction {} outside (0, 1]",
                self.fragment_keep_fraction
            )));
        }
        if !(self.near > 0.0) {
            return Err(Error::Config(format!("near plane {} must be positive", self.near)));
        }
        let pp = &self.postprocess;
        if !(pp.keep_fraction > 0.0 && pp.keep_fraction <= 1.0) {
            return Err(Error::Config(format!("keep_fraction {} outside (0, 1]", pp.keep_fraction)));
        }
        if pp.k == 0 || !(pp.std_ratio > 0.0) {
            return Err(Error::Config("outlier k and std_ratio must be positive".into()));
        }
        if !(pp.salient_fraction > 0.0 && pp.salient_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "salient_fraction {} outside (0, 1]",
                pp.salient_fraction
            )));
        }
        if !self.manifest.is_file() {
            return Err(Error::Config(format!("manifest {} does not exist", self.manifest.display())));
        }
        if let Some(f) = &self.field {
            if !f.is_file() {
                return Err(Error::Config(format!("field {} does not exist", f.display())));
            }
        }
        Ok(())
    }

    /// Requested levels in coarse-to-fine order without duplicates.
    pub fn ordered_levels(&self) -> Vec<Level> {
        Level::ALL.into_iter().filter(|l| self.levels.contains(l)).collect()
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (0 = all cores).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests;
