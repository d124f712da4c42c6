//! `splatlift`: segment, extract, prune, render and evaluate Gaussian
//! splatting scenes from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use splatlift::evaluation::{EvalConfig, RigSettings};
use splatlift::field_io::Level;
use splatlift::merging::SimilarityMode;
use splatlift::pipeline::{
    cmd_evaluate, cmd_extract, cmd_lift_features, cmd_prune, cmd_render, cmd_segment, EvaluateArgs, ExtractArgs,
    LiftFeaturesArgs, PruneArgs, RenderArgs, RunConfig,
};
use splatlift::postprocess::PostprocessConfig;
use splatlift::rasterizer::DEFAULT_NEAR;
use splatlift::synthetic::ClusterSceneSpec;
use splatlift::Error;

#[derive(Parser)]
#[command(name = "splatlift", version, about = "Training-free instance segmentation of 3D Gaussian splatting scenes")]
struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lift per-frame masks onto the field and merge them into objects, parts and subparts.
    Segment(SegmentCmd),
    /// Write one labeled object as a standalone PLY.
    Extract(ExtractCmd),
    /// Drop the least view-consistent Gaussians.
    Prune(PruneCmd),
    /// Render manifest frames, optionally a single object.
    Render(RenderCmd),
    /// Score predicted labels against ground truth.
    Evaluate(EvaluateCmd),
    /// Average dense per-pixel features onto Gaussians.
    LiftFeatures(LiftFeaturesCmd),
    /// Write a synthetic scene with known objects (field, masks, features, manifest, labels).
    Synth(SynthCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Object,
    Part,
    Subpart,
}

impl From<LevelArg> for Level {
    fn from(l: LevelArg) -> Self {
        match l {
            LevelArg::Object => Level::Object,
            LevelArg::Part => Level::Part,
            LevelArg::Subpart => Level::Subpart,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SimilarityArg {
    Normalized,
    Printed,
}

#[derive(Args)]
struct SegmentCmd {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Frame manifest (JSON).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Field PLY; defaults to the one named in the manifest.
    #[arg(long)]
    field: Option<PathBuf>,
    /// Output directory for labels and the run report.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Comma-separated levels to segment.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<LevelArg>>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Seed of the fragment subsample.
    #[arg(long)]
    seed: Option<u64>,
    /// Minimum geometric overlap for a merge.
    #[arg(long)]
    tau_geom: Option<f64>,
    /// Minimum feature similarity for a merge.
    #[arg(long)]
    tau_sem: Option<f64>,
    /// Weight of feature similarity in the merge score.
    #[arg(long)]
    lambda_sem: Option<f64>,
    #[arg(long)]
    similarity: Option<SimilarityArg>,
    /// Masks with fewer pixels are not lifted.
    #[arg(long)]
    min_pixels: Option<u32>,
    /// Fragments with fewer Gaussians are dropped.
    #[arg(long)]
    min_gaussians: Option<u32>,
    /// Fraction of each frame's fragments kept (seeded).
    #[arg(long)]
    fragment_keep_fraction: Option<f64>,
    #[command(flatten)]
    post: PostFlags,
    /// Fraction kept by view-consistency pruning.
    #[arg(long)]
    keep_fraction: Option<f64>,
}

#[derive(Args)]
struct PostFlags {
    /// Enable view-consistency pruning.
    #[arg(long)]
    prune: bool,
    /// Enable statistical outlier removal.
    #[arg(long)]
    outliers: bool,
    /// Enable connected-component splitting.
    #[arg(long)]
    split: bool,
    /// Enable residue reattachment.
    #[arg(long)]
    merge_residue: bool,
    /// Enable every post-processing stage.
    #[arg(long)]
    postprocess_all: bool,
}

impl PostFlags {
    fn apply(&self, cfg: &mut PostprocessConfig) {
        cfg.prune |= self.prune || self.postprocess_all;
        cfg.outliers |= self.outliers || self.postprocess_all;
        cfg.split |= self.split || self.postprocess_all;
        cfg.merge_residue |= self.merge_residue || self.postprocess_all;
    }
}

#[derive(Args)]
struct ExtractCmd {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    field: PathBuf,
    #[arg(long)]
    id: u32,
    #[arg(long, value_enum, default_value = "object")]
    level: LevelArg,
    #[arg(long, short)]
    out: PathBuf,
    /// Remove statistical outliers before writing.
    #[arg(long)]
    outliers: bool,
    /// Split off disconnected components before writing.
    #[arg(long)]
    split: bool,
}

#[derive(Args)]
struct PruneCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    keep_fraction: f64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    /// Label sidecar; with `--id`, render only that object.
    #[arg(long, requires = "id")]
    labels: Option<PathBuf>,
    #[arg(long, requires = "labels")]
    id: Option<u32>,
    #[arg(long, value_enum, default_value = "object")]
    level: LevelArg,
    /// Background color as r,g,b in [0, 1].
    #[arg(long, value_parser = parse_rgb, default_value = "0,0,0")]
    background: [f32; 3],
    /// Also write max-contributor grids.
    #[arg(long)]
    contributors: bool,
}

#[derive(Args)]
struct EvaluateCmd {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    /// Hemisphere views per object.
    #[arg(long, default_value_t = 50)]
    views: usize,
    /// Hemisphere render size in pixels.
    #[arg(long, default_value_t = 128)]
    size: u32,
    #[arg(long)]
    skip_assets: bool,
    #[arg(long)]
    skip_masks: bool,
}

#[derive(Args)]
struct LiftFeaturesCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    /// PCA components to keep (0 skips PCA).
    #[arg(long, default_value_t = 24)]
    pca: usize,
}

#[derive(Args)]
struct SynthCmd {
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    clusters: usize,
    #[arg(long, default_value_t = 20)]
    cameras: usize,
    #[arg(long, default_value_t = 128)]
    size: u32,
    /// Also write part masks splitting every object in halves.
    #[arg(long)]
    parts: bool,
    /// Single-view floaters to inject.
    #[arg(long, default_value_t = 0)]
    floaters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn segment(cmd: SegmentCmd) -> splatlift::Result<()> {
    let mut cfg = match &cmd.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = cmd.manifest {
        cfg.manifest = v;
    }
    if cmd.field.is_some() {
        cfg.field = cmd.field;
    }
    if let Some(v) = cmd.output {
        cfg.output = v;
    }
    if let Some(v) = cmd.levels {
        cfg.levels = v.into_iter().map(Level::from).collect();
    }
    if let Some(v) = cmd.threads {
        cfg.threads = v;
    }
    if let Some(v) = cmd.seed {
        cfg.seed = v;
    }
    if let Some(v) = cmd.tau_geom {
        cfg.merge.tau_geom = v;
    }
    if let Some(v) = cmd.tau_sem {
        cfg.merge.tau_sem = v;
    }
    if let Some(v) = cmd.lambda_sem {
        cfg.merge.lambda_sem = v;
    }
    if let Some(v) = cmd.similarity {
        cfg.merge.similarity = match v {
            SimilarityArg::Normalized => SimilarityMode::Normalized,
            SimilarityArg::Printed => SimilarityMode::Printed,
        };
    }
    if let Some(v) = cmd.min_pixels {
        cfg.floors.min_pixels = v;
    }
    if let Some(v) = cmd.min_gaussians {
        cfg.floors.min_gaussians = v;
    }
    if let Some(v) = cmd.fragment_keep_fraction {
        cfg.fragment_keep_fraction = v;
    }
    if let Some(v) = cmd.keep_fraction {
        cfg.postprocess.keep_fraction = v;
    }
    cmd.post.apply(&mut cfg.postprocess);
    let (_, run) = cmd_segment(&cfg)?;
    for (level, n) in &run.objects {
        println!("{level}: {n} objects, {} labeled Gaussians", run.labeled_gaussians[level]);
    }
    let t = run.timings;
    println!(
        "time: preprocessing {:.3}s, lifting+merging {:.3}s, postprocessing {:.3}s, total {:.3}s",
        t.preprocessing, t.lifting_merging, t.postprocessing, t.total
    );
    println!("wrote {}", cfg.output.display());
    Ok(())
}

fn run(cli: Cli) -> splatlift::Result<()> {
    match cli.command {
        Command::Segment(cmd) => segment(cmd),
        Command::Extract(cmd) => {
            let refine = PostprocessConfig {
                outliers: cmd.outliers,
                split: cmd.split,
                ..PostprocessConfig::default()
            };
            let set = cmd_extract(&ExtractArgs {
                labels: cmd.labels,
                field: cmd.field,
                level: cmd.level.into(),
                object_id: cmd.id,
                out: cmd.out.clone(),
                refine,
            })?;
            println!("wrote {} Gaussians to {}", set.len(), cmd.out.display());
            Ok(())
        }
        Command::Prune(cmd) => {
            let r = cmd_prune(&PruneArgs {
                field: cmd.field,
                manifest: cmd.manifest,
                keep_fraction: cmd.keep_fraction,
                out: cmd.out,
                near: DEFAULT_NEAR,
            })?;
            println!(
                "kept {} of {} Gaussians ({} pruned, {} seen in at most one view)",
                r.kept, r.total, r.pruned, r.single_view_pruned
            );
            Ok(())
        }
        Command::Render(cmd) => {
            let n = cmd_render(&RenderArgs {
                field: cmd.field,
                manifest: cmd.manifest,
                out: cmd.out,
                object: cmd.labels.zip(cmd.id).map(|(l, id)| (l, cmd.level.into(), id)),
                background: cmd.background,
                near: DEFAULT_NEAR,
                contributors: cmd.contributors,
            })?;
            println!("rendered {n} frames");
            Ok(())
        }
        Command::Evaluate(cmd) => {
            let config = EvalConfig {
                rig: RigSettings {
                    view_count: cmd.views,
                    width: cmd.size,
                    height: cmd.size,
                    ..RigSettings::default()
                },
                assets: !cmd.skip_assets,
                masks: !cmd.skip_masks,
                ..EvalConfig::default()
            };
            let report = cmd_evaluate(&EvaluateArgs {
                gt_labels: cmd.gt,
                pred_labels: cmd.pred,
                field: cmd.field,
                manifest: cmd.manifest,
                out: cmd.out,
                config,
            })?;
            print!("{}", report.to_text());
            Ok(())
        }
        Command::LiftFeatures(cmd) => {
            let r = cmd_lift_features(&LiftFeaturesArgs {
                field: cmd.field,
                manifest: cmd.manifest,
                out: cmd.out,
                pca_components: cmd.pca,
                near: DEFAULT_NEAR,
            })?;
            println!("lifted {}-d features onto {} of {} Gaussians", r.dim, r.covered, r.gaussians);
            Ok(())
        }
        Command::Synth(cmd) => {
            let mut scene = ClusterSceneSpec {
                clusters: cmd.clusters,
                cameras: cmd.cameras,
                width: cmd.size,
                height: cmd.size,
                seed: cmd.seed,
                ..ClusterSceneSpec::default()
            }
            .build()?;
            if cmd.floaters > 0 {
                scene.inject_floaters(cmd.floaters, cmd.seed)?;
            }
            let manifest = scene.write(&cmd.out, cmd.parts)?;
            println!("wrote {} Gaussians, manifest {}", scene.field.len(), manifest.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn parse_rgb(s: &str) -> Result<[f32; 3], String> {
    let v: Vec<f32> = s
        .split(',')
        .map(|c| c.trim().parse::<f32>().map_err(|e| format!("{c:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [r, g, b] if v.iter().all(|c| (0.0..=1.0).contains(c)) => Ok([r, g, b]),
        _ => Err("expected r,g,b with components in [0, 1]".into()),
    }
}

/// 1 for input errors, 2 for broken internal invariants.
fn exit_code(e: &Error) -> u8 {
    if e.is_internal() {
        2
    } else {
        1
    }
}
