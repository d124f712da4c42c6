use std::path::Path;

use super::*;
use crate::evaluation::adjusted_rand_index;
use crate::field_io::{load_field, load_labels, load_manifest, save_feature_rows, save_labels, save_manifest, LabelStore};
use crate::synthetic::{ClusterScene, ClusterSceneSpec};

fn scene(clusters: usize, cameras: usize) -> ClusterScene {
    ClusterSceneSpec {
        clusters,
        cameras,
        width: 96,
        height: 96,
        ..Default::default()
    }
    .build()
    .unwrap()
}

fn config(dir: &Path, manifest: &Path) -> RunConfig {
    RunConfig {
        manifest: manifest.to_path_buf(),
        output: dir.join("out"),
        threads: 2,
        ..RunConfig::default()
    }
}

#[test]
fn three_clusters_recovered_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let s = scene(3, 8);
    let manifest = s.write(dir.path(), false).unwrap();
    let (labels, run) = cmd_segment(&config(dir.path(), &manifest)).unwrap();
    assert_eq!(run.objects[&Level::Object], 3);
    assert_eq!(adjusted_rand_index(&labels.object, &s.object_labels()).unwrap(), 1.0);
    assert!(labels.object.iter().all(|&l| l != 0));
    let on_disk = load_labels(dir.path().join("out").join(LABELS_FILE)).unwrap();
    assert_eq!(on_disk, labels);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out").join(RUN_REPORT_FILE)).unwrap())
            .unwrap();
    let t = &report["timings"];
    let sum = t["preprocessing"].as_f64().unwrap()
        + t["lifting_merging"].as_f64().unwrap()
        + t["postprocessing"].as_f64().unwrap();
    assert!(t["total"].as_f64().unwrap() >= sum);
}

#[test]
fn parts_split_each_object_in_halves() {
    let dir = tempfile::tempdir().unwrap();
    let s = scene(2, 8);
    let manifest = s.write(dir.path(), true).unwrap();
    let cfg = RunConfig {
        levels: vec![Level::Object, Level::Part],
        ..config(dir.path(), &manifest)
    };
    let (labels, run) = cmd_segment(&cfg).unwrap();
    assert_eq!(run.objects[&Level::Part], 4);
    let gt = s.label_store(true);
    assert_eq!(adjusted_rand_index(&labels.part, &gt.part).unwrap(), 1.0);
    for (&part, &obj) in &labels.part_parent {
        let members = labels.groups(Level::Part)[&part].clone();
        assert!(members.iter().all(|&g| labels.object[g as usize] == obj));
    }
}

#[test]
fn empty_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let s = scene(2, 2);
    let manifest_path = s.write(dir.path(), false).unwrap();
    let mut m = load_manifest(&manifest_path).unwrap();
    m.frames.clear();
    save_manifest(&m, &manifest_path).unwrap();
    let err = cmd_segment(&config(dir.path(), &manifest_path)).unwrap_err();
    assert!(err.to_string().contains("empty manifest"), "{err}");
}

#[test]
fn rerun_and_thread_count_do_not_change_labels() {
    let dir = tempfile::tempdir().unwrap();
    let s = scene(3, 6);
    let manifest = s.write(dir.path(), false).unwrap();
    let mut cfg = config(dir.path(), &manifest);
    cfg.fragment_keep_fraction = 0.6;
    cfg.seed = 11;
    let mut bytes = Vec::new();
    for threads in [1, 4, 1] {
        cfg.threads = threads;
        cmd_segment(&cfg).unwrap();
        bytes.push(std::fs::read(cfg.output.join(LABELS_FILE)).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    assert_eq!(bytes[0], bytes[2]);
}

#[test]
fn config_parses_and_validates() {
    let cfg = RunConfig::from_toml(
        r#"
        manifest = "m.json"
        levels = ["object", "part"]
        threads = 4
        [merge]
        tau_geom = 0.2
        [postprocess]
        prune = true
        keep_fraction = 0.9
        "#,
    )
    .unwrap();
    assert_eq!(cfg.merge.tau_geom, 0.2);
    assert_eq!(cfg.merge.tau_sem, 0.75);
    assert!(cfg.postprocess.prune && !cfg.postprocess.outliers);
    assert_eq!(cfg.ordered_levels(), vec![Level::Object, Level::Part]);
    // The manifest does not exist.
    assert!(matches!(cfg.validate(), Err(crate::Error::Config(_))));
    assert!(RunConfig::from_toml("bogus = 1").is_err());

    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.json");
    std::fs::write(&m, "{}").unwrap();
    let ok = RunConfig {
        manifest: m,
        ..RunConfig::default()
    };
    ok.validate().unwrap();
    for bad in [
        RunConfig {
            levels: vec![Level::Part],
            ..ok.clone()
        },
        RunConfig {
            levels: vec![Level::Object, Level::Subpart],
            ..ok.clone()
        },
        RunConfig {
            fragment_keep_fraction: 0.0,
            ..ok.clone()
        },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}

#[test]
fn extract_round_trip_and_unknown_id() {
    let dir = tempfile::tempdir().unwrap();
    let s = scene(2, 2);
    s.write(dir.path(), false).unwrap();
    let args = ExtractArgs {
        labels: dir.path().join("gt_labels.lbgl"),
        field: dir.path().join("scene.ply"),
        level: Level::Object,
        object_id: 2,
        out: dir.path().join("assets/obj2.ply"),
        refine: Default::default(),
    };
    let set = cmd_extract(&args).unwrap();
    assert_eq!(set, s.clusters[1]);
    let sub = load_field(&args.out).unwrap();
    assert_eq!(sub.len(), set.len());
    let expected = s.field.subset(&set).unwrap();
    for i in 0..sub.len() {
        assert_eq!(sub.positions()[i], expected.positions()[i]);
    }

    let err = cmd_extract(&ExtractArgs {
        object_id: 9,
        ..args.clone()
    })
    .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains('9') && msg.contains("[1, 2]"), "{msg}");

    // Whole-scene label set gives a PLY with every vertex.
    let all = LabelStore {
        object: vec![1; s.field.len()],
        ..LabelStore::unlabeled(s.field.len())
    };
    save_labels(&all, dir.path().join("all.lbgl")).unwrap();
    let whole = cmd_extract(&ExtractArgs {
        labels: dir.path().join("all.lbgl"),
        object_id: 1,
        ..args
    })
    .unwrap();
    assert_eq!(whole.len(), s.field.len());
}

#[test]
fn evaluate_rejects_mismatched_fields() {
    let dir = tempfile::tempdir().unwrap();
    let s = scene(2, 2);
    let manifest = s.write(dir.path(), false).unwrap();
    save_labels(&LabelStore::unlabeled(5), dir.path().join("small.lbgl")).unwrap();
    let args = EvaluateArgs {
        gt_labels: dir.path().join("gt_labels.lbgl"),
        pred_labels: dir.path().join("small.lbgl"),
        field: None,
        manifest,
        out: dir.path().join("eval"),
        config: Default::default(),
    };
    assert!(cmd_evaluate(&args).is_err());
    let report = cmd_evaluate(&EvaluateArgs {
        pred_labels: dir.path().join("gt_labels.lbgl"),
        config: crate::evaluation::EvalConfig {
            rig: crate::evaluation::RigSettings {
                view_count: 4,
                width: 32,
                height: 32,
                ..Default::default()
            },
            ..Default::default()
        },
        ..args
    })
    .unwrap();
    assert_eq!(report.mean_psnr, Some(crate::evaluation::PSNR_CAP));
    assert!(dir.path().join("eval/metrics.json").is_file());
}

#[test]
fn prune_command_removes_single_view_floaters() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = scene(2, 10);
    let floaters = s.inject_floaters(5, 2).unwrap();
    let manifest = s.write(dir.path(), false).unwrap();
    let report = cmd_prune(&PruneArgs {
        field: None,
        manifest,
        keep_fraction: 0.95,
        out: dir.path().join("pruned"),
        near: crate::rasterizer::DEFAULT_NEAR,
    })
    .unwrap();
    assert_eq!(report.total, s.field.len());
    assert_eq!(report.kept, (0.95 * s.field.len() as f64).ceil() as usize);
    let stats = commands::view_stats(&s.field, &s.frames, crate::rasterizer::DEFAULT_NEAR).unwrap();
    let single: usize = stats.view_count.iter().filter(|&&v| v <= 1).count();
    assert!(single >= floaters.len());
    assert_eq!(report.single_view_pruned, single.min(report.pruned));
    let kept = load_field(dir.path().join("pruned/pruned.ply")).unwrap();
    assert_eq!(kept.len(), report.kept);
}

#[test]
fn render_command_writes_frames() {
    let dir = tempfile::tempdir().unwrap();
    let s = scene(2, 3);
    let manifest = s.write(dir.path(), false).unwrap();
    let n = cmd_render(&RenderArgs {
        field: None,
        manifest,
        out: dir.path().join("renders"),
        object: Some((dir.path().join("gt_labels.lbgl"), Level::Object, 1)),
        background: [1.0; 3],
        near: crate::rasterizer::DEFAULT_NEAR,
        contributors: true,
    })
    .unwrap();
    assert_eq!(n, 3);
    for f in &s.frames {
        assert!(dir.path().join(format!("renders/{}.png", f.frame_id)).is_file());
        assert!(dir.path().join(format!("renders/{}.lbgb", f.frame_id)).is_file());
    }
}

#[test]
fn lifted_dense_features_follow_clusters() {
    let dir = tempfile::tempdir().unwrap();
    let s = scene(2, 4);
    let manifest_path = s.write(dir.path(), false).unwrap();
    let mut m = load_manifest(&manifest_path).unwrap();
    let labels = s.object_labels();
    // Dense features: one-hot of the cluster under each pixel's max contributor.
    for f in &mut m.frames {
        let b = crate::rasterizer::render_view(
            &s.field,
            f,
            crate::rasterizer::DEFAULT_NEAR,
            &crate::rasterizer::RenderOptions::contributors(),
            None,
        )
        .unwrap();
        let mut rows = vec![0f32; b.max_contributor.len() * 2];
        for (p, &g) in b.max_contributor.iter().enumerate() {
            if g != crate::rasterizer::SENTINEL_NONE {
                rows[p * 2 + labels[g as usize] as usize - 1] = 1.0;
            }
        }
        let path = dir.path().join(format!("{}_dense.lbgf", f.frame_id));
        save_feature_rows(&path, b.max_contributor.len(), 2, &rows).unwrap();
        f.dense_feature_path = Some(path);
    }
    save_manifest(&m, &manifest_path).unwrap();
    let report = cmd_lift_features(&LiftFeaturesArgs {
        field: None,
        manifest: manifest_path,
        out: dir.path().join("lifted"),
        pca_components: 1,
        near: crate::rasterizer::DEFAULT_NEAR,
    })
    .unwrap();
    assert_eq!(report.dim, 2);
    assert!(report.covered > 0);
    let table = crate::field_io::load_features(dir.path().join("lifted/features.lbgf")).unwrap();
    for g in 0..s.field.len() {
        let row = table.for_mask(g as u32 + 1).unwrap();
        if row.iter().any(|&v| v != 0.0) {
            assert_eq!(row[labels[g] as usize - 1], 1.0);
        }
    }
    assert!(dir.path().join("lifted/pca_colors.ply").is_file());
}

