//! Synthetic scenes with known partitions: flat patches of Gaussians laid out
//! on the ground plane, viewed from a cap of cameras above it.
//!
//! Ground-truth masks come either from per-set subset renders (a pixel goes to
//! the set with the highest alpha above 0.5) or, for large scenes, from the
//! label of each pixel's max contributor.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field_io::{
    save_feature_rows, save_field, save_labels, save_manifest, save_mask_map, Frame, GaussianField,
    LabelStore, Level, Manifest, MaskMap,
};
use crate::rasterizer::camera::{intrinsics_from_fov, look_at};
use crate::rasterizer::sh::rgb_to_sh_dc;
use crate::rasterizer::{
    project_gaussians, render_frame, sort_by_depth, ProjectedGaussian, RenderOptions, DEFAULT_NEAR, SENTINEL_NONE,
};
use crate::GaussianSet;

/// Plain Gaussian description used to assemble fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    pub position: [f32; 3],
    pub scale: [f32; 3],
    pub opacity: f32,
    pub color: [f32; 3],
}

/// Builds a degree-0 field (identity rotations) from splats.
pub fn field_from_splats(splats: &[Splat]) -> Result<GaussianField> {
    GaussianField::new(
        splats.iter().map(|s| s.position).collect(),
        splats.iter().map(|s| s.scale).collect(),
        vec![[1.0, 0.0, 0.0, 0.0]; splats.len()],
        splats.iter().map(|s| s.opacity).collect(),
        splats.iter().flat_map(|s| rgb_to_sh_dc(s.color)).collect(),
        1,
    )
}

/// Cameras on a Fibonacci spiral over a spherical cap around +z, looking at `target`.
#[allow(clippy::too_many_arguments)]
pub fn cap_cameras(
    count: usize,
    distance: f64,
    target: [f64; 3],
    min_elevation_deg: f64,
    max_elevation_deg: f64,
    width: u32,
    height: u32,
    fov_y_deg: f64,
) -> Vec<Frame> {
    let k = intrinsics_from_fov(width, height, fov_y_deg);
    let z_lo = min_elevation_deg.to_radians().sin();
    let z_hi = max_elevation_deg.to_radians().sin();
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let target = Vector3::from(target);
    (0..count)
        .map(|i| {
            let z = z_lo + (z_hi - z_lo) * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = i as f64 * golden;
            let eye = target + Vector3::new(r * phi.cos(), r * phi.sin(), z) * distance;
            Frame::camera_only(format!("cam_{i:03}"), width, height, k, look_at(eye, target, Vector3::z()))
        })
        .collect()
}

/// Depth-sorted projection of a whole field.
pub fn project_sorted(field: &GaussianField, frame: &Frame) -> Result<Vec<ProjectedGaussian>> {
    let mut p = project_gaussians(field, frame, DEFAULT_NEAR)?;
    sort_by_depth(&mut p);
    Ok(p)
}

/// Instance mask from subset renders. Each pixel takes the set with the
/// highest alpha above 0.5 (lower index on ties). Mask ids are dense in set
/// order; the returned vector maps mask id - 1 to the set index.
pub fn subset_masks(projected: &[ProjectedGaussian], frame: &Frame, sets: &[GaussianSet]) -> Result<(MaskMap, Vec<usize>)> {
    let n = frame.width as usize * frame.height as usize;
    let mut best: Vec<(f32, Option<usize>)> = vec![(0.5, None); n];
    for (k, set) in sets.iter().enumerate() {
        let b = render_frame(projected, frame.width, frame.height, &RenderOptions::contributors(), Some(set))?;
        for (slot, &a) in best.iter_mut().zip(&b.alpha) {
            if a > slot.0 {
                *slot = (a, Some(k));
            }
        }
    }
    let mut present: Vec<usize> = best.iter().filter_map(|b| b.1).collect();
    present.sort_unstable();
    present.dedup();
    let dense: BTreeMap<usize, u16> = present.iter().enumerate().map(|(i, &k)| (k, i as u16 + 1)).collect();
    let ids = best.iter().map(|b| b.1.map_or(0, |k| dense[&k])).collect();
    Ok((MaskMap::new(frame.width, frame.height, ids)?, present))
}

/// Instance mask from per-Gaussian labels of each pixel's max contributor
/// (label 0 leaves the pixel unmasked). Ids are dense in label order.
pub fn contributor_masks(max_contributor: &[u32], labels: &[u32], width: u32, height: u32) -> Result<(MaskMap, Vec<u32>)> {
    let label_of = |g: u32| if g == SENTINEL_NONE { 0 } else { labels[g as usize] };
    let mut present: Vec<u32> = max_contributor.iter().map(|&g| label_of(g)).filter(|&l| l != 0).collect();
    present.sort_unstable();
    present.dedup();
    if present.len() > u16::MAX as usize {
        return Err(Error::precondition("more than 65535 instances in one frame"));
    }
    let dense: BTreeMap<u32, u16> = present.iter().enumerate().map(|(i, &l)| (l, i as u16 + 1)).collect();
    let ids = max_contributor
        .iter()
        .map(|&g| match label_of(g) {
            0 => 0,
            l => dense[&l],
        })
        .collect();
    Ok((MaskMap::new(width, height, ids)?, present))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSceneSpec {
    pub clusters: usize,
    /// Patch size in Gaussians along x and y.
    pub grid: (usize, usize),
    pub spacing: f64,
    /// Patches sit on a ring of this radius (single patch at the origin).
    pub ring_radius: f64,
    /// Lay patches out on a square lattice with this pitch instead of a ring.
    pub lattice_pitch: Option<f64>,
    pub cameras: usize,
    pub camera_distance: f64,
    pub elevation_deg: (f64, f64),
    pub width: u32,
    pub height: u32,
    pub fov_y_deg: f64,
    pub seed: u64,
}

impl Default for ClusterSceneSpec {
    fn default() -> Self {
        Self {
            clusters: 3,
            grid: (8, 8),
            spacing: 0.08,
            ring_radius: 1.2,
            lattice_pitch: None,
            cameras: 20,
            camera_distance: 4.5,
            elevation_deg: (40.0, 80.0),
            width: 128,
            height: 128,
            fov_y_deg: 60.0,
            seed: 0,
        }
    }
}

/// A scene with a known object partition and a two-way part split per object.
#[derive(Debug, Clone)]
pub struct ClusterScene {
    pub field: GaussianField,
    pub clusters: Vec<GaussianSet>,
    /// Per cluster: the halves with x below and above the patch center.
    pub halves: Vec<[GaussianSet; 2]>,
    pub frames: Vec<Frame>,
}

impl ClusterSceneSpec {
    fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.clusters)
            .map(|k| match self.lattice_pitch {
                Some(p) => {
                    let side = (self.clusters as f64).sqrt().ceil() as usize;
                    let off = (side as f64 - 1.0) / 2.0;
                    [((k % side) as f64 - off) * p, ((k / side) as f64 - off) * p]
                }
                None if self.clusters == 1 => [0.0, 0.0],
                None => {
                    let t = k as f64 / self.clusters as f64 * std::f64::consts::TAU;
                    [self.ring_radius * t.cos(), self.ring_radius * t.sin()]
                }
            })
            .collect()
    }

    pub fn build(&self) -> Result<ClusterScene> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (gx, gy) = self.grid;
        let sigma = (0.45 * self.spacing) as f32;
        let mut splats = Vec::with_capacity(self.clusters * gx * gy);
        let mut clusters = Vec::with_capacity(self.clusters);
        let mut halves = Vec::with_capacity(self.clusters);
        for c in self.centers() {
            let color = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
            let mut set = GaussianSet::new();
            let mut split = [GaussianSet::new(), GaussianSet::new()];
            for j in 0..gy {
                for i in 0..gx {
                    let x = c[0] + (i as f64 - (gx as f64 - 1.0) / 2.0) * self.spacing;
                    let y = c[1] + (j as f64 - (gy as f64 - 1.0) / 2.0) * self.spacing;
                    let g = splats.len() as u32;
                    splats.push(Splat {
                        position: [x as f32, y as f32, 0.0],
                        scale: [sigma, sigma, sigma * 0.1],
                        opacity: 0.9,
                        color,
                    });
                    set.insert(g);
                    split[usize::from(2 * i >= gx)].insert(g);
                }
            }
            clusters.push(set);
            halves.push(split);
        }
        let (lo, hi) = self.elevation_deg;
        let frames = cap_cameras(
            self.cameras,
            self.camera_distance,
            [0.0; 3],
            lo,
            hi,
            self.width,
            self.height,
            self.fov_y_deg,
        );
        Ok(ClusterScene {
            field: field_from_splats(&splats)?,
            clusters,
            halves,
            frames,
        })
    }
}

impl ClusterScene {
    /// Object label (cluster index + 1) of every Gaussian, 0 when unassigned.
    pub fn object_labels(&self) -> Vec<u32> {
        let mut labels = vec![0; self.field.len()];
        for (k, set) in self.clusters.iter().enumerate() {
            for &g in set {
                labels[g as usize] = k as u32 + 1;
            }
        }
        labels
    }

    /// Ground-truth sidecar: objects are clusters, parts are halves.
    pub fn label_store(&self, with_parts: bool) -> LabelStore {
        let mut store = LabelStore::unlabeled(self.field.len());
        store.object = self.object_labels();
        if with_parts {
            for (k, pair) in self.halves.iter().enumerate() {
                for (h, set) in pair.iter().enumerate() {
                    let id = 2 * k as u32 + h as u32 + 1;
                    store.part_parent.insert(id, k as u32 + 1);
                    for &g in set {
                        store.part[g as usize] = id;
                    }
                }
            }
        }
        store
    }

    /// Adds `count` small opaque Gaussians, each placed in front of one camera
    /// (round robin) so that no other camera sees it. Floaters sharing a
    /// camera sit at least 16 px apart so none hides another. Returns their
    /// indices.
    pub fn inject_floaters(&mut self, count: usize, seed: u64) -> Result<GaussianSet> {
        const MIN_SEPARATION_PX: f64 = 16.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut splats = splats_of(&self.field);
        let mut added = GaussianSet::new();
        let mut placed: Vec<Vec<(f64, f64)>> = vec![Vec::new(); self.frames.len()];
        for i in 0..count {
            let cam = i % self.frames.len();
            let frame = &self.frames[cam];
            let (u, v) = loop {
                let u = rng.random_range(0.3..0.7) * frame.width as f64;
                let v = rng.random_range(0.3..0.7) * frame.height as f64;
                if placed[cam].iter().all(|&(pu, pv)| (pu - u).hypot(pv - v) >= MIN_SEPARATION_PX) {
                    break (u, v);
                }
            };
            placed[cam].push((u, v));
            let depth = rng.random_range(0.4..0.7);
            let k = &frame.intrinsics;
            let cam = Vector3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
            let world = frame.rotation().transpose() * (cam - frame.translation());
            added.insert(splats.len() as u32);
            splats.push(Splat {
                position: [world.x as f32, world.y as f32, world.z as f32],
                scale: [0.012; 3],
                opacity: 0.95,
                color: [rng.random(), rng.random(), rng.random()],
            });
        }
        self.field = field_from_splats(&splats)?;
        Ok(added)
    }

    /// Writes the scene as a pipeline input directory and returns the manifest path.
    ///
    /// Object masks come from subset renders. Part masks (with `with_parts`)
    /// label each pixel by the half owning its max contributor, since alpha
    /// argmax and max contributor disagree along the seam between adjacent
    /// halves. Features are one-hot per cluster (per half for parts).
    pub fn write(&self, dir: &Path, with_parts: bool) -> Result<PathBuf> {
        std::fs::create_dir_all(dir.join("masks")).map_err(|e| Error::io(dir, e))?;
        std::fs::create_dir_all(dir.join("features")).map_err(|e| Error::io(dir, e))?;
        save_field(&self.field, dir.join("scene.ply"))?;
        save_labels(&self.label_store(with_parts), dir.join("gt_labels.lbgl"))?;
        let part_labels = self.label_store(true).part;
        let object_dim = self.clusters.len().max(2);
        let part_dim = (2 * self.halves.len()).max(2);
        let frames: Vec<Frame> = self
            .frames
            .par_iter()
            .map(|frame| {
                let projected = project_sorted(&self.field, frame)?;
                let mut out = frame.clone();
                let mut write_level = |level: Level, mask: MaskMap, present: Vec<usize>, dim: usize| -> Result<PathBuf> {
                    let mask_rel = PathBuf::from(format!("masks/{}_{level}.png", frame.frame_id));
                    save_mask_map(&mask, dir.join(&mask_rel))?;
                    let feat_rel = PathBuf::from(format!("features/{}_{level}.lbgf", frame.frame_id));
                    save_feature_rows(dir.join(&feat_rel), present.len(), dim, &one_hot_rows(&present, dim))?;
                    out.mask_paths.insert(level, mask_rel);
                    Ok(feat_rel)
                };
                let (mask, present) = subset_masks(&projected, frame, &self.clusters)?;
                out.feature_path = Some(write_level(Level::Object, mask, present, object_dim)?);
                if with_parts {
                    let b = render_frame(&projected, frame.width, frame.height, &RenderOptions::contributors(), None)?;
                    let (mask, present) = contributor_masks(&b.max_contributor, &part_labels, frame.width, frame.height)?;
                    let present = present.into_iter().map(|l| l as usize - 1).collect();
                    let feat = write_level(Level::Part, mask, present, part_dim)?;
                    out.level_feature_paths.insert(Level::Part, feat);
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let manifest = Manifest {
            field_path: Some(PathBuf::from("scene.ply")),
            frames,
        };
        let path = dir.join("manifest.json");
        save_manifest(&manifest, &path)?;
        Ok(path)
    }

    /// Writes the scene with masks taken from max-contributor labels and
    /// random unit features per cluster of dimension `dim`.
    pub fn write_contributor_masks(&self, dir: &Path, dim: usize, seed: u64) -> Result<PathBuf> {
        std::fs::create_dir_all(dir.join("masks")).map_err(|e| Error::io(dir, e))?;
        std::fs::create_dir_all(dir.join("features")).map_err(|e| Error::io(dir, e))?;
        save_field(&self.field, dir.join("scene.ply"))?;
        save_labels(&self.label_store(false), dir.join("gt_labels.lbgl"))?;
        let labels = self.object_labels();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features: Vec<Vec<f32>> = (0..self.clusters.len())
            .map(|_| {
                let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();
        let frames: Vec<Frame> = self
            .frames
            .par_iter()
            .map(|frame| {
                let projected = project_sorted(&self.field, frame)?;
                let b = render_frame(&projected, frame.width, frame.height, &RenderOptions::contributors(), None)?;
                let (mask, present) = contributor_masks(&b.max_contributor, &labels, frame.width, frame.height)?;
                let mask_rel = PathBuf::from(format!("masks/{}_object.png", frame.frame_id));
                save_mask_map(&mask, dir.join(&mask_rel))?;
                let rows: Vec<f32> = present.iter().flat_map(|&l| features[l as usize - 1].iter().copied()).collect();
                let feat_rel = PathBuf::from(format!("features/{}_object.lbgf", frame.frame_id));
                save_feature_rows(dir.join(&feat_rel), present.len(), dim, &rows)?;
                let mut out = frame.clone();
                out.mask_paths.insert(Level::Object, mask_rel);
                out.feature_path = Some(feat_rel);
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let manifest = Manifest {
            field_path: Some(PathBuf::from("scene.ply")),
            frames,
        };
        let path = dir.join("manifest.json");
        save_manifest(&manifest, &path)?;
        Ok(path)
    }
}

fn one_hot_rows(present: &[usize], dim: usize) -> Vec<f32> {
    let mut rows = vec![0.0; present.len() * dim];
    for (r, &k) in present.iter().enumerate() {
        rows[r * dim + k] = 1.0;
    }
    rows
}

fn splats_of(field: &GaussianField) -> Vec<Splat> {
    (0..field.len())
        .map(|i| {
            let dc = field.sh(i);
            let c0 = crate::rasterizer::sh::SH_C0 as f32;
            Splat {
                position: field.positions()[i],
                scale: field.scales()[i],
                opacity: field.opacities()[i],
                color: [dc[0] * c0 + 0.5, dc[1] * c0 + 0.5, dc[2] * c0 + 0.5],
            }
        })
        .collect()
}
