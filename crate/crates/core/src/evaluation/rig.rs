//! Viewing-hemisphere cameras for per-object asset renders.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::Image;
use crate::error::{Error, Result};
use crate::field_io::{Frame, GaussianField};
use crate::rasterizer::camera::{intrinsics_from_fov, look_at};
use crate::rasterizer::{project_gaussians, render_frame, sort_by_depth, ProjectedGaussian, RenderOptions};
use crate::GaussianSet;

pub const WHITE: [f32; 3] = [1.0; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HemisphereRig {
    pub center: [f64; 3],
    pub radius: f64,
    pub view_count: usize,
    pub up: [f64; 3],
    pub width: u32,
    pub height: u32,
    pub fov_y_deg: f64,
}

/// Camera placement defaults for asset evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigSettings {
    pub view_count: usize,
    pub width: u32,
    pub height: u32,
    pub fov_y_deg: f64,
    pub up: [f64; 3],
    /// Camera distance as a multiple of the bounding-sphere radius.
    pub radius_scale: f64,
}

impl Default for RigSettings {
    fn default() -> Self {
        Self {
            view_count: 50,
            width: 128,
            height: 128,
            fov_y_deg: 60.0,
            up: [0.0, 0.0, 1.0],
            radius_scale: 2.5,
        }
    }
}

impl HemisphereRig {
    /// Rig centered on the object's centroid, at `radius_scale` times its
    /// bounding-sphere radius (centers padded by 3 sigma of the largest scale).
    pub fn for_object(field: &GaussianField, object: &GaussianSet, settings: &RigSettings) -> Result<Self> {
        if object.is_empty() {
            return Err(Error::precondition("hemisphere rig for an empty object"));
        }
        let n = object.len() as f64;
        let mut c = [0.0; 3];
        for &g in object {
            let p = field.position(g as usize);
            for a in 0..3 {
                c[a] += p[a] / n;
            }
        }
        let mut r: f64 = 0.0;
        for &g in object {
            let p = field.position(g as usize);
            let extent = field.scales()[g as usize].iter().fold(0.0f32, |m, &s| m.max(s)) as f64 * 3.0;
            let d = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
            r = r.max(d + extent);
        }
        Ok(Self {
            center: c,
            radius: settings.radius_scale * r.max(1e-6),
            view_count: settings.view_count,
            up: settings.up,
            width: settings.width,
            height: settings.height,
            fov_y_deg: settings.fov_y_deg,
        })
    }

    /// Cameras on a Fibonacci spiral over the upper hemisphere, all looking at the center.
    pub fn frames(&self) -> Vec<Frame> {
        let up = Vector3::from(self.up).normalize();
        let helper = if up.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let e1 = up.cross(&helper).normalize();
        let e2 = up.cross(&e1);
        let center = Vector3::from(self.center);
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let k = intrinsics_from_fov(self.width, self.height, self.fov_y_deg);
        (0..self.view_count)
            .map(|i| {
                let z = 1.0 - (i as f64 + 0.5) / self.view_count as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = i as f64 * golden;
                let dir = e1 * (r * phi.cos()) + e2 * (r * phi.sin()) + up * z;
                let eye = center + dir * self.radius;
                Frame::camera_only(format!("hemi_{i:03}"), self.width, self.height, k, look_at(eye, center, up))
            })
            .collect()
    }
}

/// Depth-sorted projections of the whole field for each frame.
pub fn project_frames(field: &GaussianField, frames: &[Frame], near: f64) -> Result<Vec<Vec<ProjectedGaussian>>> {
    frames
        .par_iter()
        .map(|f| {
            let mut p = project_gaussians(field, f, near)?;
            sort_by_depth(&mut p);
            Ok(p)
        })
        .collect()
}

/// Renders `object` over white from every projected frame.
pub fn render_projected(
    projected: &[Vec<ProjectedGaussian>],
    frames: &[Frame],
    object: &GaussianSet,
) -> Result<Vec<Image>> {
    projected
        .par_iter()
        .zip(frames)
        .map(|(p, f)| {
            let b = render_frame(p, f.width, f.height, &RenderOptions::color_on(WHITE), Some(object))?;
            Image::new(f.width, f.height, b.color)
        })
        .collect()
}

/// Renders the object's sub-field from every rig camera over white.
pub fn render_hemisphere(field: &GaussianField, object: &GaussianSet, rig: &HemisphereRig) -> Result<Vec<Image>> {
    if object.is_empty() {
        return Err(Error::precondition("cannot render an empty object"));
    }
    let frames = rig.frames();
    let projected = project_frames(field, &frames, crate::rasterizer::DEFAULT_NEAR)?;
    render_projected(&projected, &frames, object)
}
