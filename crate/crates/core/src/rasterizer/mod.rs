//! CPU 3DGS rasterizer: EWA projection, tiled front-to-back compositing,
//! per-pixel max-contributor buffers and per-Gaussian view statistics.

pub mod camera;
pub mod dump;
mod project;
mod render;
pub mod sh;
mod stats;

pub use project::{
    covariance_3d, is_depth_sorted, project_gaussians, rotation_matrix, sort_by_depth, ProjectedGaussian,
    ALPHA_MAX, ALPHA_MIN, COV2D_FLOOR, TRANSMITTANCE_MIN,
};
pub use render::{render_frame, RenderBuffers, RenderMode, RenderOptions, SENTINEL_NONE, TILE_SIZE};
pub use stats::{FrameContribution, ViewStats};

use crate::error::Result;
use crate::field_io::{Frame, GaussianField};
use crate::GaussianSet;

/// Default near plane (scene units).
pub const DEFAULT_NEAR: f64 = 0.01;

/// Projects, sorts and renders `field` from `frame` in one call.
pub fn render_view(
    field: &GaussianField,
    frame: &Frame,
    near: f64,
    options: &RenderOptions,
    subset: Option<&GaussianSet>,
) -> Result<RenderBuffers> {
    let mut projected = project_gaussians(field, frame, near)?;
    sort_by_depth(&mut projected);
    render_frame(&projected, frame.width, frame.height, options, subset)
}
