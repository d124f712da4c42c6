//! Training-free hierarchical instance segmentation of pretrained 3D Gaussian
//! splatting fields.
//!
//! Per frame, 2D instance masks are lifted onto the Gaussian that contributes
//! most to each pixel, producing 3D fragments. Fragments are merged
//! incrementally into scene objects by geometric overlap and feature
//! similarity, then recursively into parts and subparts. Post-processing
//! cleans the resulting assets, and the evaluation module scores them.

pub mod error;
pub mod evaluation;
pub mod field_io;
pub mod lifting;
pub mod merging;
pub mod pipeline;
pub mod postprocess;
pub mod rasterizer;
pub mod synthetic;

use std::collections::BTreeSet;

pub use error::{Error, Result};

/// A set of Gaussian indices into a field.
pub type GaussianSet = BTreeSet<u32>;
