use std::collections::BTreeMap;

use super::render::{RenderBuffers, SENTINEL_NONE};

/// Per-Gaussian view-consistency statistics accumulated over frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewStats {
    /// Frames in which the Gaussian was the max contributor of at least one pixel.
    pub view_count: Vec<u32>,
    /// Summed compositing weight over all pixels and frames.
    pub opacity_contribution: Vec<f64>,
    pub frames: u32,
}

impl ViewStats {
    pub fn new(gaussians: usize) -> Self {
        Self {
            view_count: vec![0; gaussians],
            opacity_contribution: vec![0.0; gaussians],
            frames: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.view_count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.view_count.is_empty()
    }

    /// Folds one rendered frame into the statistics.
    ///
    /// Uses the full per-Gaussian weight sums when the frame was rendered with
    /// weight tracking; otherwise only max-contributor pixel weights count.
    pub fn accumulate(&mut self, buffers: &RenderBuffers) {
        self.add(&FrameContribution::from_buffers(buffers));
    }

    /// Folds a precomputed frame record into the statistics.
    pub fn add(&mut self, frame: &FrameContribution) {
        for &g in &frame.seen {
            self.view_count[g as usize] += 1;
        }
        for &(g, w) in &frame.weights {
            self.opacity_contribution[g as usize] += w;
        }
        self.frames += 1;
    }

    /// Associative merge of partial statistics.
    pub fn merge(&mut self, other: &ViewStats) {
        assert_eq!(self.len(), other.len(), "merging stats of different fields");
        for (a, b) in self.view_count.iter_mut().zip(&other.view_count) {
            *a += b;
        }
        for (a, b) in self.opacity_contribution.iter_mut().zip(&other.opacity_contribution) {
            *a += b;
        }
        self.frames += other.frames;
    }

    /// Importance `contribution * ln(1 + view_count)`.
    pub fn score(&self, g: usize) -> f64 {
        self.opacity_contribution[g] * (1.0 + self.view_count[g] as f64).ln()
    }
}


/// One frame's sparse contribution to [`ViewStats`], so frames can be
/// rendered in parallel and folded in a fixed order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameContribution {
    /// Distinct max contributors, ascending.
    pub seen: Vec<u32>,
    /// `(gaussian, weight)`, ascending by Gaussian.
    pub weights: Vec<(u32, f64)>,
}

impl FrameContribution {
    pub fn from_buffers(buffers: &RenderBuffers) -> Self {
        let mut seen: Vec<u32> = buffers
            .max_contributor
            .iter()
            .copied()
            .filter(|&g| g != SENTINEL_NONE)
            .collect();
        seen.sort_unstable();
        seen.dedup();
        let weights = match &buffers.weight_sums {
            Some(sums) => sums.clone(),
            None => {
                let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
                for (&g, &w) in buffers.max_contributor.iter().zip(&buffers.max_weight) {
                    if g != SENTINEL_NONE {
                        *acc.entry(g).or_insert(0.0) += w as f64;
                    }
                }
                acc.into_iter().collect()
            }
        };
        Self { seen, weights }
    }
}
