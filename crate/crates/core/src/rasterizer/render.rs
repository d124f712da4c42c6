//! Tile-parallel front-to-back alpha compositing with max-contributor tracking.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::project::{is_depth_sorted, ProjectedGaussian, ALPHA_MIN, TRANSMITTANCE_MIN};
use crate::error::{Error, Result};
use crate::GaussianSet;

/// `max_contributor` value for pixels no Gaussian reached.
pub const SENTINEL_NONE: u32 = u32::MAX;
pub const TILE_SIZE: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    Color,
    MaxContributor,
    Both,
}

impl RenderMode {
    fn wants_color(self) -> bool {
        matches!(self, RenderMode::Color | RenderMode::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub mode: RenderMode,
    pub background: [f32; 3],
    /// Accumulate each Gaussian's summed compositing weight over the frame.
    pub track_weights: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            mode: RenderMode::Both,
            background: [0.0; 3],
            track_weights: false,
        }
    }
}

impl RenderOptions {
    pub fn color_on(background: [f32; 3]) -> Self {
        Self {
            mode: RenderMode::Color,
            background,
            track_weights: false,
        }
    }

    pub fn contributors() -> Self {
        Self {
            mode: RenderMode::MaxContributor,
            ..Self::default()
        }
    }
}

/// Per-pixel outputs, row-major.
///
/// `color` is all zeros when the mode does not request color.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderBuffers {
    pub width: u32,
    pub height: u32,
    pub color: Vec<[f32; 3]>,
    pub alpha: Vec<f32>,
    pub max_contributor: Vec<u32>,
    pub max_weight: Vec<f32>,
    /// `(gaussian, summed weight)` sorted by Gaussian, when weight tracking was requested.
    pub weight_sums: Option<Vec<(u32, f64)>>,
}

impl RenderBuffers {
    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Final transmittance at a pixel.
    pub fn transmittance(&self, p: usize) -> f32 {
        1.0 - self.alpha[p]
    }
}

struct TileOutput {
    color: Vec<[f32; 3]>,
    transmittance: Vec<f32>,
    contributor: Vec<u32>,
    weight: Vec<f32>,
    weight_sums: Vec<(u32, f64)>,
}

/// Composites `projected` (sorted front to back) into a `width` x `height` frame.
///
/// With `subset`, only the listed Gaussians take part.
pub fn render_frame(
    projected: &[ProjectedGaussian],
    width: u32,
    height: u32,
    options: &RenderOptions,
    subset: Option<&GaussianSet>,
) -> Result<RenderBuffers> {
    if width == 0 || height == 0 {
        return Err(Error::precondition(format!("render size {width}x{height}")));
    }
    debug_assert!(is_depth_sorted(projected), "projected Gaussians are not depth-sorted");

    let active: Vec<&ProjectedGaussian> = match subset {
        Some(set) => projected.iter().filter(|p| set.contains(&p.index)).collect(),
        None => projected.iter().collect(),
    };

    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (k, g) in active.iter().enumerate() {
        let Some((x0, x1, y0, y1)) = pixel_bounds(g, width, height) else {
            continue;
        };
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                bins[(ty * tiles_x + tx) as usize].push(k as u32);
            }
        }
    }

    let outputs: Vec<TileOutput> = bins
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let tx = t as u32 % tiles_x;
            let ty = t as u32 / tiles_x;
            render_tile(&active, list, tx, ty, width, height, options)
        })
        .collect();

    let n = width as usize * height as usize;
    let mut out = RenderBuffers {
        width,
        height,
        color: vec![[0.0; 3]; n],
        alpha: vec![0.0; n],
        max_contributor: vec![SENTINEL_NONE; n],
        max_weight: vec![0.0; n],
        weight_sums: None,
    };
    let mut sums: BTreeMap<u32, f64> = BTreeMap::new();
    for (t, tile) in outputs.into_iter().enumerate() {
        let tx = t as u32 % tiles_x;
        let ty = t as u32 / tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        let tw = (width - x0).min(TILE_SIZE);
        let th = (height - y0).min(TILE_SIZE);
        for ly in 0..th {
            for lx in 0..tw {
                let l = (ly * tw + lx) as usize;
                let p = ((y0 + ly) * width + x0 + lx) as usize;
                out.color[p] = tile.color[l];
                out.alpha[p] = 1.0 - tile.transmittance[l];
                out.max_contributor[p] = tile.contributor[l];
                out.max_weight[p] = tile.weight[l];
            }
        }
        for (g, w) in tile.weight_sums {
            *sums.entry(g).or_insert(0.0) += w;
        }
    }
    if options.track_weights {
        out.weight_sums = Some(sums.into_iter().collect());
    }
    Ok(out)
}

/// Inclusive pixel range whose centers lie within the splat radius.
fn pixel_bounds(g: &ProjectedGaussian, width: u32, height: u32) -> Option<(u32, u32, u32, u32)> {
    let r = g.radius as f64;
    let (mx, my) = (g.mean[0] as f64, g.mean[1] as f64);
    let x0 = (mx - r - 0.5).ceil().max(0.0);
    let x1 = (mx + r - 0.5).floor().min(width as f64 - 1.0);
    let y0 = (my - r - 0.5).ceil().max(0.0);
    let y1 = (my + r - 0.5).floor().min(height as f64 - 1.0);
    (x0 <= x1 && y0 <= y1).then_some((x0 as u32, x1 as u32, y0 as u32, y1 as u32))
}

fn render_tile(
    active: &[&ProjectedGaussian],
    list: &[u32],
    tx: u32,
    ty: u32,
    width: u32,
    height: u32,
    options: &RenderOptions,
) -> TileOutput {
    let x0 = tx * TILE_SIZE;
    let y0 = ty * TILE_SIZE;
    let tw = (width - x0).min(TILE_SIZE);
    let th = (height - y0).min(TILE_SIZE);
    let n = (tw * th) as usize;
    let with_color = options.mode.wants_color();
    let mut out = TileOutput {
        color: vec![[0.0; 3]; n],
        transmittance: vec![1.0; n],
        contributor: vec![SENTINEL_NONE; n],
        weight: vec![0.0; n],
        weight_sums: Vec::new(),
    };
    let mut local_sums = if options.track_weights { vec![0f64; list.len()] } else { Vec::new() };

    for ly in 0..th {
        let py = (y0 + ly) as f32 + 0.5;
        for lx in 0..tw {
            let px = (x0 + lx) as f32 + 0.5;
            let l = (ly * tw + lx) as usize;
            let mut t = 1.0f32;
            let mut rgb = [0f32; 3];
            let mut best = SENTINEL_NONE;
            let mut best_w = 0f32;
            for (slot, &k) in list.iter().enumerate() {
                let g = active[k as usize];
                let alpha = g.alpha_at(px, py);
                if alpha < ALPHA_MIN {
                    continue;
                }
                let w = alpha * t;
                if w > best_w {
                    best_w = w;
                    best = g.index;
                }
                if with_color {
                    for c in 0..3 {
                        rgb[c] += w * g.color[c];
                    }
                }
                if options.track_weights {
                    local_sums[slot] += w as f64;
                }
                t *= 1.0 - alpha;
                if t < TRANSMITTANCE_MIN {
                    break;
                }
            }
            if with_color {
                for c in 0..3 {
                    rgb[c] += t * options.background[c];
                }
                out.color[l] = rgb;
            }
            out.transmittance[l] = t;
            out.contributor[l] = best;
            out.weight[l] = best_w;
        }
    }
    if options.track_weights {
        out.weight_sums = list
            .iter()
            .zip(local_sums)
            .filter(|(_, w)| *w > 0.0)
            .map(|(&k, w)| (active[k as usize].index, w))
            .collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn splat(index: u32, mean: [f32; 2], depth: f32, opacity: f32, color: [f32; 3]) -> ProjectedGaussian {
        ProjectedGaussian {
            index,
            mean,
            cov: [4.0, 0.0, 4.0],
            conic: [0.25, 0.0, 0.25],
            depth,
            color,
            opacity,
            radius: 12.0,
        }
    }

    #[test]
    fn single_gaussian_over_white() {
        let g = splat(3, [8.5, 8.5], 1.0, 0.99, [1.0, 0.0, 0.0]);
        let b = render_frame(&[g], 17, 17, &RenderOptions { background: [1.0; 3], ..Default::default() }, None)
            .unwrap();
        let p = 8 * 17 + 8;
        let expect = [0.99 + 0.01, 0.01, 0.01];
        for c in 0..3 {
            assert!((b.color[p][c] - expect[c]).abs() < 1e-6);
        }
        assert_eq!(b.max_contributor[p], 3);
        assert!((b.max_weight[p] - 0.99).abs() < 1e-7);
    }

    #[test]
    fn front_gaussian_wins_forced_weights() {
        let front = splat(0, [4.5, 4.5], 1.0, 0.6, [1.0; 3]);
        let back = splat(1, [4.5, 4.5], 2.0, 0.9, [0.0; 3]);
        let b = render_frame(&[front, back], 9, 9, &RenderOptions::default(), None).unwrap();
        let p = 4 * 9 + 4;
        assert_eq!(b.max_contributor[p], 0);
        assert!((b.max_weight[p] - 0.6).abs() < 1e-7);
        // Back weight is 0.9 * 0.4 = 0.36, leaving T = 0.04.
        assert!((b.alpha[p] - 0.96).abs() < 1e-6);
    }

    #[test]
    fn opaque_back_gaussian_can_win() {
        let front = splat(7, [2.5, 2.5], 1.0, 0.2, [1.0; 3]);
        let back = splat(2, [2.5, 2.5], 2.0, 0.9, [1.0; 3]);
        let b = render_frame(&[front, back], 5, 5, &RenderOptions::default(), None).unwrap();
        assert_eq!(b.max_contributor[2 * 5 + 2], 2);
        assert!((b.max_weight[2 * 5 + 2] - 0.72).abs() < 1e-6);
    }

    #[test]
    fn empty_frame_is_background() {
        let b = render_frame(&[], 20, 3, &RenderOptions::color_on([0.2, 0.4, 0.6]), None).unwrap();
        assert!(b.max_contributor.iter().all(|&c| c == SENTINEL_NONE));
        assert!(b.color.iter().all(|c| *c == [0.2, 0.4, 0.6]));
        assert!(b.alpha.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn subset_excludes_others_and_full_subset_is_identical() {
        let a = splat(0, [5.0, 5.0], 1.0, 0.8, [1.0, 0.0, 0.0]);
        let b = splat(1, [6.0, 5.0], 2.0, 0.8, [0.0, 1.0, 0.0]);
        let opts = RenderOptions { track_weights: true, ..Default::default() };
        let full = render_frame(&[a, b], 12, 12, &opts, None).unwrap();
        let all: GaussianSet = [0, 1].into();
        assert_eq!(render_frame(&[a, b], 12, 12, &opts, Some(&all)).unwrap(), full);
        let only_b: GaussianSet = [1].into();
        let sub = render_frame(&[a, b], 12, 12, &opts, Some(&only_b)).unwrap();
        assert!(sub.max_contributor.iter().all(|&c| c == 1 || c == SENTINEL_NONE));
        assert_eq!(sub.weight_sums.as_ref().unwrap().len(), 1);
    }

    #[test]
    fn weight_sums_match_pixel_totals_for_single_splat() {
        let g = splat(4, [10.0, 7.0], 1.0, 0.7, [0.5; 3]);
        let opts = RenderOptions { track_weights: true, ..Default::default() };
        let b = render_frame(&[g], 37, 21, &opts, None).unwrap();
        let total: f64 = b.max_weight.iter().map(|&w| w as f64).sum();
        let sums = b.weight_sums.unwrap();
        assert_eq!(sums.len(), 1);
        assert!((sums[0].1 - total).abs() < 1e-6);
    }
}
