//! Oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splatlift::field_io::{Frame, GaussianField};
use splatlift::rasterizer::camera::{intrinsics_from_fov, look_at};
use splatlift::rasterizer::sh::rgb_to_sh_dc;
use splatlift::rasterizer::{ProjectedGaussian, SENTINEL_NONE};
use splatlift::GaussianSet;

/// Same stream as the generator script next to the SSIM fixture.
pub struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OraclePixel {
    pub color: [f32; 3],
    pub transmittance: f32,
    pub best: u32,
    pub best_weight: f32,
    pub second_weight: f32,
}

/// Per-pixel front-to-back compositing over every splat, without tiles or
/// footprint culling. `sorted` must be in compositing order.
pub fn naive_render(sorted: &[ProjectedGaussian], width: u32, height: u32, background: [f32; 3]) -> Vec<OraclePixel> {
    let mut out = Vec::with_capacity((width * height) as usize);
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let mut t = 1.0f32;
            let mut rgb = [0f32; 3];
            let (mut best, mut best_w, mut second_w) = (SENTINEL_NONE, 0f32, 0f32);
            for g in sorted {
                let dx = px - g.mean[0];
                let dy = py - g.mean[1];
                let power = -0.5 * (g.conic[0] * dx * dx + g.conic[2] * dy * dy) - g.conic[1] * dx * dy;
                let alpha = (g.opacity * power.exp()).min(0.99);
                if alpha < 1.0 / 255.0 {
                    continue;
                }
                let w = alpha * t;
                if w > best_w {
                    second_w = best_w;
                    best_w = w;
                    best = g.index;
                } else if w > second_w {
                    second_w = w;
                }
                for c in 0..3 {
                    rgb[c] += w * g.color[c];
                }
                t *= 1.0 - alpha;
                if t < 1e-4 {
                    break;
                }
            }
            for c in 0..3 {
                rgb[c] += t * background[c];
            }
            out.push(OraclePixel {
                color: rgb,
                transmittance: t,
                best,
                best_weight: best_w,
                second_weight: second_w,
            });
        }
    }
    out
}

/// Random field of `n` Gaussians around the origin, plus a camera looking at it.
pub fn random_scene(seed: u64, n: usize, size: u32, sh_coeffs: usize) -> (GaussianField, Frame) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    let mut rotations = Vec::with_capacity(n);
    let mut opacities = Vec::with_capacity(n);
    let mut sh = Vec::with_capacity(n * sh_coeffs * 3);
    for _ in 0..n {
        positions.push([0; 3].map(|_: i32| rng.random_range(-1.0f32..1.0)));
        scales.push([0; 3].map(|_: i32| rng.random_range(0.01f32..0.25)));
        let q = [0; 4].map(|_: i32| rng.random_range(-1.0f32..1.0));
        let norm = q.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-3);
        rotations.push(q.map(|v| v / norm));
        opacities.push(rng.random_range(0.02f32..0.999));
        let rgb = [0; 3].map(|_: i32| rng.random_range(0.0f32..1.0));
        sh.extend_from_slice(&rgb_to_sh_dc(rgb));
        for _ in 3..sh_coeffs * 3 {
            sh.push(rng.random_range(-0.3f32..0.3));
        }
    }
    let field = GaussianField::new(positions, scales, rotations, opacities, sh, sh_coeffs).expect("valid field");
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let elev = rng.random_range(-0.8..0.8f64);
    let eye = Vector3::new(elev.cos() * theta.cos(), elev.cos() * theta.sin(), elev.sin()) * 3.0;
    let frame = Frame::camera_only(
        format!("rand_{seed}"),
        size,
        size,
        intrinsics_from_fov(size, size, 60.0),
        look_at(eye, Vector3::zeros(), Vector3::z()),
    );
    (field, frame)
}

/// Same field with every Gaussian colored white.
pub fn whitened(field: &GaussianField) -> GaussianField {
    let stride = field.sh_coeffs() * 3;
    let mut sh = vec![0f32; field.len() * stride];
    let white = rgb_to_sh_dc([1.0; 3]);
    for g in 0..field.len() {
        sh[g * stride..g * stride + 3].copy_from_slice(&white);
    }
    field.clone().with_sh(sh).expect("same layout")
}

/// Connected components of the fragment-overlap graph.
pub fn union_find_components(fragments: &[Vec<u32>], n: usize) -> Vec<GaussianSet> {
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut parent: Vec<usize> = (0..n).collect();
    let mut covered = vec![false; n];
    for f in fragments {
        for &g in f {
            covered[g as usize] = true;
            let (a, b) = (find(&mut parent, f[0] as usize), find(&mut parent, g as usize));
            parent[a] = b;
        }
    }
    let mut groups: BTreeMap<usize, GaussianSet> = BTreeMap::new();
    for g in 0..n {
        if covered[g] {
            let r = find(&mut parent, g);
            groups.entry(r).or_default().insert(g as u32);
        }
    }
    let mut out: Vec<GaussianSet> = groups.into_values().collect();
    out.sort();
    out
}

/// Random per-frame fragment lists: each frame holds disjoint fragments.
pub fn random_fragment_stream(seed: u64, n: usize, frames: usize) -> Vec<Vec<Vec<u32>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames)
        .map(|_| {
            let mut pool: Vec<u32> = (0..n as u32).collect();
            for i in (1..pool.len()).rev() {
                pool.swap(i, rng.random_range(0..=i));
            }
            let mut out = Vec::new();
            let mut used = 0;
            for _ in 0..rng.random_range(1..8) {
                let len = rng.random_range(1..=n / 4 + 1);
                if used + len > pool.len() {
                    break;
                }
                out.push(pool[used..used + len].to_vec());
                used += len;
            }
            out
        })
        .collect()
}
