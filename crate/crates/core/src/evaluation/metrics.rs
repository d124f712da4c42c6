//! Image and partition metrics.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::field_io::MaskMap;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Linear RGB image with values in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[f32; 3]>,
}

impl Image {
    pub fn new(width: u32, height: u32, pixels: Vec<[f32; 3]>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::precondition(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, value: [f32; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    /// Luma `0.299 R + 0.587 G + 0.114 B`.
    pub fn luma(&self) -> Vec<f64> {
        self.pixels
            .iter()
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        crate::rasterizer::dump::to_rgb8(self.width, self.height, &self.pixels)
    }
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Dimension {
            expected_width: a.width,
            expected_height: a.height,
            width: b.width,
            height: b.height,
        });
    }
    for img in [a, b] {
        if img.pixels.iter().flatten().any(|v| !(-1e-6..=1.0 + 1e-6).contains(v)) {
            return Err(Error::precondition("image values outside [0, 1]"));
        }
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .flat_map(|(p, q)| (0..3).map(move |c| (p[c] as f64 - q[c] as f64).powi(2)))
        .sum();
    Ok(sum / (3 * a.pixels.len()).max(1) as f64)
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable valid-mode filtering of a `w` x `h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Gaussian-window SSIM of the luma channels, averaged over valid windows.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::precondition(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let (la, lb) = (a.luma(), b.luma());
    let k = gaussian_kernel();
    let product = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter_valid(&la, w, h, &k);
    let mu_b = filter_valid(&lb, w, h, &k);
    let e_aa = filter_valid(&product(&la, &la), w, h, &k);
    let e_bb = filter_valid(&product(&lb, &lb), w, h, &k);
    let e_ab = filter_valid(&product(&la, &lb), w, h, &k);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Best IoU of every ground-truth instance against any predicted instance at
/// any of the given levels.
pub fn match_masks_by_iou(gt: &MaskMap, preds: &[MaskMap]) -> Result<BTreeMap<u16, f64>> {
    let mut gt_sizes: BTreeMap<u16, u64> = BTreeMap::new();
    for &id in gt.ids.iter().filter(|&&id| id != 0) {
        *gt_sizes.entry(id).or_insert(0) += 1;
    }
    let mut best: BTreeMap<u16, f64> = gt_sizes.keys().map(|&id| (id, 0.0)).collect();
    for pred in preds {
        if pred.width != gt.width || pred.height != gt.height {
            return Err(Error::Dimension {
                expected_width: gt.width,
                expected_height: gt.height,
                width: pred.width,
                height: pred.height,
            });
        }
        let mut pred_sizes: HashMap<u16, u64> = HashMap::new();
        let mut inter: HashMap<(u16, u16), u64> = HashMap::new();
        for (&g, &p) in gt.ids.iter().zip(&pred.ids) {
            if p != 0 {
                *pred_sizes.entry(p).or_insert(0) += 1;
                if g != 0 {
                    *inter.entry((g, p)).or_insert(0) += 1;
                }
            }
        }
        for ((g, p), i) in inter {
            let union = gt_sizes[&g] + pred_sizes[&p] - i;
            let iou = i as f64 / union as f64;
            let slot = best.get_mut(&g).expect("gt id counted");
            if iou > *slot {
                *slot = iou;
            }
        }
    }
    Ok(best)
}

pub fn mean_iou(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::precondition("mIoU of an empty list"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

fn comb2(n: u64) -> f64 {
    n as f64 * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
///
/// Returns 1.0 when both labelings are trivially identical partitions (for
/// example a single cluster each), where the usual formula is 0/0.
pub fn adjusted_rand_index(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::precondition("labelings differ in length"));
    }
    let mut table: HashMap<(u32, u32), u64> = HashMap::new();
    let mut rows: HashMap<u32, u64> = HashMap::new();
    let mut cols: HashMap<u32, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_insert(0) += 1;
        *rows.entry(x).or_insert(0) += 1;
        *cols.entry(y).or_insert(0) += 1;
    }
    let index: f64 = table.values().map(|&n| comb2(n)).sum();
    let sum_a: f64 = rows.values().map(|&n| comb2(n)).sum();
    let sum_b: f64 = cols.values().map(|&n| comb2(n)).sum();
    let total = comb2(a.len() as u64);
    let expected = if total > 0.0 { sum_a * sum_b / total } else { 0.0 };
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < 1e-12 {
        return Ok(if (index - expected).abs() < 1e-12 { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}
