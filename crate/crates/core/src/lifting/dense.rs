//! Dense per-pixel feature lifting and PCA compression of lifted features.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::field_io::DenseFeatures;
use crate::rasterizer::{RenderBuffers, SENTINEL_NONE};

/// Per-Gaussian feature sums and owned-pixel counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureAccumulator {
    pub dim: usize,
    pub sums: BTreeMap<u32, (Vec<f64>, u64)>,
}

impl FeatureAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            sums: BTreeMap::new(),
        }
    }

    pub fn get(&self, g: u32) -> (Vec<f64>, u64) {
        self.sums
            .get(&g)
            .cloned()
            .unwrap_or_else(|| (vec![0.0; self.dim], 0))
    }

    /// Associative merge of per-frame accumulators.
    pub fn merge(&mut self, other: &FeatureAccumulator) -> Result<()> {
        if self.sums.is_empty() && self.dim == 0 {
            self.dim = other.dim;
        }
        if other.dim != self.dim && !other.sums.is_empty() {
            return Err(Error::precondition(format!(
                "merging features of dimension {} into {}",
                other.dim, self.dim
            )));
        }
        for (&g, (sum, count)) in &other.sums {
            let entry = self.sums.entry(g).or_insert_with(|| (vec![0.0; sum.len()], 0));
            for (a, b) in entry.0.iter_mut().zip(sum) {
                *a += b;
            }
            entry.1 += count;
        }
        Ok(())
    }

    /// Mean feature of a Gaussian, `None` when it owned no pixel.
    pub fn mean(&self, g: u32) -> Option<Vec<f64>> {
        let (sum, count) = self.sums.get(&g)?;
        Some(sum.iter().map(|v| v / *count as f64).collect())
    }
}

/// Sums dense features over the pixels each Gaussian dominates.
pub fn lift_features(buffers: &RenderBuffers, dense: &DenseFeatures) -> Result<FeatureAccumulator> {
    if dense.width != buffers.width || dense.height != buffers.height {
        return Err(Error::Dimension {
            expected_width: buffers.width,
            expected_height: buffers.height,
            width: dense.width,
            height: dense.height,
        });
    }
    let mut acc = FeatureAccumulator::new(dense.dim);
    for y in 0..dense.height {
        for x in 0..dense.width {
            let p = (y * dense.width + x) as usize;
            let row = dense.pixel(x, y);
            if let Some(k) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data {
                    location: format!("pixel ({x}, {y}), channel {k}"),
                    message: "non-finite dense feature".into(),
                });
            }
            let g = buffers.max_contributor[p];
            if g == SENTINEL_NONE {
                continue;
            }
            let entry = acc.sums.entry(g).or_insert_with(|| (vec![0.0; dense.dim], 0));
            for (a, &b) in entry.0.iter_mut().zip(row) {
                *a += b as f64;
            }
            entry.1 += 1;
        }
    }
    Ok(acc)
}

/// Principal-component projection of a set of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Components as rows, by descending explained variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    /// Input rows projected onto the components.
    pub projected: Vec<Vec<f64>>,
}

/// Projects `rows` onto their first `components` principal axes.
///
/// Each axis is sign-normalized so its largest-magnitude entry is positive.
pub fn pca_project(rows: &[Vec<f64>], components: usize) -> Result<Pca> {
    let Some(first) = rows.first() else {
        return Err(Error::precondition("PCA of an empty set"));
    };
    let d = first.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::precondition("PCA rows differ in dimension"));
    }
    let n = rows.len();
    let k = components.min(d);
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut comps = Vec::with_capacity(k);
    let mut variance = Vec::with_capacity(k);
    for &c in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        comps.push(v);
        variance.push(eig.eigenvalues[c].max(0.0));
    }
    let projected = (0..n)
        .map(|i| {
            comps
                .iter()
                .map(|c| c.iter().enumerate().map(|(j, w)| w * centered[(i, j)]).sum())
                .collect()
        })
        .collect();
    Ok(Pca {
        mean,
        components: comps,
        explained_variance: variance,
        projected,
    })
}
