use crate::error::{Error, Result};
use crate::GaussianSet;

/// Number of SH coefficients per channel for degrees 0..=3.
pub const SH_COEFF_COUNTS: [usize; 4] = [1, 4, 9, 16];

const QUAT_NORM_TOL: f32 = 1e-6;

/// An explicit 3DGS scene with activated parameters.
///
/// SH coefficients are laid out `[gaussian][coefficient][channel]`, coefficient 0
/// being the DC term.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianField {
    positions: Vec<[f32; 3]>,
    scales: Vec<[f32; 3]>,
    rotations: Vec<[f32; 4]>,
    opacities: Vec<f32>,
    sh: Vec<f32>,
    sh_coeffs: usize,
}

impl GaussianField {
    /// Builds a field, checking every per-Gaussian invariant.
    ///
    /// Rotations are `(w, x, y, z)` and must already be unit length.
    pub fn new(
        positions: Vec<[f32; 3]>,
        scales: Vec<[f32; 3]>,
        rotations: Vec<[f32; 4]>,
        opacities: Vec<f32>,
        sh: Vec<f32>,
        sh_coeffs: usize,
    ) -> Result<Self> {
        let n = positions.len();
        if !SH_COEFF_COUNTS.contains(&sh_coeffs) {
            return Err(Error::Schema(format!(
                "unsupported SH coefficient count {sh_coeffs} (expected 1, 4, 9 or 16)"
            )));
        }
        if scales.len() != n || rotations.len() != n || opacities.len() != n {
            return Err(Error::Integrity(format!(
                "per-Gaussian arrays disagree: positions {n}, scales {}, rotations {}, opacities {}",
                scales.len(),
                rotations.len(),
                opacities.len()
            )));
        }
        if sh.len() != n * sh_coeffs * 3 {
            return Err(Error::Integrity(format!(
                "SH array holds {} values, expected {}",
                sh.len(),
                n * sh_coeffs * 3
            )));
        }
        for i in 0..n {
            let loc = || format!("gaussian {i}");
            let finite = positions[i].iter().all(|v| v.is_finite())
                && scales[i].iter().all(|v| v.is_finite())
                && rotations[i].iter().all(|v| v.is_finite())
                && opacities[i].is_finite()
                && sh[i * sh_coeffs * 3..(i + 1) * sh_coeffs * 3]
                    .iter()
                    .all(|v| v.is_finite());
            if !finite {
                return Err(Error::Data {
                    location: loc(),
                    message: "non-finite parameter".into(),
                });
            }
            if !(0.0..=1.0).contains(&opacities[i]) {
                return Err(Error::Data {
                    location: loc(),
                    message: format!("opacity {} outside [0, 1]", opacities[i]),
                });
            }
            if scales[i].iter().any(|&s| s <= 0.0) {
                return Err(Error::Data {
                    location: loc(),
                    message: format!("non-positive scale {:?}", scales[i]),
                });
            }
            let q = rotations[i];
            let norm = q.iter().map(|v| v * v).sum::<f32>().sqrt();
            if (norm - 1.0).abs() > QUAT_NORM_TOL {
                return Err(Error::Data {
                    location: loc(),
                    message: format!("quaternion norm {norm} is not 1"),
                });
            }
        }
        Ok(Self {
            positions,
            scales,
            rotations,
            opacities,
            sh,
            sh_coeffs,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f32; 3]] {
        &self.positions
    }

    pub fn scales(&self) -> &[[f32; 3]] {
        &self.scales
    }

    pub fn rotations(&self) -> &[[f32; 4]] {
        &self.rotations
    }

    pub fn opacities(&self) -> &[f32] {
        &self.opacities
    }

    /// Coefficients per channel (1, 4, 9 or 16).
    pub fn sh_coeffs(&self) -> usize {
        self.sh_coeffs
    }

    pub fn sh_degree(&self) -> usize {
        SH_COEFF_COUNTS
            .iter()
            .position(|&k| k == self.sh_coeffs)
            .expect("validated on construction")
    }

    /// All SH coefficients of one Gaussian, `[coefficient][channel]`.
    pub fn sh(&self, index: usize) -> &[f32] {
        let stride = self.sh_coeffs * 3;
        &self.sh[index * stride..(index + 1) * stride]
    }

    pub fn position(&self, index: usize) -> [f64; 3] {
        self.positions[index].map(f64::from)
    }

    /// Copies the listed Gaussians into a new field, in ascending index order.
    pub fn subset(&self, indices: &GaussianSet) -> Result<GaussianField> {
        let n = self.len();
        if let Some(&bad) = indices.iter().find(|&&i| i as usize >= n) {
            return Err(Error::precondition(format!(
                "Gaussian index {bad} out of range for a field of {n}"
            )));
        }
        let stride = self.sh_coeffs * 3;
        let mut sh = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            sh.extend_from_slice(self.sh(i as usize));
        }
        let pick = |i: &u32| *i as usize;
        Ok(GaussianField {
            positions: indices.iter().map(|i| self.positions[pick(i)]).collect(),
            scales: indices.iter().map(|i| self.scales[pick(i)]).collect(),
            rotations: indices.iter().map(|i| self.rotations[pick(i)]).collect(),
            opacities: indices.iter().map(|i| self.opacities[pick(i)]).collect(),
            sh,
            sh_coeffs: self.sh_coeffs,
        })
    }

    /// Replaces the SH coefficients (same layout and coefficient count).
    pub fn with_sh(mut self, sh: Vec<f32>) -> Result<Self> {
        if sh.len() != self.sh.len() {
            return Err(Error::Integrity(format!(
                "SH array holds {} values, expected {}",
                sh.len(),
                self.sh.len()
            )));
        }
        self.sh = sh;
        Ok(self)
    }

    /// Axis-aligned bounds of the Gaussian centers, `None` for an empty field.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let mut it = self.positions.iter();
        let first = it.next()?.map(f64::from);
        Some(it.fold((first, first), |(mut lo, mut hi), p| {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a] as f64);
                hi[a] = hi[a].max(p[a] as f64);
            }
            (lo, hi)
        }))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse of [`sigmoid`]; `p` is clamped away from 0 and 1 so the result stays finite.
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    (p / (1.0 - p)).ln()
}
