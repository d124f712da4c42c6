//! EWA projection of 3D Gaussians to screen-space splats.

use nalgebra::{Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector3};
use rayon::prelude::*;

use super::sh::eval_sh;
use crate::error::{Error, Result};
use crate::field_io::{Frame, GaussianField};

/// Low-pass floor added to both diagonal entries of the screen covariance (px^2).
pub const COV2D_FLOOR: f64 = 0.3;
/// Splats fainter than this at a pixel are skipped.
pub const ALPHA_MIN: f32 = 1.0 / 255.0;
pub const ALPHA_MAX: f32 = 0.99;
/// Compositing stops once transmittance falls below this.
pub const TRANSMITTANCE_MIN: f32 = 1e-4;
const RADIUS_MARGIN: f64 = 0.5;

/// One Gaussian splatted into a frame. Pixel centers sit at integer + 0.5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    pub index: u32,
    pub mean: [f32; 2],
    /// Symmetric 2x2 covariance `(xx, xy, yy)` including the low-pass floor.
    pub cov: [f32; 3],
    /// Inverse of `cov`, `(xx, xy, yy)`.
    pub conic: [f32; 3],
    pub depth: f32,
    pub color: [f32; 3],
    pub opacity: f32,
    pub radius: f32,
}

impl ProjectedGaussian {
    /// Clamped opacity of the splat at pixel center `(px, py)`, before the 1/255 skip test.
    #[inline]
    pub fn alpha_at(&self, px: f32, py: f32) -> f32 {
        let dx = px - self.mean[0];
        let dy = py - self.mean[1];
        let power = -0.5 * (self.conic[0] * dx * dx + self.conic[2] * dy * dy) - self.conic[1] * dx * dy;
        (self.opacity * power.exp()).min(ALPHA_MAX)
    }

    /// Eigenvalues of the screen covariance, largest first.
    pub fn cov_eigenvalues(&self) -> (f64, f64) {
        let [a, b, c] = self.cov.map(f64::from);
        let mid = 0.5 * (a + c);
        let disc = (mid * mid - (a * c - b * b)).max(0.0).sqrt();
        (mid + disc, mid - disc)
    }
}

pub fn rotation_matrix(q: [f32; 4]) -> Matrix3<f64> {
    let q = Quaternion::new(q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64);
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

/// World-space covariance `R S S^T R^T`.
pub fn covariance_3d(scale: [f32; 3], rotation: [f32; 4]) -> Matrix3<f64> {
    let r = rotation_matrix(rotation);
    let m = r * Matrix3::from_diagonal(&Vector3::new(scale[0] as f64, scale[1] as f64, scale[2] as f64));
    m * m.transpose()
}

/// Projects every visible Gaussian of `field` into `frame`.
///
/// Gaussians at or behind the `near` plane, or whose footprint misses the
/// viewport, are dropped. Output keeps field order.
pub fn project_gaussians(field: &GaussianField, frame: &Frame, near: f64) -> Result<Vec<ProjectedGaussian>> {
    if !(near > 0.0) {
        return Err(Error::precondition(format!("near plane must be positive, got {near}")));
    }
    let rot = frame.rotation();
    let trans = frame.translation();
    let center = frame.center();
    let k = frame.intrinsics;
    let (w, h) = (frame.width as f64, frame.height as f64);

    let out = (0..field.len())
        .into_par_iter()
        .filter_map(|i| {
            let p_world = Vector3::from(field.position(i));
            let p = rot * p_world + trans;
            if p.z <= near {
                return None;
            }
            let opacity = field.opacities()[i];
            if opacity < ALPHA_MIN {
                return None;
            }
            let inv_z = 1.0 / p.z;
            let mean = [k.fx * p.x * inv_z + k.cx, k.fy * p.y * inv_z + k.cy];
            let jac = Matrix2x3::new(
                k.fx * inv_z, 0.0, -k.fx * p.x * inv_z * inv_z,
                0.0, k.fy * inv_z, -k.fy * p.y * inv_z * inv_z,
            );
            let t = jac * rot;
            let sigma = covariance_3d(field.scales()[i], field.rotations()[i]);
            let cov = t * sigma * t.transpose();
            let (a, b, c) = (cov[(0, 0)] + COV2D_FLOOR, cov[(0, 1)], cov[(1, 1)] + COV2D_FLOOR);
            let det = a * c - b * b;
            if !(det > 0.0) {
                return None;
            }
            let mid = 0.5 * (a + c);
            let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
            // Beyond this Mahalanobis radius the splat's alpha drops under 1/255.
            let cutoff = (2.0 * (255.0 * opacity as f64).ln()).sqrt().max(3.0);
            let radius = cutoff * lambda_max.sqrt() + RADIUS_MARGIN;
            if mean[0] + radius < 0.5
                || mean[0] - radius > w - 0.5
                || mean[1] + radius < 0.5
                || mean[1] - radius > h - 0.5
            {
                return None;
            }
            let dir = (p_world - center).normalize();
            Some(ProjectedGaussian {
                index: i as u32,
                mean: [mean[0] as f32, mean[1] as f32],
                cov: [a as f32, b as f32, c as f32],
                conic: [(c / det) as f32, (-b / det) as f32, (a / det) as f32],
                depth: p.z as f32,
                color: eval_sh(field.sh(i), &dir),
                opacity,
                radius: radius as f32,
            })
        })
        .collect();
    Ok(out)
}

/// Stable ascending sort on depth, ties broken by Gaussian index.
pub fn sort_by_depth(projected: &mut [ProjectedGaussian]) {
    projected.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
}

pub fn is_depth_sorted(projected: &[ProjectedGaussian]) -> bool {
    projected.windows(2).all(|w| w[0].depth <= w[1].depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_io::Intrinsics;
    use crate::rasterizer::sh::rgb_to_sh_dc;
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};

    /// Box-Muller standard normal.
    fn normal<R: Rng>(rng: &mut R) -> f64 {
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    fn frame(w: u32, h: u32, f: f64) -> Frame {
        Frame::camera_only(
            "t",
            w,
            h,
            Intrinsics { fx: f, fy: f, cx: w as f64 / 2.0, cy: h as f64 / 2.0 },
            Matrix4::identity(),
        )
    }

    fn single(pos: [f32; 3], scale: f32, opacity: f32) -> GaussianField {
        GaussianField::new(
            vec![pos],
            vec![[scale; 3]],
            vec![[1.0, 0.0, 0.0, 0.0]],
            vec![opacity],
            rgb_to_sh_dc([1.0, 0.0, 0.0]).to_vec(),
            1,
        )
        .unwrap()
    }

    #[test]
    fn on_axis_projects_to_principal_point() {
        let f = single([0.0, 0.0, 5.0], 0.1, 0.9);
        let p = project_gaussians(&f, &frame(64, 48, 50.0), 0.01).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].mean, [32.0, 24.0]);
        assert_eq!(p[0].depth, 5.0);
        assert!((p[0].color[0] - 1.0).abs() < 1e-6 && p[0].color[1].abs() < 1e-6);
    }

    #[test]
    fn behind_near_plane_is_culled() {
        let f = single([0.0, 0.0, 0.05], 0.01, 0.9);
        assert!(project_gaussians(&f, &frame(64, 64, 50.0), 0.1).unwrap().is_empty());
        let behind = single([0.0, 0.0, -3.0], 0.01, 0.9);
        assert!(project_gaussians(&behind, &frame(64, 64, 50.0), 0.1).unwrap().is_empty());
        assert!(project_gaussians(&f, &frame(64, 64, 50.0), 0.0).is_err());
    }

    #[test]
    fn off_screen_is_culled() {
        let f = single([100.0, 0.0, 5.0], 0.01, 0.9);
        assert!(project_gaussians(&f, &frame(64, 64, 50.0), 0.01).unwrap().is_empty());
    }

    #[test]
    fn radius_covers_three_sigma_and_alpha_cutoff() {
        let f = single([0.2, -0.1, 4.0], 0.3, 0.99);
        let p = project_gaussians(&f, &frame(64, 64, 60.0), 0.01).unwrap()[0];
        let (l_max, l_min) = p.cov_eigenvalues();
        assert!(l_min > 0.0);
        assert!(p.radius as f64 >= 3.0 * l_max.sqrt());
        // Sample the circle of radius r: alpha must already be below the skip threshold.
        for k in 0..64 {
            let a = k as f32 / 64.0 * std::f32::consts::TAU;
            let r = p.radius;
            let alpha = p.alpha_at(p.mean[0] + r * a.cos(), p.mean[1] + r * a.sin());
            assert!(alpha < ALPHA_MIN, "alpha {alpha} at angle {a}");
        }
    }

    /// Screen covariance of an isotropic Gaussian, checked against pushing
    /// 1e5 samples through the exact pinhole projection.
    #[test]
    fn covariance_matches_monte_carlo_projection() {
        let (s, z, focal) = (0.02f64, 4.0f64, 300.0f64);
        let g = single([0.1, -0.05, z as f32], s as f32, 0.9);
        let fr = frame(256, 256, focal);
        let p = project_gaussians(&g, &fr, 0.01).unwrap()[0];

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let x = 0.1 + s * normal(&mut rng);
            let y = -0.05 + s * normal(&mut rng);
            let zz = z + s * normal(&mut rng);
            samples.push((focal * x / zz + 128.0, focal * y / zz + 128.0));
        }
        let mx = samples.iter().map(|v| v.0).sum::<f64>() / n as f64;
        let my = samples.iter().map(|v| v.1).sum::<f64>() / n as f64;
        let mut c = [0f64; 3];
        for (u, v) in &samples {
            c[0] += (u - mx) * (u - mx);
            c[1] += (u - mx) * (v - my);
            c[2] += (v - my) * (v - my);
        }
        let c = c.map(|v| v / (n - 1) as f64);
        let expected_iso = (focal * s / z).powi(2);
        // Ratio check on the diagonal against both the Monte-Carlo and closed form.
        for (got, mc) in [(p.cov[0] as f64, c[0]), (p.cov[2] as f64, c[2])] {
            let target = mc + COV2D_FLOOR;
            assert!((got - target).abs() / target < 0.01, "got {got}, monte-carlo {target}");
            assert!((got - expected_iso - COV2D_FLOOR).abs() / got < 0.01);
        }
        assert!((p.cov[1] as f64 - c[1]).abs() < 0.01 * expected_iso);
    }

    #[test]
    fn sort_orders_by_depth_then_index() {
        let mk = |index, depth| ProjectedGaussian {
            index,
            mean: [0.0; 2],
            cov: [1.0, 0.0, 1.0],
            conic: [1.0, 0.0, 1.0],
            depth,
            color: [0.0; 3],
            opacity: 0.5,
            radius: 3.0,
        };
        let mut v = vec![mk(0, 3.0), mk(1, 1.0), mk(2, 2.0)];
        sort_by_depth(&mut v);
        assert_eq!(v.iter().map(|p| p.depth).collect::<Vec<_>>(), [1.0, 2.0, 3.0]);
        let mut ties = vec![mk(5, 1.0), mk(2, 1.0)];
        sort_by_depth(&mut ties);
        assert_eq!(ties.iter().map(|p| p.index).collect::<Vec<_>>(), [2, 5]);
        let before = v.clone();
        sort_by_depth(&mut v);
        assert_eq!(v, before);
        assert!(is_depth_sorted(&v));
    }
}
