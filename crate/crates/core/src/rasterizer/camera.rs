use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::field_io::Intrinsics;

/// World-to-camera transform for a camera at `eye` looking at `target` (OpenCV axes).
///
/// Falls back to another reference axis when the view direction is parallel to `up`.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Matrix4<f64> {
    let forward = (target - eye).normalize();
    let mut right = forward.cross(&up);
    if right.norm() < 1e-9 {
        let alt = if forward.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        right = forward.cross(&alt);
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let t = -(rot * eye);
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    m
}

/// Pinhole intrinsics with the principal point at the image center.
pub fn intrinsics_from_fov(width: u32, height: u32, fov_y_degrees: f64) -> Intrinsics {
    let f = 0.5 * height as f64 / (0.5 * fov_y_degrees.to_radians()).tan();
    Intrinsics {
        fx: f,
        fy: f,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
    }
}
