//! Real spherical harmonics up to degree 3, in the 3DGS basis and sign convention.

use nalgebra::Vector3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Evaluates RGB color along unit direction `dir`, offset by 0.5 and clamped to [0, 1].
///
/// `coeffs` is `[coefficient][channel]` with 1, 4, 9 or 16 coefficients.
pub fn eval_sh(coeffs: &[f32], dir: &Vector3<f64>) -> [f32; 3] {
    let k = coeffs.len() / 3;
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut basis = [0f64; 16];
    basis[0] = SH_C0;
    if k > 1 {
        basis[1] = -SH_C1 * y;
        basis[2] = SH_C1 * z;
        basis[3] = -SH_C1 * x;
    }
    if k > 4 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        basis[4] = SH_C2[0] * x * y;
        basis[5] = SH_C2[1] * y * z;
        basis[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        basis[7] = SH_C2[3] * x * z;
        basis[8] = SH_C2[4] * (xx - yy);
        if k > 9 {
            basis[9] = SH_C3[0] * y * (3.0 * xx - yy);
            basis[10] = SH_C3[1] * x * y * z;
            basis[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            basis[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            basis[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            basis[14] = SH_C3[5] * z * (xx - yy);
            basis[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
    }
    let mut rgb = [0f32; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        let v: f64 = (0..k).map(|i| basis[i] * coeffs[i * 3 + c] as f64).sum();
        *out = (v + 0.5).clamp(0.0, 1.0) as f32;
    }
    rgb
}

/// DC coefficient that renders as `rgb` regardless of view direction.
pub fn rgb_to_sh_dc(rgb: [f32; 3]) -> [f32; 3] {
    rgb.map(|c| ((c as f64 - 0.5) / SH_C0) as f32)
}
