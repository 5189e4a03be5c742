//! Real spherical harmonics up to degree 3 (the usual splatting basis and
//! constants), evaluated per primitive along the camera-to-center direction.

use crate::geometry::Vec3;

pub const MAX_DEGREE: usize = 3;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of coefficients per color channel.
pub fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// DC coefficient that reproduces `rgb` for every view direction.
pub fn rgb_to_dc(rgb: f64) -> f64 {
    (rgb - 0.5) / C0
}

fn basis(degree: usize, d: Vec3, out: &mut [f64; 16], grad: Option<&mut [[f64; 3]; 16]>) {
    let (x, y, z) = (d.x, d.y, d.z);
    out[0] = C0;
    if degree >= 1 {
        out[1] = -C1 * y;
        out[2] = C1 * z;
        out[3] = -C1 * x;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    if degree >= 2 {
        out[4] = C2[0] * x * y;
        out[5] = C2[1] * y * z;
        out[6] = C2[2] * (2.0 * zz - xx - yy);
        out[7] = C2[3] * x * z;
        out[8] = C2[4] * (xx - yy);
    }
    if degree >= 3 {
        out[9] = C3[0] * y * (3.0 * xx - yy);
        out[10] = C3[1] * x * y * z;
        out[11] = C3[2] * y * (4.0 * zz - xx - yy);
        out[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        out[13] = C3[4] * x * (4.0 * zz - xx - yy);
        out[14] = C3[5] * z * (xx - yy);
        out[15] = C3[6] * x * (xx - 3.0 * yy);
    }
    let Some(g) = grad else { return };
    g[0] = [0.0; 3];
    if degree >= 1 {
        g[1] = [0.0, -C1, 0.0];
        g[2] = [0.0, 0.0, C1];
        g[3] = [-C1, 0.0, 0.0];
    }
    if degree >= 2 {
        g[4] = [C2[0] * y, C2[0] * x, 0.0];
        g[5] = [0.0, C2[1] * z, C2[1] * y];
        g[6] = [-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z];
        g[7] = [C2[3] * z, 0.0, C2[3] * x];
        g[8] = [2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0];
    }
    if degree >= 3 {
        g[9] = [6.0 * C3[0] * x * y, C3[0] * (3.0 * xx - 3.0 * yy), 0.0];
        g[10] = [C3[1] * y * z, C3[1] * x * z, C3[1] * x * y];
        g[11] = [
            -2.0 * C3[2] * x * y,
            C3[2] * (4.0 * zz - xx - 3.0 * yy),
            8.0 * C3[2] * y * z,
        ];
        g[12] = [
            -6.0 * C3[3] * x * z,
            -6.0 * C3[3] * y * z,
            C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ];
        g[13] = [
            C3[4] * (4.0 * zz - 3.0 * xx - yy),
            -2.0 * C3[4] * x * y,
            8.0 * C3[4] * x * z,
        ];
        g[14] = [2.0 * C3[5] * x * z, -2.0 * C3[5] * y * z, C3[5] * (xx - yy)];
        g[15] = [C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * C3[6] * x * y, 0.0];
    }
}

/// RGB color seen along unit direction `dir`, clamped to `[0, 1]`.
/// `coeffs` is laid out coefficient-major: `coeffs[k * 3 + channel]`.
pub fn eval_color(coeffs: &[f64], degree: usize, dir: Vec3) -> [f64; 3] {
    let mut y = [0.0; 16];
    basis(degree, dir, &mut y, None);
    let n = coeff_count(degree);
    let mut c = [0.5; 3];
    for k in 0..n {
        for ch in 0..3 {
            c[ch] += y[k] * coeffs[k * 3 + ch];
        }
    }
    c.map(|v| v.clamp(0.0, 1.0))
}

/// Vector-Jacobian product of [`eval_color`]. Accumulates into `g_coeffs`
/// and returns the gradient w.r.t. `dir` (treated as an unconstrained vector).
pub fn eval_color_vjp(coeffs: &[f64], degree: usize, dir: Vec3, g_color: [f64; 3], g_coeffs: &mut [f64]) -> Vec3 {
    let mut y = [0.0; 16];
    let mut dy = [[0.0; 3]; 16];
    basis(degree, dir, &mut y, Some(&mut dy));
    let n = coeff_count(degree);
    let mut raw = [0.5; 3];
    for k in 0..n {
        for ch in 0..3 {
            raw[ch] += y[k] * coeffs[k * 3 + ch];
        }
    }
    let g: [f64; 3] = std::array::from_fn(|ch| if raw[ch] > 0.0 && raw[ch] < 1.0 { g_color[ch] } else { 0.0 });
    let mut g_dir = Vec3::zeros();
    for k in 0..n {
        let mut s = 0.0;
        for ch in 0..3 {
            g_coeffs[k * 3 + ch] += y[k] * g[ch];
            s += coeffs[k * 3 + ch] * g[ch];
        }
        g_dir += Vec3::new(dy[k][0], dy[k][1], dy[k][2]) * s;
    }
    g_dir
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_only_is_view_independent() {
        let coeffs: Vec<f64> = [0.2, 0.5, 0.9].iter().map(|&c| rgb_to_dc(c)).collect();
        for d in [Vec3::x(), Vec3::new(0.3, -0.4, 0.866).normalize()] {
            let c = eval_color(&coeffs, 0, d);
            assert!((c[0] - 0.2).abs() < 1e-15 && (c[1] - 0.5).abs() < 1e-15 && (c[2] - 0.9).abs() < 1e-15);
        }
    }

    #[test]
    fn vjp_matches_finite_differences_all_degrees() {
        for degree in 0..=MAX_DEGREE {
            let n = coeff_count(degree) * 3;
            let coeffs: Vec<f64> = (0..n).map(|i| 0.05 * ((i as f64 * 1.7).sin())).collect();
            let dir = Vec3::new(0.3, -0.5, 0.81);
            let g_color = [0.7, -0.4, 1.1];
            let f = |c: &[f64], d: Vec3| -> f64 {
                let col = eval_color(c, degree, d);
                col.iter().zip(&g_color).map(|(a, b)| a * b).sum()
            };
            let mut g_coeffs = vec![0.0; n];
            let g_dir = eval_color_vjp(&coeffs, degree, dir, g_color, &mut g_coeffs);
            let h = 1e-6;
            for i in 0..n {
                let mut a = coeffs.clone();
                let mut b = coeffs.clone();
                a[i] += h;
                b[i] -= h;
                let fd = (f(&a, dir) - f(&b, dir)) / (2.0 * h);
                assert!((fd - g_coeffs[i]).abs() < 1e-8, "deg {degree} coeff {i}");
            }
            for k in 0..3 {
                let mut a = dir;
                let mut b = dir;
                a[k] += h;
                b[k] -= h;
                let fd = (f(&coeffs, a) - f(&coeffs, b)) / (2.0 * h);
                assert!((fd - g_dir[k]).abs() < 1e-8, "deg {degree} dir {k}: {fd} vs {}", g_dir[k]);
            }
        }
    }

    #[test]
    fn clamped_channels_have_no_gradient() {
        let coeffs = vec![10.0, -10.0, 0.0];
        let mut g = vec![0.0; 3];
        eval_color_vjp(&coeffs, 0, Vec3::z(), [1.0, 1.0, 1.0], &mut g);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 0.0);
        assert!(g[2] > 0.0);
    }
}
