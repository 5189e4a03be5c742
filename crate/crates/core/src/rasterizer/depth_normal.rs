//! Normals from a rendered depth map: unproject, take image-space
//! differences, cross, normalize.

use crate::geometry::{Camera, Vec3};
use crate::image::Image;

/// Difference stencil along one image axis: `(plus, minus, scale)` such that
/// the derivative is `scale * (P[plus] - P[minus])`.
type Stencil = (usize, usize, f64);

fn stencil(valid: &[bool], idx: usize, pos: usize, len: usize, step: usize) -> Option<Stencil> {
    let prev = (pos > 0 && valid[idx - step]).then(|| idx - step);
    let next = (pos + 1 < len && valid[idx + step]).then(|| idx + step);
    match (prev, next) {
        (Some(p), Some(n)) => Some((n, p, 0.5)),
        (None, Some(n)) => Some((n, idx, 1.0)),
        (Some(p), None) => Some((idx, p, 1.0)),
        (None, None) => None,
    }
}

struct Geometry {
    points: Vec<Vec3>,
    rays: Vec<Vec3>,
    valid: Vec<bool>,
}

fn unproject(depth: &Image, weight: &Image, camera: &Camera) -> Geometry {
    let (w, h) = (depth.width, depth.height);
    let mut points = Vec::with_capacity(w * h);
    let mut rays = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let r = camera.pixel_ray(x as f64 + 0.5, y as f64 + 0.5);
            points.push(r * depth.data[y * w + x]);
            rays.push(r);
        }
    }
    let valid = weight.data.iter().map(|&v| v > 0.0).collect();
    Geometry { points, rays, valid }
}

fn tangents(g: &Geometry, w: usize, h: usize, x: usize, y: usize) -> Option<(Stencil, Stencil)> {
    let i = y * w + x;
    if !g.valid[i] {
        return None;
    }
    Some((stencil(&g.valid, i, x, w, 1)?, stencil(&g.valid, i, y, h, w)?))
}

/// Unit camera-space normals of the surface described by `depth`, oriented
/// toward the camera. Pixels with zero `weight`, or without a valid neighbor
/// along either axis, get the zero vector. Interior pixels use central
/// differences; one-sided differences are used at borders and next to
/// zero-weight pixels.
pub fn depth_to_normal(depth: &Image, weight: &Image, camera: &Camera) -> Image {
    let (w, h) = (depth.width, depth.height);
    let g = unproject(depth, weight, camera);
    let mut out = Image::new(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            let Some((sx, sy)) = tangents(&g, w, h, x, y) else { continue };
            let dx = (g.points[sx.0] - g.points[sx.1]) * sx.2;
            let dy = (g.points[sy.0] - g.points[sy.1]) * sy.2;
            let c = dy.cross(&dx);
            let n = c.norm();
            if n > 1e-30 {
                out.pixel_mut(x, y).copy_from_slice((c / n).as_slice());
            }
        }
    }
    out
}

/// Gradient w.r.t. `depth` of a scalar whose gradient w.r.t. the output of
/// [`depth_to_normal`] is `g_normal`.
pub fn depth_to_normal_vjp(depth: &Image, weight: &Image, camera: &Camera, g_normal: &[f64]) -> Vec<f64> {
    let (w, h) = (depth.width, depth.height);
    let g = unproject(depth, weight, camera);
    let mut g_points = vec![Vec3::zeros(); w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let gn = Vec3::new(g_normal[i * 3], g_normal[i * 3 + 1], g_normal[i * 3 + 2]);
            if gn == Vec3::zeros() {
                continue;
            }
            let Some((sx, sy)) = tangents(&g, w, h, x, y) else { continue };
            let dx = (g.points[sx.0] - g.points[sx.1]) * sx.2;
            let dy = (g.points[sy.0] - g.points[sy.1]) * sy.2;
            let c = dy.cross(&dx);
            let len = c.norm();
            if len <= 1e-30 {
                continue;
            }
            let n = c / len;
            let g_c = (gn - n * n.dot(&gn)) / len;
            let g_dy = dx.cross(&g_c);
            let g_dx = g_c.cross(&dy);
            g_points[sx.0] += g_dx * sx.2;
            g_points[sx.1] -= g_dx * sx.2;
            g_points[sy.0] += g_dy * sy.2;
            g_points[sy.1] -= g_dy * sy.2;
        }
    }
    g_points.iter().zip(&g.rays).map(|(gp, r)| gp.dot(r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Intrinsics, RigidTransform};

    fn camera(w: usize, h: usize) -> Camera {
        let k = Intrinsics {
            fx: 20.0,
            fy: 20.0,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
        };
        Camera::new(k, RigidTransform::IDENTITY).unwrap()
    }

    /// Depth of the plane `n . X = d` along each pixel ray.
    fn plane_depth(cam: &Camera, n: Vec3, d: f64) -> Image {
        let (w, h) = (cam.width(), cam.height());
        let mut img = Image::new(w, h, 1);
        for y in 0..h {
            for x in 0..w {
                let r = cam.pixel_ray(x as f64 + 0.5, y as f64 + 0.5);
                img.data[y * w + x] = d / n.dot(&r);
            }
        }
        img
    }

    #[test]
    fn fronto_parallel_plane() {
        let cam = camera(12, 10);
        let depth = Image::filled(12, 10, 1, 2.0);
        let weight = Image::filled(12, 10, 1, 1.0);
        let n = depth_to_normal(&depth, &weight, &cam);
        for y in 0..10 {
            for x in 0..12 {
                let p = n.pixel(x, y);
                assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12 && (p[2] + 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn plane_tilted_about_x() {
        let cam = camera(16, 16);
        let (s, c) = std::f64::consts::FRAC_PI_4.sin_cos();
        let normal = Vec3::new(0.0, s, -c);
        let depth = plane_depth(&cam, normal, -c * 2.0);
        let weight = Image::filled(16, 16, 1, 1.0);
        let out = depth_to_normal(&depth, &weight, &cam);
        for y in 1..15 {
            for x in 1..15 {
                let p = out.pixel(x, y);
                assert!((p[1].abs() - p[2].abs()).abs() < 1e-3);
                assert!((Vec3::new(p[0], p[1], p[2]) - normal).norm() < 1e-3);
            }
        }
    }

    #[test]
    fn zero_weight_gives_zero_normals() {
        let cam = camera(8, 8);
        let depth = Image::filled(8, 8, 1, 1.0);
        let mut weight = Image::filled(8, 8, 1, 1.0);
        for x in 0..8 {
            for y in 0..4 {
                weight.data[y * 8 + x] = 0.0;
            }
        }
        let out = depth_to_normal(&depth, &weight, &cam);
        assert!(out.data[..4 * 8 * 3].iter().all(|v| *v == 0.0));
        assert!(out.pixel(3, 6)[2] < -0.99);
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let cam = camera(7, 6);
        let mut depth = Image::new(7, 6, 1);
        for (i, d) in depth.data.iter_mut().enumerate() {
            *d = 1.5 + 0.1 * (i as f64 * 0.7).sin() + 0.02 * i as f64;
        }
        let mut weight = Image::filled(7, 6, 1, 1.0);
        weight.data[10] = 0.0;
        weight.data[0] = 0.0;
        let g_out: Vec<f64> = (0..7 * 6 * 3).map(|i| ((i as f64) * 1.3).cos()).collect();
        let f = |d: &Image| -> f64 {
            depth_to_normal(d, &weight, &cam).data.iter().zip(&g_out).map(|(a, b)| a * b).sum()
        };
        let an = depth_to_normal_vjp(&depth, &weight, &cam, &g_out);
        let h = 1e-6;
        for i in 0..depth.data.len() {
            let mut a = depth.clone();
            let mut b = depth.clone();
            a.data[i] += h;
            b.data[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((fd - an[i]).abs() < 1e-6 * (1.0 + fd.abs()), "pixel {i}: {fd} vs {}", an[i]);
        }
    }
}
