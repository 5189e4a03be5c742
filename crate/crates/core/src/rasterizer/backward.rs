//! Reverse-mode gradients of [`render`](super::render).
//!
//! The forward blend of every tile is recomputed pixel by pixel, then walked
//! back to front. Per-splat partials are accumulated in camera space into a
//! buffer owned by the tile and merged in fixed tile order, so the result
//! does not depend on the number of worker threads.

use rayon::prelude::*;

use super::{pixel_ray, prepare, tile_bounds, Hit, Prepared, ProjectedSplat, TRANSMITTANCE_MIN};
use crate::geometry::{normalize_vjp, rotation_matrix_vjp, Camera, Mat3, Vec3};
use crate::scene::SceneModel;
use crate::sh;

/// Cotangents of the rendered channels; `None` means zero. Layouts match the
/// corresponding [`RenderOutput`](super::RenderOutput) images.
#[derive(Debug, Clone, Default)]
pub struct OutputGrads {
    pub color: Option<Vec<f64>>,
    pub feature: Option<Vec<f64>>,
    pub depth: Option<Vec<f64>>,
    pub normal: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub final_transmittance: Option<Vec<f64>>,
}

/// Gradient of a scalar w.r.t. one primitive, field by field.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatGrad {
    pub center: Vec3,
    pub rotation: [f64; 4],
    pub log_scale: [f64; 2],
    pub opacity_logit: f64,
    pub sh: Vec<f64>,
    pub feature: Vec<f64>,
}

impl SplatGrad {
    pub fn zeros(n_sh: usize, d_f: usize) -> Self {
        Self {
            center: Vec3::zeros(),
            rotation: [0.0; 4],
            log_scale: [0.0; 2],
            opacity_logit: 0.0,
            sh: vec![0.0; n_sh],
            feature: vec![0.0; d_f],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.center.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.sh.iter().all(|v| v.is_finite())
            && self.feature.iter().all(|v| v.is_finite())
    }

    /// Visits every scalar in field order.
    pub fn for_each(&self, mut f: impl FnMut(f64)) {
        self.center.iter().for_each(|&v| f(v));
        self.rotation.iter().for_each(|&v| f(v));
        self.log_scale.iter().for_each(|&v| f(v));
        f(self.opacity_logit);
        self.sh.iter().for_each(|&v| f(v));
        self.feature.iter().for_each(|&v| f(v));
    }
}

/// Gradients for every primitive of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub primitives: Vec<SplatGrad>,
}

impl ParamGradients {
    pub fn zeros(scene: &SceneModel) -> Self {
        let n_sh = 3 * sh::coeff_count(scene.sh_degree);
        Self {
            primitives: vec![SplatGrad::zeros(n_sh, scene.feature_dim()); scene.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.primitives.iter().all(SplatGrad::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for g in &self.primitives {
            g.for_each(|v| m = m.max(v.abs()));
        }
        m
    }
}

// Layout of one camera-space accumulator record.
const G_P: usize = 0;
const G_AU: usize = 3;
const G_AV: usize = 6;
const G_N: usize = 9;
const G_LOGS: usize = 12;
const G_LOGIT: usize = 14;
const G_COLOR: usize = 15;
const G_FEAT: usize = 18;

struct PixelGrads<'a> {
    color: [f64; 3],
    feature: &'a [f64],
    depth_acc: f64,
    normal: [f64; 3],
    weight: f64,
    transmittance: f64,
}

fn slice_at(v: &Option<Vec<f64>>, i: usize, n: usize) -> Option<&[f64]> {
    v.as_deref().map(|s| &s[i * n..(i + 1) * n])
}

fn backward_tile(scene: &SceneModel, camera: &Camera, prep: &Prepared, grads: &OutputGrads, tile: usize, zero_feat: &[f64]) -> Vec<f64> {
    let d_f = scene.feature_dim();
    let stride = G_FEAT + d_f;
    let list = &prep.tiles[tile];
    let mut acc = vec![0.0; list.len() * stride];
    if list.is_empty() {
        return acc;
    }
    let (x0, y0, x1, y1) = tile_bounds(tile, prep.tiles_x, camera);
    let w = camera.width();
    let bg = scene.background;
    let mut hits: Vec<(usize, Hit, f64)> = Vec::with_capacity(64);

    for y in y0..y1 {
        for x in x0..x1 {
            let pix = y * w + x;
            let (ray, ray_norm) = pixel_ray(camera, x, y);

            // Forward replay.
            hits.clear();
            let mut t = 1.0;
            let mut depth_acc = 0.0;
            for (local, &j) in list.iter().enumerate() {
                let s = &prep.splats[j as usize];
                if !s.covers(x, y) {
                    continue;
                }
                let Some(hit) = s.hit(&ray, ray_norm) else { continue };
                hits.push((local, hit, t));
                depth_acc += t * hit.alpha * hit.z;
                t *= 1.0 - hit.alpha;
                if t < TRANSMITTANCE_MIN {
                    break;
                }
            }
            if hits.is_empty() {
                continue;
            }
            let weight = 1.0 - t;

            let mut g = PixelGrads {
                color: slice_at(&grads.color, pix, 3).map_or([0.0; 3], |s| [s[0], s[1], s[2]]),
                feature: slice_at(&grads.feature, pix, d_f).unwrap_or(zero_feat),
                depth_acc: 0.0,
                normal: slice_at(&grads.normal, pix, 3).map_or([0.0; 3], |s| [s[0], s[1], s[2]]),
                weight: grads.weight.as_ref().map_or(0.0, |v| v[pix]),
                transmittance: grads.final_transmittance.as_ref().map_or(0.0, |v| v[pix]),
            };
            // depth = depth_acc / weight
            if let Some(gd) = grads.depth.as_ref().map(|v| v[pix]) {
                if weight > 0.0 {
                    g.depth_acc = gd / weight;
                    g.weight -= gd * depth_acc / (weight * weight);
                }
            }
            // Skip pixels with an all-zero cotangent.
            if g.color == [0.0; 3]
                && g.normal == [0.0; 3]
                && g.depth_acc == 0.0
                && g.weight == 0.0
                && g.transmittance == 0.0
                && g.feature.iter().all(|v| *v == 0.0)
            {
                continue;
            }

            // Suffix sum of everything blended behind the current contribution,
            // plus the background term, each dotted with its cotangent.
            let mut suffix = t * (g.color[0] * bg[0] + g.color[1] * bg[1] + g.color[2] * bg[2] + g.transmittance);
            for &(local, hit, t_i) in hits.iter().rev() {
                let s = &prep.splats[list[local] as usize];
                let feat = &scene.primitives[s.index].feature;
                let mut g_dot_v = g.weight + g.depth_acc * hit.z;
                for c in 0..3 {
                    g_dot_v += g.color[c] * s.color[c] + g.normal[c] * s.flip * s.normal[c];
                }
                for (a, b) in g.feature.iter().zip(feat) {
                    g_dot_v += a * b;
                }
                let contrib = t_i * hit.alpha;
                let g_alpha = t_i * g_dot_v - suffix / (1.0 - hit.alpha);
                suffix += contrib * g_dot_v;

                let rec = &mut acc[local * stride..(local + 1) * stride];
                for c in 0..3 {
                    rec[G_COLOR + c] += contrib * g.color[c];
                    rec[G_N + c] += contrib * s.flip * g.normal[c];
                }
                for (r, gf) in rec[G_FEAT..].iter_mut().zip(g.feature) {
                    *r += contrib * gf;
                }
                let g_z_direct = contrib * g.depth_acc;
                let (g_u, g_v) = if hit.clamped {
                    (0.0, 0.0)
                } else {
                    rec[G_LOGIT] += g_alpha * hit.alpha * (1.0 - s.opacity);
                    (-g_alpha * hit.alpha * hit.u, -g_alpha * hit.alpha * hit.v)
                };
                accumulate_geometry(rec, s, &ray, hit, g_u, g_v, g_z_direct);
            }
        }
    }
    acc
}

/// Chain rule from `(u, v, z)` of one intersection to the camera-space
/// center, tangent axes, normal and log-scales.
#[inline]
fn accumulate_geometry(rec: &mut [f64], s: &ProjectedSplat, ray: &Vec3, hit: Hit, g_u: f64, g_v: f64, g_z_direct: f64) {
    let delta = ray * hit.z - s.p;
    let inv_su = 1.0 / s.scale[0];
    let inv_sv = 1.0 / s.scale[1];
    let g_delta = s.axis_u * (g_u * inv_su) + s.axis_v * (g_v * inv_sv);
    let denom = s.normal.dot(ray);
    let g_z = g_z_direct + g_delta.dot(ray);
    let g_p = -g_delta + s.normal * (g_z / denom);
    let g_n = -delta * (g_z / denom);
    for c in 0..3 {
        rec[G_P + c] += g_p[c];
        rec[G_AU + c] += g_u * inv_su * delta[c];
        rec[G_AV + c] += g_v * inv_sv * delta[c];
        rec[G_N + c] += g_n[c];
    }
    rec[G_LOGS] -= g_u * hit.u;
    rec[G_LOGS + 1] -= g_v * hit.v;
}

/// Exact reverse-mode gradients of [`render`](super::render) w.r.t. every
/// primitive field, given cotangents of the output channels.
pub fn render_backward(scene: &SceneModel, camera: &Camera, grads: &OutputGrads) -> ParamGradients {
    let prep = prepare(scene, camera);
    let d_f = scene.feature_dim();
    let stride = G_FEAT + d_f;
    let zero_feat = vec![0.0; d_f];

    let per_tile: Vec<Vec<f64>> = (0..prep.tiles.len())
        .into_par_iter()
        .map(|t| backward_tile(scene, camera, &prep, grads, t, &zero_feat))
        .collect();

    // Merge in tile order, keyed by position in the sorted splat list.
    let mut merged = vec![0.0; prep.splats.len() * stride];
    for (tile, acc) in per_tile.iter().enumerate() {
        for (local, &j) in prep.tiles[tile].iter().enumerate() {
            let dst = &mut merged[j as usize * stride..(j as usize + 1) * stride];
            for (d, s) in dst.iter_mut().zip(&acc[local * stride..(local + 1) * stride]) {
                *d += s;
            }
        }
    }

    let mut out = ParamGradients::zeros(scene);
    let rw = camera.rotation_matrix();
    let rwt = rw.transpose();
    for (j, s) in prep.splats.iter().enumerate() {
        let rec = &merged[j * stride..(j + 1) * stride];
        let prim = &scene.primitives[s.index];
        let g = &mut out.primitives[s.index];
        let v3 = |o: usize| Vec3::new(rec[o], rec[o + 1], rec[o + 2]);

        let mut g_center = rwt * v3(G_P);

        // Camera-space axes are columns of rw * R(q).
        let g_r = Mat3::from_columns(&[rwt * v3(G_AU), rwt * v3(G_AV), rwt * v3(G_N)]);
        let q_unit = prim.rotation.normalized();
        let g_unit = rotation_matrix_vjp(q_unit, &g_r);
        g.rotation = normalize_vjp(prim.rotation, g_unit);

        g.log_scale = [rec[G_LOGS], rec[G_LOGS + 1]];
        g.opacity_logit = rec[G_LOGIT];
        g.feature.copy_from_slice(&rec[G_FEAT..]);

        let g_color = [rec[G_COLOR], rec[G_COLOR + 1], rec[G_COLOR + 2]];
        let g_dir = sh::eval_color_vjp(&prim.sh, scene.sh_degree, s.view_dir, g_color, &mut g.sh);
        if s.view_dist > 0.0 {
            g_center += (g_dir - s.view_dir * s.view_dir.dot(&g_dir)) / s.view_dist;
        }
        g.center = g_center;
    }
    debug_assert!(out.is_finite(), "non-finite render gradient");
    out
}
