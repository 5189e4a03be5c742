//! Tile-based differentiable rasterizer for oriented Gaussian disks.
//!
//! Each pixel ray is intersected exactly with every disk plane whose screen
//! footprint covers the pixel; contributions are alpha-blended front to back
//! in ascending camera-space center depth. The same blending drives the
//! color, feature, depth, normal and weight channels.

mod backward;
mod depth_normal;

use rayon::prelude::*;

pub use backward::{render_backward, OutputGrads, ParamGradients, SplatGrad};
pub use depth_normal::{depth_to_normal, depth_to_normal_vjp};

use crate::geometry::{Camera, Vec3, NEAR_PLANE};
use crate::image::Image;
use crate::scene::{SceneModel, SplatPrimitive};
use crate::sh;

pub const TILE_SIZE: usize = 16;
/// Contributions below this opacity are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Per-contribution opacity is clamped to this value.
pub const ALPHA_MAX: f64 = 0.999;
/// Blending stops once transmittance falls below this value.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Disk footprint radius in standard deviations.
pub const FOOTPRINT_SIGMA: f64 = 3.0;
/// Rays whose direction cosine with the disk normal is below this are parallel.
pub const PARALLEL_EPS: f64 = 1e-9;

/// Ray-disk intersection in normalized disk coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intersection {
    /// Offset along the first tangent axis, in units of that axis' scale.
    pub u: f64,
    pub v: f64,
    /// Camera-space z of the intersection point.
    pub depth: f64,
}

/// Per-camera data of one primitive, shared by the forward and backward passes.
#[derive(Debug, Clone)]
pub(crate) struct ProjectedSplat {
    pub index: usize,
    /// Center in camera space.
    pub p: Vec3,
    pub axis_u: Vec3,
    pub axis_v: Vec3,
    pub normal: Vec3,
    pub scale: [f64; 2],
    pub u_dir: Vec3,
    pub v_dir: Vec3,
    pub u_off: f64,
    pub v_off: f64,
    pub n_dot_p: f64,
    /// `+1` or `-1`: orientation that makes the normal face the camera.
    pub flip: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Unit direction from the camera center to the primitive, world frame.
    pub view_dir: Vec3,
    pub view_dist: f64,
    /// Inclusive-exclusive pixel bounds `(x0, y0, x1, y1)`.
    pub bbox: (usize, usize, usize, usize),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Hit {
    pub u: f64,
    pub v: f64,
    pub z: f64,
    pub alpha: f64,
    pub clamped: bool,
}

impl ProjectedSplat {
    /// Returns `None` when the center is at or behind the near plane or the
    /// footprint misses the image.
    pub fn new(index: usize, prim: &SplatPrimitive, camera: &Camera, sh_degree: usize) -> Option<Self> {
        let rw = camera.rotation_matrix();
        let p = camera.world_to_camera.apply(prim.center);
        if !(p.z > NEAR_PLANE) || !p.iter().all(|v| v.is_finite()) {
            return None;
        }
        let r = rw * prim.rotation.normalized().to_matrix();
        let axis_u: Vec3 = r.column(0).into_owned();
        let axis_v: Vec3 = r.column(1).into_owned();
        let normal: Vec3 = r.column(2).into_owned();
        let scale = prim.scale();
        let u_dir = axis_u / scale[0];
        let v_dir = axis_v / scale[1];
        let n_dot_p = normal.dot(&p);
        let flip = if n_dot_p > 0.0 { -1.0 } else { 1.0 };

        let bbox = footprint(camera, p, axis_u * scale[0], axis_v * scale[1])?;

        let offset = prim.center - camera.position();
        let view_dist = offset.norm();
        let view_dir = if view_dist > 0.0 { offset / view_dist } else { Vec3::z() };
        let color = sh::eval_color(&prim.sh, sh_degree, view_dir);
        Some(Self {
            index,
            p,
            axis_u,
            axis_v,
            normal,
            scale,
            u_dir,
            v_dir,
            u_off: u_dir.dot(&p),
            v_off: v_dir.dot(&p),
            n_dot_p,
            flip,
            opacity: prim.opacity(),
            color,
            view_dir,
            view_dist,
            bbox,
        })
    }

    /// Exact intersection with the camera-space ray `ray` (z component 1).
    #[inline(always)]
    pub fn intersect(&self, ray: &Vec3, ray_norm: f64) -> Option<(f64, f64, f64)> {
        let denom = self.normal.dot(ray);
        if denom.abs() < PARALLEL_EPS * ray_norm {
            return None;
        }
        let z = self.n_dot_p / denom;
        if !(z > NEAR_PLANE) {
            return None;
        }
        let u = z * self.u_dir.dot(ray) - self.u_off;
        let v = z * self.v_dir.dot(ray) - self.v_off;
        Some((u, v, z))
    }

    #[inline(always)]
    pub fn hit(&self, ray: &Vec3, ray_norm: f64) -> Option<Hit> {
        let (u, v, z) = self.intersect(ray, ray_norm)?;
        let q = u * u + v * v;
        if q > FOOTPRINT_SIGMA * FOOTPRINT_SIGMA {
            return None;
        }
        let raw = self.opacity * (-0.5 * q).exp();
        if raw < ALPHA_MIN {
            return None;
        }
        let clamped = raw > ALPHA_MAX;
        Some(Hit {
            u,
            v,
            z,
            alpha: if clamped { ALPHA_MAX } else { raw },
            clamped,
        })
    }

    #[inline(always)]
    pub fn covers(&self, x: usize, y: usize) -> bool {
        x >= self.bbox.0 && x < self.bbox.2 && y >= self.bbox.1 && y < self.bbox.3
    }
}

/// Conservative pixel bounds of the projected 3-sigma ellipse: the box of the
/// projected corners of its bounding rectangle in the disk plane.
fn footprint(camera: &Camera, p: Vec3, su: Vec3, sv: Vec3) -> Option<(usize, usize, usize, usize)> {
    let (w, h) = (camera.width(), camera.height());
    let k = FOOTPRINT_SIGMA;
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut behind = 0;
    for (a, b) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let c = p + su * (a * k) + sv * (b * k);
        match camera.project_camera_space(c) {
            Some((x, y, _)) => {
                lo[0] = lo[0].min(x);
                lo[1] = lo[1].min(y);
                hi[0] = hi[0].max(x);
                hi[1] = hi[1].max(y);
            }
            None => behind += 1,
        }
    }
    if behind > 0 {
        // The plane crosses the near plane: the projection is unbounded.
        return Some((0, 0, w, h));
    }
    // Pixel (x, y) has its center at (x + 0.5, y + 0.5).
    let x0 = (lo[0] - 0.5).floor().max(0.0);
    let y0 = (lo[1] - 0.5).floor().max(0.0);
    let x1 = ((hi[0] - 0.5).ceil() + 1.0).min(w as f64);
    let y1 = ((hi[1] - 0.5).ceil() + 1.0).min(h as f64);
    if !(x0 < x1 && y0 < y1) {
        return None;
    }
    Some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
}

/// Intersection of the ray through continuous pixel coordinates `pixel` with
/// the plane of `p`, or `None` for parallel rays and hits at or behind the
/// near plane.
pub fn ray_splat_intersect(camera: &Camera, pixel: (f64, f64), p: &SplatPrimitive) -> Option<Intersection> {
    let rw = camera.rotation_matrix();
    let r = rw * p.rotation.normalized().to_matrix();
    let normal: Vec3 = r.column(2).into_owned();
    let center = camera.world_to_camera.apply(p.center);
    let ray = camera.pixel_ray(pixel.0, pixel.1);
    let denom = normal.dot(&ray);
    if denom.abs() < PARALLEL_EPS * ray.norm() {
        return None;
    }
    let z = normal.dot(&center) / denom;
    if !(z > NEAR_PLANE) {
        return None;
    }
    let delta = ray * z - center;
    let scale = p.scale();
    Some(Intersection {
        u: r.column(0).dot(&delta) / scale[0],
        v: r.column(1).dot(&delta) / scale[1],
        depth: z,
    })
}

/// Opacity of `p` at normalized disk coordinates `(u, v)`, clamped to
/// [`ALPHA_MAX`].
pub fn splat_alpha(p: &SplatPrimitive, u: f64, v: f64) -> f64 {
    (p.opacity() * (-0.5 * (u * u + v * v)).exp()).min(ALPHA_MAX)
}

/// All rendered channels for one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// RGB composited over the scene background.
    pub color: Image,
    pub feature: Image,
    /// Blend-weighted intersection depth divided by the accumulated weight;
    /// zero where nothing was hit.
    pub depth: Image,
    /// Blended camera-space normals (not renormalized).
    pub normal: Image,
    pub weight: Image,
    pub final_transmittance: Image,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }
}

pub(crate) struct Prepared {
    pub splats: Vec<ProjectedSplat>,
    pub tiles_x: usize,
    /// Per tile, indices into `splats` in blend order.
    pub tiles: Vec<Vec<u32>>,
}

pub(crate) fn prepare(scene: &SceneModel, camera: &Camera) -> Prepared {
    let mut splats: Vec<ProjectedSplat> = scene
        .primitives
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| ProjectedSplat::new(i, p, camera, scene.sh_degree))
        .collect();
    splats.sort_by(|a, b| a.p.z.total_cmp(&b.p.z).then(a.index.cmp(&b.index)));

    let tiles_x = camera.width().div_ceil(TILE_SIZE);
    let tiles_y = camera.height().div_ceil(TILE_SIZE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (k, s) in splats.iter().enumerate() {
        let (x0, y0, x1, y1) = s.bbox;
        for ty in y0 / TILE_SIZE..=(y1 - 1) / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=(x1 - 1) / TILE_SIZE {
                tiles[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    Prepared {
        splats,
        tiles_x,
        tiles,
    }
}

/// Tile pixel range `(x0, y0, x1, y1)`.
pub(crate) fn tile_bounds(tile: usize, tiles_x: usize, camera: &Camera) -> (usize, usize, usize, usize) {
    let (tx, ty) = (tile % tiles_x, tile / tiles_x);
    let x0 = tx * TILE_SIZE;
    let y0 = ty * TILE_SIZE;
    (x0, y0, (x0 + TILE_SIZE).min(camera.width()), (y0 + TILE_SIZE).min(camera.height()))
}

#[inline(always)]
pub(crate) fn pixel_ray(camera: &Camera, x: usize, y: usize) -> (Vec3, f64) {
    let r = camera.pixel_ray(x as f64 + 0.5, y as f64 + 0.5);
    let n = r.norm();
    (r, n)
}

struct TileOutput {
    color: Vec<f64>,
    feature: Vec<f64>,
    depth: Vec<f64>,
    normal: Vec<f64>,
    weight: Vec<f64>,
    transmittance: Vec<f64>,
}

fn render_tile(scene: &SceneModel, camera: &Camera, prep: &Prepared, tile: usize) -> TileOutput {
    let d_f = scene.feature_dim();
    let (x0, y0, x1, y1) = tile_bounds(tile, prep.tiles_x, camera);
    let n = (x1 - x0) * (y1 - y0);
    let mut out = TileOutput {
        color: vec![0.0; n * 3],
        feature: vec![0.0; n * d_f],
        depth: vec![0.0; n],
        normal: vec![0.0; n * 3],
        weight: vec![0.0; n],
        transmittance: vec![1.0; n],
    };
    let list = &prep.tiles[tile];
    let bg = scene.background;
    let mut k = 0;
    for y in y0..y1 {
        for x in x0..x1 {
            let (ray, ray_norm) = pixel_ray(camera, x, y);
            let mut t = 1.0;
            let mut color = [0.0; 3];
            let mut normal = [0.0; 3];
            let mut depth = 0.0;
            let feat = &mut out.feature[k * d_f..(k + 1) * d_f];
            for &j in list {
                let s = &prep.splats[j as usize];
                if !s.covers(x, y) {
                    continue;
                }
                let Some(hit) = s.hit(&ray, ray_norm) else { continue };
                let w = t * hit.alpha;
                for c in 0..3 {
                    color[c] += w * s.color[c];
                    normal[c] += w * s.flip * s.normal[c];
                }
                depth += w * hit.z;
                let f = &scene.primitives[s.index].feature;
                for (acc, v) in feat.iter_mut().zip(f) {
                    *acc += w * v;
                }
                t *= 1.0 - hit.alpha;
                if t < TRANSMITTANCE_MIN {
                    break;
                }
            }
            let weight = 1.0 - t;
            for c in 0..3 {
                out.color[k * 3 + c] = color[c] + t * bg[c];
                out.normal[k * 3 + c] = normal[c];
            }
            out.depth[k] = if weight > 0.0 { depth / weight } else { 0.0 };
            out.weight[k] = weight;
            out.transmittance[k] = t;
            k += 1;
        }
    }
    out
}

/// Renders every channel of `scene` seen from `camera`. Pure and
/// deterministic for any thread count.
pub fn render(scene: &SceneModel, camera: &Camera) -> RenderOutput {
    let prep = prepare(scene, camera);
    let tiles: Vec<TileOutput> = (0..prep.tiles.len())
        .into_par_iter()
        .map(|t| render_tile(scene, camera, &prep, t))
        .collect();

    let (w, h, d_f) = (camera.width(), camera.height(), scene.feature_dim());
    let mut out = RenderOutput {
        color: Image::new(w, h, 3),
        feature: Image::new(w, h, d_f),
        depth: Image::new(w, h, 1),
        normal: Image::new(w, h, 3),
        weight: Image::new(w, h, 1),
        final_transmittance: Image::new(w, h, 1),
    };
    for (tile, t) in tiles.iter().enumerate() {
        let (x0, y0, x1, y1) = tile_bounds(tile, prep.tiles_x, camera);
        let tw = x1 - x0;
        for y in y0..y1 {
            let row = (y - y0) * tw;
            let dst = y * w + x0;
            out.color.data[dst * 3..(dst + tw) * 3].copy_from_slice(&t.color[row * 3..(row + tw) * 3]);
            out.normal.data[dst * 3..(dst + tw) * 3].copy_from_slice(&t.normal[row * 3..(row + tw) * 3]);
            out.feature.data[dst * d_f..(dst + tw) * d_f].copy_from_slice(&t.feature[row * d_f..(row + tw) * d_f]);
            out.depth.data[dst..dst + tw].copy_from_slice(&t.depth[row..row + tw]);
            out.weight.data[dst..dst + tw].copy_from_slice(&t.weight[row..row + tw]);
            out.final_transmittance.data[dst..dst + tw].copy_from_slice(&t.transmittance[row..row + tw]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Quat, RigidTransform};
    use crate::semantics::SemanticDecoder;

    fn camera(size: usize) -> Camera {
        // Looking down +z from the origin; center pixel ray is the optical axis.
        let k = crate::geometry::Intrinsics {
            fx: size as f64,
            fy: size as f64,
            cx: size as f64 / 2.0,
            cy: size as f64 / 2.0,
            width: size,
            height: size,
        };
        Camera::new(k, RigidTransform::IDENTITY).unwrap()
    }

    fn scene(prims: Vec<SplatPrimitive>, bg: [f64; 3]) -> SceneModel {
        SceneModel::new(prims, SemanticDecoder::zeros(0, 4, 2), bg, 0).unwrap()
    }

    fn facing_disk(center: Vec3, scale: f64, opacity: f64, rgb: [f64; 3]) -> SplatPrimitive {
        SplatPrimitive::new(center, Quat::IDENTITY, [scale, scale], opacity, rgb, 0, vec![])
    }

    #[test]
    fn axis_aligned_intersection() {
        let cam = camera(8);
        let d = facing_disk(Vec3::new(0.0, 0.0, 1.0), 0.1, 0.5, [1.0; 3]);
        let hit = ray_splat_intersect(&cam, (4.0, 4.0), &d).unwrap();
        assert_eq!((hit.u, hit.v), (0.0, 0.0));
        assert!((hit.depth - 1.0).abs() < 1e-15);
    }

    #[test]
    fn parallel_ray_misses() {
        let cam = camera(8);
        // Disk plane contains the optical axis.
        let q = Quat::from_axis_angle(Vec3::x(), std::f64::consts::FRAC_PI_2);
        let d = SplatPrimitive::new(Vec3::new(0.0, 0.0, 1.0), q, [0.1, 0.1], 0.5, [1.0; 3], 0, vec![]);
        assert!(ray_splat_intersect(&cam, (4.0, 4.0), &d).is_none());
    }

    #[test]
    fn hit_behind_near_plane_is_rejected() {
        let cam = camera(8);
        let d = facing_disk(Vec3::new(0.0, 0.0, -1.0), 0.1, 0.5, [1.0; 3]);
        assert!(ray_splat_intersect(&cam, (4.0, 4.0), &d).is_none());
    }

    #[test]
    fn alpha_examples() {
        let full = facing_disk(Vec3::zeros(), 1.0, 1.0 - 1e-12, [1.0; 3]);
        assert_eq!(splat_alpha(&full, 0.0, 0.0), 0.999);
        let half = facing_disk(Vec3::zeros(), 1.0, 0.5, [1.0; 3]);
        assert!((splat_alpha(&half, 0.0, 0.0) - 0.5).abs() < 1e-15);
        assert!((splat_alpha(&full, 1.0, 1.0) - (-1.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn single_opaque_splat_blend() {
        let cam = camera(9);
        let bg = [0.2, 0.4, 0.6];
        let s = scene(vec![facing_disk(Vec3::new(0.0, 0.0, 1.0), 0.5, 1.0 - 1e-12, [0.3, 0.5, 0.7])], bg);
        let out = render(&s, &cam);
        let c = out.color.pixel(4, 4);
        for ch in 0..3 {
            let expected = [0.3, 0.5, 0.7][ch] * 0.999 + 0.001 * bg[ch];
            assert!((c[ch] - expected).abs() < 1e-9);
        }
        assert!((out.weight.pixel(4, 4)[0] - 0.999).abs() < 1e-9);
    }

    #[test]
    fn two_splat_blend_hand_evaluated() {
        let cam = camera(9);
        let front = facing_disk(Vec3::new(0.0, 0.0, 1.0), 1.0, 0.5, [1.0, 0.0, 0.0]);
        let back = facing_disk(Vec3::new(0.0, 0.0, 2.0), 1.0, 0.5, [0.0, 0.0, 1.0]);
        let out = render(&scene(vec![back, front], [0.0; 3]), &cam);
        let c = out.color.pixel(4, 4);
        assert!((c[0] - 0.5).abs() < 1e-12);
        assert!(c[1].abs() < 1e-12);
        assert!((c[2] - 0.25).abs() < 1e-12);
        assert!((out.weight.pixel(4, 4)[0] - 0.75).abs() < 1e-12);
        // Expected depth: (0.5 * 1 + 0.25 * 2) / 0.75.
        assert!((out.depth.pixel(4, 4)[0] - 1.0 / 0.75).abs() < 1e-12);
    }

    #[test]
    fn uncovered_pixel_is_background() {
        let cam = camera(32);
        let s = scene(vec![facing_disk(Vec3::new(0.0, 0.0, 1.0), 0.01, 0.9, [1.0; 3])], [0.1, 0.2, 0.3]);
        let out = render(&s, &cam);
        assert_eq!(out.color.pixel(0, 0), &[0.1, 0.2, 0.3]);
        assert_eq!(out.weight.pixel(0, 0)[0], 0.0);
        assert_eq!(out.final_transmittance.pixel(0, 0)[0], 1.0);
        assert_eq!(out.depth.pixel(0, 0)[0], 0.0);
    }

    #[test]
    fn fronto_parallel_depth_and_normal() {
        let cam = camera(17);
        let s = scene(vec![facing_disk(Vec3::new(0.0, 0.0, 1.5), 0.2, 0.9, [1.0; 3])], [0.0; 3]);
        let out = render(&s, &cam);
        let (c, x) = (8, 8);
        assert!((out.depth.pixel(x, c)[0] - 1.5).abs() < 1e-6);
        // Disk normal +z faces away from the camera, so it is flipped.
        let n = out.normal.pixel(x, c);
        assert!(n[2] < 0.0 && n[0].abs() < 1e-12);
    }

    #[test]
    fn weight_plus_transmittance_is_one() {
        let cam = camera(24);
        let prims = (0..12)
            .map(|i| {
                let f = i as f64;
                facing_disk(Vec3::new(0.05 * (f * 0.7).sin(), 0.05 * (f * 1.3).cos(), 1.0 + 0.1 * f), 0.1, 0.7, [0.5; 3])
            })
            .collect();
        let out = render(&scene(prims, [0.0; 3]), &cam);
        for (w, t) in out.weight.data.iter().zip(&out.final_transmittance.data) {
            assert!((w + t - 1.0).abs() < 1e-12);
            assert!(*w >= 0.0 && *w <= 1.0);
        }
    }
}
