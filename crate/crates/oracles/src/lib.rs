//! Slow reference implementations for cross-checking.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semsplat_core::geometry::{Camera, Intrinsics, Quat, RigidTransform, Vec3, NEAR_PLANE};
use semsplat_core::image::Image;
use semsplat_core::rasterizer::{RenderOutput, ALPHA_MAX, ALPHA_MIN, FOOTPRINT_SIGMA, PARALLEL_EPS, TRANSMITTANCE_MIN};
use semsplat_core::rasterizer::ParamGradients;
use semsplat_core::scene::{SceneModel, SplatPrimitive};
use semsplat_core::semantics::{FeatureMaps, SemanticDecoder, UNLABELED};
use semsplat_core::sh;

/// Per-pixel renderer: every pixel walks all primitives sorted by camera-space
/// center depth, intersecting in world space.
pub fn naive_render(scene: &SceneModel, camera: &Camera) -> RenderOutput {
    let (w, h) = (camera.width(), camera.height());
    let d_f = scene.feature_dim();
    let cam_rot = camera.rotation_matrix();
    let origin = camera.position();

    let mut order: Vec<(f64, usize)> = scene
        .primitives
        .iter()
        .enumerate()
        .map(|(i, p)| ((camera.world_to_camera.apply(p.center)).z, i))
        .filter(|(z, _)| *z > NEAR_PLANE)
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    struct Prim {
        center: Vec3,
        u: Vec3,
        v: Vec3,
        n: Vec3,
        s: [f64; 2],
        o: f64,
        color: [f64; 3],
    }
    let prims: Vec<(usize, Prim)> = order
        .iter()
        .map(|&(_, i)| {
            let p = &scene.primitives[i];
            let m = p.rotation.normalized().to_matrix();
            let to_center = p.center - origin;
            let dir = if to_center.norm() > 0.0 { to_center.normalize() } else { cam_rot.transpose() * Vec3::z() };
            (
                i,
                Prim {
                    center: p.center,
                    u: m.column(0).into_owned(),
                    v: m.column(1).into_owned(),
                    n: m.column(2).into_owned(),
                    s: p.scale(),
                    o: p.opacity(),
                    color: sh::eval_color(&p.sh, scene.sh_degree, dir),
                },
            )
        })
        .collect();

    let mut out = RenderOutput {
        color: Image::new(w, h, 3),
        feature: Image::new(w, h, d_f),
        depth: Image::new(w, h, 1),
        normal: Image::new(w, h, 3),
        weight: Image::new(w, h, 1),
        final_transmittance: Image::new(w, h, 1),
    };
    for y in 0..h {
        for x in 0..w {
            let dir = cam_rot.transpose() * camera.pixel_ray(x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut color = [0.0; 3];
            let mut normal = Vec3::zeros();
            let mut depth = 0.0;
            let mut feat = vec![0.0; d_f];
            for (i, p) in &prims {
                let denom = p.n.dot(&dir);
                if denom.abs() < PARALLEL_EPS * dir.norm() {
                    continue;
                }
                // dir has unit camera-space z, so the ray parameter is the depth.
                let z = p.n.dot(&(p.center - origin)) / denom;
                if z <= NEAR_PLANE {
                    continue;
                }
                let hit = origin + dir * z - p.center;
                let (u, v) = (p.u.dot(&hit) / p.s[0], p.v.dot(&hit) / p.s[1]);
                let q = u * u + v * v;
                if q > FOOTPRINT_SIGMA * FOOTPRINT_SIGMA {
                    continue;
                }
                let alpha = p.o * (-0.5 * q).exp();
                if alpha < ALPHA_MIN {
                    continue;
                }
                let alpha = alpha.min(ALPHA_MAX);
                let wgt = t * alpha;
                for c in 0..3 {
                    color[c] += wgt * p.color[c];
                }
                let n_cam = cam_rot * p.n;
                let facing = if n_cam.dot(&camera.world_to_camera.apply(p.center)) > 0.0 { -n_cam } else { n_cam };
                normal += facing * wgt;
                depth += wgt * z;
                for (a, f) in feat.iter_mut().zip(&scene.primitives[*i].feature) {
                    *a += wgt * f;
                }
                t *= 1.0 - alpha;
                if t < TRANSMITTANCE_MIN {
                    break;
                }
            }
            let weight = 1.0 - t;
            for c in 0..3 {
                out.color.pixel_mut(x, y)[c] = color[c] + t * scene.background[c];
                out.normal.pixel_mut(x, y)[c] = normal[c];
            }
            out.feature.pixel_mut(x, y).copy_from_slice(&feat);
            out.depth.pixel_mut(x, y)[0] = if weight > 0.0 { depth / weight } else { 0.0 };
            out.weight.pixel_mut(x, y)[0] = weight;
            out.final_transmittance.pixel_mut(x, y)[0] = t;
        }
    }
    out
}

/// O(n^2) DBSCAN with inclusive neighborhoods. Returns clusters (each sorted)
/// ordered by their smallest index, and the sorted noise indices.
pub fn naive_dbscan(points: &[Vec3], eps: f64, min_samples: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| (points[i] - points[j]).norm() <= eps).collect()).collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_samples).collect();
    let mut label = vec![usize::MAX; n];
    let mut clusters = Vec::new();
    for i in 0..n {
        if !core[i] || label[i] != usize::MAX {
            continue;
        }
        let id = clusters.len();
        let mut members = vec![i];
        label[i] = id;
        let mut stack = vec![i];
        while let Some(p) = stack.pop() {
            for &q in &neighbors[p] {
                if label[q] != usize::MAX {
                    continue;
                }
                label[q] = id;
                members.push(q);
                if core[q] {
                    stack.push(q);
                }
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    let noise = (0..n).filter(|&i| label[i] == usize::MAX).collect();
    (clusters, noise)
}

/// Supporting planes `(normal, offset)` with `normal . x <= offset` for the
/// convex hull of `points`, found by testing every point triple.
pub fn brute_hull_planes(points: &[Vec3]) -> Vec<(Vec3, f64)> {
    let n = points.len();
    let scale = points.iter().map(|p| p.norm()).fold(1.0, f64::max);
    let tol = 1e-9 * scale;
    let mut planes = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let nrm = (points[j] - points[i]).cross(&(points[k] - points[i]));
                if nrm.norm() < 1e-12 * scale * scale {
                    continue;
                }
                let nrm = nrm.normalize();
                let off = nrm.dot(&points[i]);
                let (mut above, mut below) = (false, false);
                for p in points {
                    let d = nrm.dot(p) - off;
                    above |= d > tol;
                    below |= d < -tol;
                }
                match (above, below) {
                    (false, true) => planes.push((nrm, off)),
                    (true, false) => planes.push((-nrm, -off)),
                    _ => {}
                }
            }
        }
    }
    planes
}

/// Whether `q` lies inside the hull of `points` or within `tol` of it.
/// Meaningful only for point sets with a nonzero volume.
pub fn brute_in_hull(points: &[Vec3], q: Vec3, tol: f64) -> bool {
    let planes = brute_hull_planes(points);
    !planes.is_empty() && planes.iter().all(|(n, off)| n.dot(&q) - off <= tol)
}

/// Central difference `(f(x + h e_i) - f(x - h e_i)) / 2h` for every `i`.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|i| {
            buf[i] = x[i] + h;
            let a = f(&buf);
            buf[i] = x[i] - h;
            let b = f(&buf);
            buf[i] = x[i];
            (a - b) / (2.0 * h)
        })
        .collect()
}

/// Relative error `|a - b| / max(|a|, |b|)`, or `None` when both are below
/// `floor` in magnitude.
pub fn relative_error(a: f64, b: f64, floor: f64) -> Option<f64> {
    let m = a.abs().max(b.abs());
    (m > floor).then(|| (a - b).abs() / m)
}

/// Every primitive field in gradient order followed by the decoder weights.
pub fn scene_params(scene: &SceneModel) -> Vec<f64> {
    let mut out = Vec::new();
    for p in &scene.primitives {
        out.extend(p.center.iter());
        out.extend(p.rotation.to_array());
        out.extend(p.log_scale);
        out.push(p.opacity_logit);
        out.extend(&p.sh);
        out.extend(&p.feature);
    }
    out.extend(scene.decoder.params());
    out
}

/// Inverse of [`scene_params`]; quaternions are taken as given, unnormalized.
pub fn with_params(scene: &SceneModel, params: &[f64]) -> SceneModel {
    let mut s = scene.clone();
    let mut it = params.iter().copied();
    let mut next = || it.next().expect("parameter vector too short");
    for p in &mut s.primitives {
        for k in 0..3 {
            p.center[k] = next();
        }
        p.rotation = Quat::new(next(), next(), next(), next());
        for v in &mut p.log_scale {
            *v = next();
        }
        p.opacity_logit = next();
        for v in &mut p.sh {
            *v = next();
        }
        for v in &mut p.feature {
            *v = next();
        }
    }
    for w in s.decoder.params_mut() {
        *w = next();
    }
    s
}

/// Analytic gradients flattened in [`scene_params`] order.
pub fn flat_gradients(grads: &ParamGradients, decoder: &SemanticDecoder) -> Vec<f64> {
    let mut out = Vec::new();
    for g in &grads.primitives {
        g.for_each(|v| out.push(v));
    }
    out.extend(decoder.params());
    out
}

/// Small scene for finite-difference checks with a random target image and
/// feature maps.
#[derive(Debug, Clone)]
pub struct GradientCase {
    pub scene: SceneModel,
    pub camera: Camera,
    pub target: Image,
    pub features: FeatureMaps,
}

/// `count` tilted disks on distinct depths, each large enough that its 3-sigma
/// footprint and the alpha cutoff stay clear of every pixel, so the loss is
/// smooth in all parameters around the evaluation point.
pub fn gradient_case(count: usize, size: usize, seed: u64) -> GradientCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d_f, hidden, d_high) = (4, 5, 3);
    let prims = (0..count)
        .map(|i| {
            let c = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 2.0 + 0.3 * i as f64);
            let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3));
            let rot = Quat::from_axis_angle(axis.normalize(), rng.random_range(0.2..0.6));
            let scale = [rng.random_range(0.7..1.0), rng.random_range(0.7..1.0)];
            let rgb = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
            let mut p = SplatPrimitive::new(c, rot, scale, rng.random_range(0.3..0.7), rgb, 1, (0..d_f).map(|_| rng.random_range(-1.0..1.0)).collect());
            for v in &mut p.sh[3..] {
                *v = rng.random_range(-0.2..0.2);
            }
            p
        })
        .collect();
    let decoder = SemanticDecoder::init(d_f, hidden, d_high, &mut rng);
    let scene = SceneModel::new(prims, decoder, [0.2, 0.1, 0.3], 1).expect("consistent scene");
    let k = Intrinsics {
        fx: size as f64,
        fy: size as f64,
        cx: 0.5 * size as f64,
        cy: 0.5 * size as f64,
        width: size,
        height: size,
    };
    let camera = Camera::new(k, RigidTransform::IDENTITY).expect("valid camera");
    let target = Image::from_vec(size, size, 3, (0..size * size * 3).map(|_| rng.random_range(0.0..1.0)).collect()).expect("sized");
    let raw = Image::from_vec(size, size, d_high, (0..size * size * d_high).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized");
    let masks = (0..size * size).map(|i| if i % 5 == 0 { UNLABELED } else { (i % 2) as i32 }).collect();
    let table: BTreeMap<i32, Vec<f64>> = (0..2).map(|l| (l, (0..d_high).map(|_| rng.random_range(-1.0..1.0)).collect())).collect();
    let features = FeatureMaps::new(raw, masks, table).expect("consistent maps");
    GradientCase { scene, camera, target, features }
}

/// Random scene in front of a 32x32-style camera at the origin looking down +z:
/// arbitrary orientations (including near edge-on), scales spanning a pixel to
/// a large fraction of the view, mixed opacities and SH degree `degree`.
pub fn random_scene(count: usize, degree: usize, seed: u64) -> SceneModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_f = 3;
    let prims = (0..count)
        .map(|_| {
            let z = rng.random_range(0.5..6.0);
            let c = Vec3::new(rng.random_range(-0.6..0.6) * z, rng.random_range(-0.6..0.6) * z, z);
            let q = Quat::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let scale = [10f64.powf(rng.random_range(-2.5..-0.3)), 10f64.powf(rng.random_range(-2.5..-0.3))];
            let rgb = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let mut p = SplatPrimitive::new(c, q, scale, rng.random_range(0.02..0.99), rgb, degree, (0..d_f).map(|_| rng.random_range(-1.0..1.0)).collect());
            for v in &mut p.sh[3..] {
                *v = rng.random_range(-0.3..0.3);
            }
            p
        })
        .collect();
    let decoder = SemanticDecoder::zeros(d_f, 2, 2);
    SceneModel::new(prims, decoder, [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)], degree).expect("consistent scene")
}

/// Largest absolute per-channel difference between two renders, with the
/// name of the channel where it occurs.
pub fn max_render_difference(a: &RenderOutput, b: &RenderOutput) -> (f64, &'static str) {
    let pairs = [
        ("color", &a.color, &b.color),
        ("feature", &a.feature, &b.feature),
        ("depth", &a.depth, &b.depth),
        ("normal", &a.normal, &b.normal),
        ("weight", &a.weight, &b.weight),
        ("final_transmittance", &a.final_transmittance, &b.final_transmittance),
    ];
    let mut worst = (0.0, "none");
    for (name, x, y) in pairs {
        assert!(x.same_shape(y), "{name} shapes differ");
        for (u, v) in x.data.iter().zip(&y.data) {
            let d = (u - v).abs();
            if d > worst.0 || d.is_nan() {
                worst = (d, name);
            }
        }
    }
    worst
}
