//! Deterministic synthetic scenes with known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::geometry::{Camera, Quat, RigidTransform, Vec3};
use crate::image::Image;
use crate::rasterizer::render;
use crate::scene::{splat_frame, SceneModel, SplatPrimitive};
use crate::semantics::{normalize, FeatureMaps, SemanticDecoder, UNLABELED};
use crate::tracker::{apply_motion, object_mask};
use crate::trainer::{init_from_points, InitConfig, TrainView};

/// Decoder with per-object input features whose decoded local embeddings are
/// mutually dissimilar.
#[derive(Debug, Clone)]
pub struct PlantedSemantics {
    pub decoder: SemanticDecoder,
    /// Unit-norm input feature per object.
    pub features: Vec<Vec<f64>>,
    /// Unit-norm decoded local embedding per object; the query for that object.
    pub embeddings: Vec<Vec<f64>>,
}

/// Largest cosine similarity allowed between two planted embeddings.
pub const PLANTED_MAX_SIMILARITY: f64 = 0.3;

pub fn planted_semantics(count: usize, feature_dim: usize, hidden_dim: usize, semantic_dim: usize, seed: u64) -> PlantedSemantics {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decoder = SemanticDecoder::init(feature_dim, hidden_dim, semantic_dim, &mut rng);
    let mut features: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut embeddings: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while features.len() < count {
        attempts += 1;
        assert!(attempts < 100_000, "could not plant {count} dissimilar embeddings in {semantic_dim} dims");
        let f = normalize(&(0..feature_dim).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>());
        let e = normalize(&decoder.decode(&f).0);
        if e.iter().all(|v| *v == 0.0) {
            continue;
        }
        if embeddings.iter().all(|o| o.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() < PLANTED_MAX_SIMILARITY) {
            features.push(f);
            embeddings.push(e);
        }
    }
    PlantedSemantics { decoder, features, embeddings }
}

/// Background of the synthetic reconstruction scenes.
pub const RECON_BACKGROUND: [f64; 3] = [0.05, 0.05, 0.1];
/// Side of the synthetic views in pixels.
pub const RECON_SIZE: usize = 64;
/// Objects in the synthetic reconstruction scene.
pub const RECON_OBJECTS: usize = 3;

/// A known scene with per-primitive object labels.
#[derive(Debug, Clone)]
pub struct LabeledScene {
    pub scene: SceneModel,
    pub labels: Vec<i32>,
    pub semantics: PlantedSemantics,
}

/// `count` disks in `RECON_OBJECTS` loose groups on a shallow slab around the
/// origin, each disk facing within 30 degrees of +z. Features and decoder are
/// planted so every disk decodes to its object's embedding.
pub fn reconstruction_scene(count: usize, seed: u64) -> LabeledScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let semantics = planted_semantics(RECON_OBJECTS, 8, 64, 16, seed.wrapping_add(1));
    let anchors: Vec<Vec3> = (0..RECON_OBJECTS)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / RECON_OBJECTS as f64;
            Vec3::new(0.35 * a.cos(), 0.35 * a.sin(), 0.0)
        })
        .collect();
    let mut prims = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let k = i % RECON_OBJECTS;
        let c = anchors[k] + Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.1..0.1));
        let tilt = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0);
        let rot = Quat::from_axis_angle(tilt.try_normalize(1e-9).unwrap_or(Vec3::x()), rng.random_range(0.0..0.5)).mul(Quat::from_axis_angle(Vec3::z(), rng.random_range(0.0..std::f64::consts::PI)));
        let scale = [rng.random_range(0.06..0.16), rng.random_range(0.06..0.16)];
        let rgb = [rng.random_range(0.1..0.95), rng.random_range(0.1..0.95), rng.random_range(0.1..0.95)];
        prims.push(SplatPrimitive::new(c, rot, scale, rng.random_range(0.7..0.95), rgb, 1, semantics.features[k].clone()));
        labels.push(k as i32);
    }
    let scene = SceneModel::new(prims, semantics.decoder.clone(), RECON_BACKGROUND, 1).expect("consistent fixture scene");
    LabeledScene { scene, labels, semantics }
}

/// Camera on a sphere of `radius` around the origin; `elevation` is measured
/// from the xy plane.
pub fn orbit_camera(azimuth: f64, elevation: f64, radius: f64, size: usize) -> Camera {
    let eye = Vec3::new(elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin()) * radius;
    Camera::look_at(eye, Vec3::zeros(), Vec3::z(), Camera::intrinsics_from_fov(size, size, 40f64.to_radians())).expect("orbit camera is never looking along z")
}

/// Feature maps of a labeled scene: per-pixel raw features mix the object
/// embeddings by blend weight; a pixel is labeled when one object owns more
/// than half of it.
pub fn observe_features(labeled: &LabeledScene, camera: &Camera) -> FeatureMaps {
    let n = RECON_OBJECTS.max(labeled.labels.iter().map(|l| *l as usize + 1).max().unwrap_or(0));
    let mut onehot = labeled.scene.clone();
    onehot.decoder = SemanticDecoder::zeros(n, 1, 1);
    for (p, l) in onehot.primitives.iter_mut().zip(&labeled.labels) {
        p.feature = (0..n).map(|k| if k as i32 == *l { 1.0 } else { 0.0 }).collect();
    }
    let out = render(&onehot, camera);
    let d = labeled.semantics.embeddings[0].len();
    let mut raw = Image::new(out.width(), out.height(), d);
    let mut masks = vec![UNLABELED; out.feature.pixel_count()];
    for (i, w) in out.feature.data.chunks(n).enumerate() {
        for (k, wk) in w.iter().enumerate() {
            for (r, e) in raw.data[i * d..(i + 1) * d].iter_mut().zip(&labeled.semantics.embeddings[k]) {
                *r += wk * e;
            }
            if *wk > 0.5 {
                masks[i] = k as i32;
            }
        }
    }
    let table = (0..n).map(|k| (k as i32, labeled.semantics.embeddings[k].clone())).collect();
    FeatureMaps::new(raw, masks, table).expect("consistent fixture maps")
}

pub fn observe(labeled: &LabeledScene, camera: &Camera) -> TrainView {
    TrainView {
        camera: camera.clone(),
        image: render(&labeled.scene, camera).color,
        features: Some(observe_features(labeled, camera)),
    }
}

/// Training views, a held-out view and colored seed points of a known scene.
#[derive(Debug, Clone)]
pub struct ReconstructionFixture {
    pub truth: LabeledScene,
    pub views: Vec<TrainView>,
    pub held_out: TrainView,
    pub seed_points: Vec<(Vec3, [f64; 3])>,
}

/// Seed points sampled on the true disks within one standard deviation,
/// standing in for a structure-from-motion point cloud.
fn seed_points(scene: &SceneModel, per_primitive: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec3, [f64; 3])> {
    let mut pts = Vec::new();
    for p in &scene.primitives {
        let (tu, tv, _) = splat_frame(p);
        let s = p.scale();
        for _ in 0..per_primitive {
            let (u, v): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            pts.push((p.center + tu * (u * s[0]) + tv * (v * s[1]), p.base_color()));
        }
    }
    pts
}

/// Orbit azimuths of the training views and the held-out one in between.
pub fn reconstruction_fixture(primitives: usize, train_views: usize, seed: u64) -> ReconstructionFixture {
    let truth = reconstruction_scene(primitives, seed);
    let step = 2.0 * std::f64::consts::PI / train_views.max(1) as f64;
    let views = (0..train_views)
        .map(|i| observe(&truth, &orbit_camera(step * i as f64, if i % 2 == 0 { 1.05 } else { 1.2 }, 3.0, RECON_SIZE)))
        .collect();
    let held_out = observe(&truth, &orbit_camera(0.5 * step, 1.12, 3.0, RECON_SIZE));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let seed_points = seed_points(&truth.scene, 5, &mut rng);
    ReconstructionFixture { truth, views, held_out, seed_points }
}

/// Capture protocol: 39 views on a rising orbit plus one fixed top view.
pub fn capture_cameras(size: usize) -> Vec<Camera> {
    let mut cams: Vec<Camera> = (0..39)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / 13.0;
            let el = 0.8 + 0.2 * (i / 13) as f64;
            orbit_camera(a, el, 3.0, size)
        })
        .collect();
    cams.push(orbit_camera(0.0, 1.5, 3.0, size));
    cams
}

/// Side of the fixture cubes in scene units.
pub const CUBE_SIDE: f64 = 0.05;
/// Lattice points per cube edge.
pub const CUBE_LATTICE: usize = 7;

/// Surface lattice of an axis-aligned cube: positions and outward face normals.
pub fn cube_surface(min_corner: Vec3, side: f64, per_edge: usize) -> Vec<(Vec3, Vec3)> {
    let n = per_edge - 1;
    let h = side / n as f64;
    let mut pts = Vec::new();
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                let idx = [i, j, k];
                let Some(axis) = (0..3).find(|a| idx[*a] == 0 || idx[*a] == n) else {
                    continue;
                };
                let mut normal = Vec3::zeros();
                normal[axis] = if idx[axis] == 0 { -1.0 } else { 1.0 };
                pts.push((min_corner + Vec3::new(i as f64, j as f64, k as f64) * h, normal));
            }
        }
    }
    pts
}

/// True when the lattice point lies strictly inside one face (not on an edge).
fn face_interior(p: &Vec3, min_corner: &Vec3, side: f64) -> bool {
    let on = |k: usize| {
        let d = p[k] - min_corner[k];
        d.abs() < 1e-9 || (d - side).abs() < 1e-9
    };
    (0..3).filter(|k| on(*k)).count() == 1
}

fn disk(center: Vec3, normal: Vec3, radius: f64, rgb: [f64; 3], feature: Vec<f64>) -> SplatPrimitive {
    SplatPrimitive::new(center, facing(normal), [radius, radius], 0.9, rgb, 0, feature)
}

/// Rotation taking +z to `n`.
fn facing(n: Vec3) -> Quat {
    let z = Vec3::z();
    let axis = z.cross(&n);
    let s = axis.norm();
    if s < 1e-12 {
        return if n.z > 0.0 { Quat::IDENTITY } else { Quat::new(0.0, 1.0, 0.0, 0.0) };
    }
    Quat::from_axis_angle(axis / s, s.atan2(z.dot(&n)))
}

fn jittered(f: &[f64], amount: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    normalize(&f.iter().map(|v| v + amount * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>())
}

/// Three cubes on a table with clutter and far-away strays.
#[derive(Debug, Clone)]
pub struct ObjectsFixture {
    pub scene: SceneModel,
    /// True member indices per object.
    pub members: Vec<Vec<usize>>,
    /// Query embedding per object.
    pub queries: Vec<Vec<f64>>,
    /// Mean of each object's true member centers.
    pub centroids: Vec<Vec3>,
    /// Isolated primitives carrying an object's feature.
    pub strays: Vec<usize>,
    /// Members whose features were replaced by a dissimilar one.
    pub suppressed: Vec<usize>,
    pub semantics: PlantedSemantics,
}

/// Planted feature slots of the objects fixture.
const TABLE_SLOT: usize = 3;
const CLUTTER_SLOT: usize = 4;

/// Three 5 cm cubes resting just above a table of disks, 40 clutter disks
/// and 5 isolated strays per object. With `suppress` > 0 that fraction of the
/// first cube's face-interior disks get the clutter feature, so they drop
/// below any sensible similarity threshold while staying inside its hull.
pub fn objects_fixture(seed: u64, suppress: f64) -> ObjectsFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let semantics = planted_semantics(5, 8, 64, 16, seed.wrapping_add(17));
    let spacing = CUBE_SIDE / (CUBE_LATTICE - 1) as f64;
    let mut prims = Vec::new();
    for i in 0..21 {
        for j in 0..21 {
            let c = Vec3::new(-0.2 + 0.02 * i as f64, -0.2 + 0.02 * j as f64, 0.0);
            let shade = if (i + j) % 2 == 0 { 0.55 } else { 0.45 };
            prims.push(disk(c, Vec3::z(), 0.012, [shade; 3], jittered(&semantics.features[TABLE_SLOT], 0.05, &mut rng)));
        }
    }
    let corners = [Vec3::new(-0.12, -0.08, 0.005), Vec3::new(0.03, -0.1, 0.005), Vec3::new(-0.04, 0.07, 0.005)];
    let colors = [[0.8, 0.2, 0.2], [0.2, 0.3, 0.85], [0.25, 0.75, 0.3]];
    let mut members = Vec::new();
    let mut suppressed = Vec::new();
    for (k, corner) in corners.iter().enumerate() {
        let surface = cube_surface(*corner, CUBE_SIDE, CUBE_LATTICE);
        let interior: Vec<usize> = surface.iter().enumerate().filter(|(_, (p, _))| face_interior(p, corner, CUBE_SIDE)).map(|(i, _)| i).collect();
        let mut hidden = std::collections::BTreeSet::new();
        if k == 0 && suppress > 0.0 {
            let want = (suppress * surface.len() as f64).round() as usize;
            let mut pool = interior.clone();
            while hidden.len() < want.min(interior.len()) {
                hidden.insert(pool.swap_remove(rng.random_range(0..pool.len())));
            }
        }
        let mut idx = Vec::with_capacity(surface.len());
        for (i, (p, n)) in surface.into_iter().enumerate() {
            let slot = if hidden.contains(&i) { CLUTTER_SLOT } else { k };
            if hidden.contains(&i) {
                suppressed.push(prims.len());
            }
            idx.push(prims.len());
            let f = jittered(&semantics.features[slot], 0.05, &mut rng);
            prims.push(disk(p, n, 0.6 * spacing, colors[k], f));
        }
        members.push(idx);
    }
    let inside_any = |p: &Vec3, margin: f64| corners.iter().any(|c| (0..3).all(|a| p[a] > c[a] - margin && p[a] < c[a] + CUBE_SIDE + margin));
    let mut placed = 0;
    while placed < 40 {
        let p = Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(0.01..0.12));
        if inside_any(&p, 0.03) {
            continue;
        }
        let n = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.2..1.0)).normalize();
        prims.push(disk(p, n, 0.01, [0.5, 0.5, 0.2], jittered(&semantics.features[CLUTTER_SLOT], 0.05, &mut rng)));
        placed += 1;
    }
    let mut strays = Vec::new();
    for k in 0..3 {
        let mut placed = 0;
        while placed < 5 {
            let p = Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(0.06..0.15));
            let far = prims.iter().all(|q| (q.center - p).norm() > 0.03);
            if !far || inside_any(&p, 0.03) {
                continue;
            }
            strays.push(prims.len());
            prims.push(disk(p, Vec3::z(), 0.01, colors[k], jittered(&semantics.features[k], 0.05, &mut rng)));
            placed += 1;
        }
    }
    let scene = SceneModel::new(prims, semantics.decoder.clone(), [0.9, 0.9, 0.9], 0).expect("consistent fixture scene");
    let centroids = members.iter().map(|m| m.iter().map(|i| scene.primitives[*i].center).sum::<Vec3>() / m.len() as f64).collect();
    ObjectsFixture {
        scene,
        members,
        queries: semantics.embeddings[..3].to_vec(),
        centroids,
        strays,
        suppressed,
        semantics,
    }
}

/// A textured cube moving on a table, observed by one camera.
#[derive(Debug, Clone)]
pub struct TrackingFixture {
    pub scene: SceneModel,
    pub object: Vec<usize>,
    pub camera: Camera,
    /// Commanded (and true) motion of each frame.
    pub deltas: Vec<RigidTransform>,
    /// Cumulative true motion after each frame.
    pub truth: Vec<RigidTransform>,
    pub frames: Vec<Image>,
    pub masks: Vec<Vec<bool>>,
}

/// Tracking mask dilation in pixels.
pub const TRACK_MASK_GROW: usize = 2;

/// Per frame the cube turns `degrees` about the vertical through its
/// centroid and then slides `step` along x.
pub fn tracking_fixture(frames: usize, step: f64, degrees: f64, size: usize) -> TrackingFixture {
    let spacing = CUBE_SIDE / (CUBE_LATTICE - 1) as f64;
    let mut prims = Vec::new();
    for i in 0..25 {
        for j in 0..25 {
            let c = Vec3::new(-0.18 + 0.015 * i as f64, -0.18 + 0.015 * j as f64, 0.0);
            let shade = if (i / 2 + j / 2) % 2 == 0 { 0.6 } else { 0.4 };
            prims.push(disk(c, Vec3::z(), 0.009, [shade; 3], vec![0.0]));
        }
    }
    let corner = Vec3::new(-0.075, -0.025, 0.005);
    let start = prims.len();
    for (p, n) in cube_surface(corner, CUBE_SIDE, CUBE_LATTICE) {
        let cell = ((p - corner) / (2.0 * spacing)).map(|v| (v + 1e-9).floor() as i64);
        let checker = (cell.x + cell.y + cell.z).rem_euclid(2) as f64;
        let face = [n.x.abs(), n.y.abs(), n.z.abs()];
        let rgb = [0.2 + 0.6 * face[0], 0.2 + 0.6 * face[1], 0.2 + 0.6 * face[2]].map(|v| v * (0.6 + 0.4 * checker));
        prims.push(disk(p, n, 0.6 * spacing, rgb, vec![0.0]));
    }
    let object: Vec<usize> = (start..prims.len()).collect();
    let scene = SceneModel::new(prims, SemanticDecoder::zeros(1, 1, 1), [0.1, 0.1, 0.1], 0).expect("consistent fixture scene");
    let camera = Camera::look_at(Vec3::new(0.0, -0.3, 0.3), Vec3::new(0.0, 0.0, 0.02), Vec3::z(), Camera::intrinsics_from_fov(size, size, 50f64.to_radians())).expect("valid camera");
    let base_centroid = object.iter().map(|i| scene.primitives[*i].center).sum::<Vec3>() / object.len() as f64;
    let q = Quat::from_axis_angle(Vec3::z(), degrees.to_radians());
    let mut t = RigidTransform::IDENTITY;
    let mut out = TrackingFixture {
        scene,
        object,
        camera,
        deltas: Vec::new(),
        truth: Vec::new(),
        frames: Vec::new(),
        masks: Vec::new(),
    };
    for _ in 0..frames {
        let c = t.apply(base_centroid);
        let delta = RigidTransform::from_translation(Vec3::new(step, 0.0, 0.0)).compose(&RigidTransform::rotation_about(c, q));
        t = delta.compose(&t).renormalized();
        let moved = apply_motion(&out.scene, &out.object, &t);
        out.frames.push(render(&moved, &out.camera).color);
        out.masks.push(object_mask(&moved, &out.object, &out.camera, TRACK_MASK_GROW));
        out.deltas.push(delta);
        out.truth.push(t);
    }
    out
}

/// Initialization used when fitting the reconstruction fixture: 50 primitives
/// facing up, view-independent color since the true scene is Lambertian.
pub fn reconstruction_init_config() -> InitConfig {
    InitConfig {
        primitives: 50,
        sh_degree: 0,
        background: RECON_BACKGROUND,
        ..Default::default()
    }
}

pub fn reconstruction_init(fx: &ReconstructionFixture) -> SceneModel {
    init_from_points(&fx.seed_points, Vec3::z(), &reconstruction_init_config()).expect("fixture has seed points")
}

/// Rounds to 8-bit levels, as a PNG round trip would.
pub fn quantize(img: &Image) -> Image {
    let mut out = img.clone();
    out.data.iter_mut().for_each(|v| *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
    out
}
