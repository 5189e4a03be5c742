//! Workloads shared by the benchmarks and the performance acceptance check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semsplat_core::{Camera, Intrinsics, Quat, RigidTransform, SceneModel, SemanticDecoder, SplatPrimitive, Vec3};

/// Per-primitive feature width of the workload (the library default).
pub const FEATURE_DIM: usize = 8;

/// Pinhole camera at the origin looking down +z with a 64 degree field of view.
pub fn camera(size: usize) -> Camera {
    let f = 0.8 * size as f64;
    let k = Intrinsics {
        fx: f,
        fy: f,
        cx: 0.5 * size as f64,
        cy: 0.5 * size as f64,
        width: size,
        height: size,
    };
    Camera::new(k, RigidTransform::IDENTITY).expect("valid camera")
}

/// `count` randomly oriented disks filling the view frustum between depth 2
/// and 6, sized like a fitted scene (a few pixels to a few dozen across at
/// 256x256), with SH degree 1 and 8 feature channels.
pub fn scene(count: usize, seed: u64) -> SceneModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prims = (0..count)
        .map(|_| {
            let z = rng.random_range(2.0..6.0);
            let c = Vec3::new(rng.random_range(-0.6..0.6) * z, rng.random_range(-0.6..0.6) * z, z);
            let q = Quat::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let scale = [rng.random_range(0.01..0.06), rng.random_range(0.01..0.06)];
            let rgb = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let feature = (0..FEATURE_DIM).map(|_| rng.random_range(-0.1..0.1)).collect();
            SplatPrimitive::new(c, q, scale, rng.random_range(0.3..0.95), rgb, 1, feature)
        })
        .collect();
    SceneModel::new(prims, SemanticDecoder::zeros(FEATURE_DIM, 64, 16), [0.0; 3], 1).expect("consistent scene")
}
