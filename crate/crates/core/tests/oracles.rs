use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semsplat_core::fixtures::objects_fixture;
use semsplat_core::geometry::{Camera, Intrinsics, RigidTransform, Vec3};
use semsplat_core::query::{dbscan, hull_complete, ConvexHull, QueryConfig};
use semsplat_core::render;
use semsplat_oracles::{brute_in_hull, max_render_difference, naive_dbscan, naive_render, random_scene};

fn camera(size: usize) -> Camera {
    let k = Intrinsics {
        fx: 0.8 * size as f64,
        fy: 0.8 * size as f64,
        cx: 0.5 * size as f64,
        cy: 0.5 * size as f64,
        width: size,
        height: size,
    };
    Camera::new(k, RigidTransform::IDENTITY).unwrap()
}

#[test]
fn tiled_render_matches_naive_renderer() {
    let cam = camera(32);
    for seed in 0..20u64 {
        let n = 10 + (seed as usize * 37) % 191;
        let scene = random_scene(n, (seed % 3) as usize, seed);
        let (d, channel) = max_render_difference(&render(&scene, &cam), &naive_render(&scene, &cam));
        assert!(d <= 1e-6, "seed {seed} ({n} primitives): {channel} differs by {d:e}");
    }
}

#[test]
fn render_is_independent_of_thread_count() {
    let cam = camera(48);
    let scene = random_scene(200, 1, 99);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| render(&scene, &cam));
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| render(&scene, &cam));
    assert_eq!(one, four);
}

fn blobs(seed: u64, n: usize) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec3> = (0..4).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    (0..n)
        .map(|i| {
            if i % 7 == 0 {
                Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5))
            } else {
                centers[i % 4] + Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2))
            }
        })
        .collect()
}

#[test]
fn dbscan_matches_naive_oracle() {
    for seed in 0..30u64 {
        let pts = blobs(seed, 50 + (seed as usize * 53) % 451);
        for (eps, min) in [(0.05, 3), (0.1, 5), (0.2, 15), (0.4, 1)] {
            let c = dbscan(&pts, eps, min);
            let (clusters, noise) = naive_dbscan(&pts, eps, min);
            assert_eq!(c.clusters, clusters, "seed {seed} eps {eps} min {min}");
            assert_eq!(c.noise, noise, "seed {seed} eps {eps} min {min}");
        }
    }
}

#[test]
fn dbscan_matches_naive_oracle_on_fixture_objects() {
    let fx = objects_fixture(0, 0.0);
    let cfg = QueryConfig::default();
    for m in &fx.members {
        let pts: Vec<Vec3> = m.iter().chain(&fx.strays).map(|i| fx.scene.primitives[*i].center).collect();
        assert!(pts.len() <= 500);
        let c = dbscan(&pts, cfg.dbscan_eps, cfg.dbscan_min_samples);
        let (clusters, noise) = naive_dbscan(&pts, cfg.dbscan_eps, cfg.dbscan_min_samples);
        assert_eq!((c.clusters, c.noise), (clusters, noise));
    }
}

#[test]
fn hull_membership_matches_brute_force_planes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..40 {
        let n = 4 + trial % 30;
        let pts: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let hull = ConvexHull::new(&pts).unwrap();
        for _ in 0..200 {
            let q = Vec3::new(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2));
            // Skip points within rounding distance of a face.
            if hull.signed_distance(&q).abs() < 1e-9 {
                continue;
            }
            assert_eq!(hull.contains(&q, 0.0), brute_in_hull(&pts, q, 0.0), "trial {trial} point {q:?}");
        }
    }
}

#[test]
fn hull_completion_recovers_suppressed_members() {
    let fx = objects_fixture(0, 0.1);
    let kept: Vec<usize> = fx.members[0].iter().copied().filter(|i| !fx.suppressed.contains(i)).collect();
    let done = hull_complete(&kept, &fx.scene, QueryConfig::default().hull_tolerance);
    assert!(!done.degenerate);
    let mut expected = fx.members[0].clone();
    expected.sort_unstable();
    let mut got = done.indices.clone();
    got.sort_unstable();
    assert_eq!(got, expected);
}
