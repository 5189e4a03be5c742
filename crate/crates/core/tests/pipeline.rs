use semsplat_core::fixtures::*;
use semsplat_core::geometry::{Quat, RigidTransform, Vec3};
use semsplat_core::metrics::{psnr, ssim};
use semsplat_core::query::{extract_object, query_initial, ObjectExtract, QueryConfig, QueryDiagnostics};
use semsplat_core::render;
use semsplat_core::tracker::{track_frame, tracking_loss, TrackConfig, TrackState};
use semsplat_core::trainer::{fit, TrainConfig};

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

#[test]
fn standard_fixture_reconstructs() {
    let fx = reconstruction_fixture(20, 8, 0);
    let cfg = TrainConfig { steps: 2000, ..Default::default() };
    let res = fit(&fx.views, &cfg, reconstruction_init(&fx)).unwrap();
    let l = &res.losses;
    assert!(l[l.len() - 1] <= 0.5 * l[0], "loss {} -> {}", l[0], l[l.len() - 1]);
    assert!(median(&l[l.len() - 100..]) <= median(&l[..100]));
    let out = render(&res.scene, &fx.held_out.camera).color;
    let p = psnr(&out, &fx.held_out.image).unwrap();
    let s = ssim(&out, &fx.held_out.image).unwrap();
    assert!(p > 35.0 && s > 0.95, "held-out psnr {p} ssim {s}");
}

#[test]
fn fit_is_deterministic() {
    let fx = reconstruction_fixture(20, 8, 1);
    let cfg = TrainConfig { steps: 30, seed: 5, ..Default::default() };
    let a = fit(&fx.views, &cfg, reconstruction_init(&fx)).unwrap();
    let b = fit(&fx.views, &cfg, reconstruction_init(&fx)).unwrap();
    assert_eq!(a.scene, b.scene);
    assert_eq!(a.losses, b.losses);
}

#[test]
fn forty_view_capture_is_accepted() {
    let truth = reconstruction_scene(20, 3);
    let cams = capture_cameras(32);
    assert_eq!(cams.len(), 40);
    let views: Vec<_> = cams.iter().map(|c| observe(&truth, c)).collect();
    let fx = reconstruction_fixture(20, 8, 3);
    let cfg = TrainConfig { steps: 80, ..Default::default() };
    let res = fit(&views, &cfg, reconstruction_init(&fx)).unwrap();
    assert!(res.losses.iter().all(|l| l.is_finite()));
    assert!(median(&res.losses[60..]) < median(&res.losses[..20]));
}

#[test]
fn planted_queries_extract_each_cube() {
    let fx = objects_fixture(0, 0.0);
    let cfg = QueryConfig::default();
    for k in 0..3 {
        let initial = query_initial(&fx.scene, &fx.queries[k], &cfg).unwrap();
        let strays = initial.iter().filter(|i| !fx.members[k].contains(i)).count();
        assert!(fx.members[k].iter().all(|i| initial.contains(i)));
        assert!(strays as f64 <= 0.05 * fx.members[k].len() as f64, "{strays} strays");
        let ex = extract_object(&fx.scene, &fx.queries[k], &cfg).unwrap();
        assert_eq!(ex.primitive_indices, fx.members[k]);
        assert!((ex.centroid - fx.centroids[k]).norm() < 0.01);
        assert_eq!(extract_object(&fx.scene, &fx.queries[k], &cfg).unwrap(), ex);
    }
}

#[test]
fn hull_completion_fills_suppressed_disks() {
    let fx = objects_fixture(0, 0.1);
    assert_eq!(fx.suppressed.len(), 22);
    let ex = extract_object(&fx.scene, &fx.queries[0], &QueryConfig::default()).unwrap();
    let recovered = fx.members[0].iter().filter(|i| ex.primitive_indices.contains(i)).count();
    assert!(recovered as f64 >= 0.95 * fx.members[0].len() as f64, "{recovered}");
    assert_eq!(ex.diagnostics.hull_added, 22);
}

fn tracker(fx: &TrackingFixture) -> TrackState {
    let ex = ObjectExtract::from_indices(&fx.scene, fx.object.clone(), QueryDiagnostics::default()).unwrap();
    TrackState::new(ex, &TrackConfig::default())
}

fn translation_error(a: &RigidTransform, b: &RigidTransform) -> f64 {
    (a.translation - b.translation).norm()
}

#[test]
fn commanded_prior_tracks_twenty_frames_to_a_millimeter() {
    let fx = tracking_fixture(20, 0.005, 5.0, 64);
    let mut st = tracker(&fx);
    for f in 0..20 {
        st = track_frame(&st, &fx.scene, &quantize(&fx.frames[f]), &fx.masks[f], &fx.camera, &fx.deltas[f]).unwrap();
        let e = translation_error(&st.current_transform, &fx.truth[f]);
        assert!(e < 1e-3, "frame {f}: {e}");
    }
}

#[test]
fn prior_never_hurts() {
    let fx = tracking_fixture(1, 0.005, 0.0, 64);
    let obs = quantize(&fx.frames[0]);
    let with = track_frame(&tracker(&fx), &fx.scene, &obs, &fx.masks[0], &fx.camera, &fx.deltas[0]).unwrap();
    let without = track_frame(&tracker(&fx), &fx.scene, &obs, &fx.masks[0], &fx.camera, &RigidTransform::IDENTITY).unwrap();
    assert!(translation_error(&with.current_transform, &fx.truth[0]) <= translation_error(&without.current_transform, &fx.truth[0]));
}

#[test]
fn unmoved_object_stays_put() {
    let fx = tracking_fixture(1, 0.0, 0.0, 64);
    let st = track_frame(&tracker(&fx), &fx.scene, &fx.frames[0], &fx.masks[0], &fx.camera, &RigidTransform::IDENTITY).unwrap();
    let t = st.current_transform;
    assert!(t.translation.norm() < 1e-4 && t.rotation.log().norm() < 1e-4, "{t:?}");
}

#[test]
fn truth_minimizes_tracking_loss() {
    use rand::{Rng, SeedableRng};
    let fx = tracking_fixture(3, 0.005, 5.0, 64);
    let st = tracker(&fx);
    let truth = fx.truth[2];
    let loss = |t: &RigidTransform| tracking_loss(&fx.scene, &st.object, t, &fx.frames[2], &fx.masks[2], &fx.camera).unwrap().0;
    let best = loss(&truth);
    assert!(best < 1e-3);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let pivot = truth.apply(st.object.centroid);
    for _ in 0..100 {
        let dt = Vec3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
        let q = Quat::from_axis_angle(axis, rng.random_range(-10f64..10.0).to_radians());
        let t = RigidTransform::from_translation(dt).compose(&RigidTransform::rotation_about(pivot, q)).compose(&truth);
        assert!(best <= loss(&t));
    }
}
