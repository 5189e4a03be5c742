use clap::Args;
use semsplat_core::fixtures::{
    capture_cameras, objects_fixture, observe_features, quantize, reconstruction_fixture, reconstruction_init_config, tracking_fixture, ObjectsFixture, RECON_SIZE,
};
use semsplat_core::io::{encode_feature_maps, encode_image, encode_query, encode_scene, save_camera, save_mask_png, save_png};
use semsplat_core::query::{ObjectExtract, QueryDiagnostics};
use semsplat_core::trainer::TrainView;
use semsplat_core::{render, Camera, RigidTransform};
use serde::{Deserialize, Serialize};

use super::fit::{FitSettings, SeedPoint};
use crate::config::resolve;
use crate::error::CliResult;
use crate::manifest::Run;
use crate::Common;

#[derive(Args, Debug)]
pub struct GenFixturesArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSettings {
    pub seed: u64,
    /// Primitives of the known reconstruction scene.
    pub recon_primitives: usize,
    pub recon_views: usize,
    pub track_frames: usize,
    /// Per-frame slide along x, in meters.
    pub track_step: f64,
    /// Per-frame turn about the vertical, in degrees.
    pub track_degrees: f64,
    pub track_size: usize,
}

impl Default for FixtureSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            recon_primitives: 20,
            recon_views: 8,
            track_frames: 20,
            track_step: 0.005,
            track_degrees: 5.0,
            track_size: 64,
        }
    }
}

#[derive(Debug, Serialize)]
struct ObjectsTruth {
    centroids: Vec<[f64; 3]>,
    members: Vec<Vec<usize>>,
    suppressed: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct TrackTruth {
    /// Cumulative motion after each frame.
    transforms: Vec<RigidTransform>,
}

fn write_view(run: &mut Run, dir: &str, name: &str, camera: &Camera, view: &TrainView) -> CliResult<()> {
    save_camera(&run.path(&format!("{dir}/{name}.json")), camera)?;
    run.artifact(&format!("{dir}/{name}.json"))?;
    run.write(&format!("{dir}/{name}.s2gb"), &encode_image(&view.image)?)?;
    if let Some(f) = &view.features {
        run.write(&format!("{dir}/{name}.s2gf"), &encode_feature_maps(f)?)?;
    }
    Ok(())
}

fn write_objects(run: &mut Run, dir: &str, fx: &ObjectsFixture) -> CliResult<()> {
    run.write(&format!("{dir}/scene.s2gs"), &encode_scene(&fx.scene)?)?;
    for (k, q) in fx.queries.iter().enumerate() {
        run.write(&format!("{dir}/query_{k}.s2gq"), &encode_query(q)?)?;
    }
    let truth = ObjectsTruth {
        centroids: fx.centroids.iter().map(|c| [c.x, c.y, c.z]).collect(),
        members: fx.members.clone(),
        suppressed: fx.suppressed.clone(),
    };
    run.json(&format!("{dir}/truth.json"), &truth)
}

pub fn run(a: GenFixturesArgs) -> CliResult<()> {
    let cfg = resolve::<FixtureSettings>(a.common.config.as_deref(), &a.common.overrides(&[]))?;
    let s = &cfg.settings;
    let mut run = Run::new("gen-fixtures", &a.common.out)?;

    // Self-reconstruction: posed views with feature maps, a held-out view,
    // seed points and a fit config.
    let recon = reconstruction_fixture(s.recon_primitives, s.recon_views, s.seed);
    for (i, v) in recon.views.iter().enumerate() {
        write_view(&mut run, "recon/views", &format!("view_{i:02}"), &v.camera, v)?;
    }
    save_camera(&run.path("recon/heldout/camera.json"), &recon.held_out.camera)?;
    run.artifact("recon/heldout/camera.json")?;
    run.write("recon/heldout/color.s2gb", &encode_image(&recon.held_out.image)?)?;
    let points: Vec<SeedPoint> = recon.seed_points.iter().map(|(p, c)| SeedPoint { position: [p.x, p.y, p.z], color: *c }).collect();
    run.json("recon/points.json", &points)?;
    run.write("recon/truth.s2gs", &encode_scene(&recon.truth.scene)?)?;
    let init = reconstruction_init_config();
    let fit = FitSettings {
        seed: s.seed,
        steps: 2000,
        primitives: init.primitives,
        sh_degree: init.sh_degree,
        background: init.background,
        ..FitSettings::default()
    };
    let text = toml::to_string(&fit).map_err(|e| crate::error::config_error(e.to_string()))?;
    run.write("recon/fit.toml", text.as_bytes())?;

    // Capture protocol: 40 views of the same scene.
    for (i, cam) in capture_cameras(RECON_SIZE).iter().enumerate() {
        let view = TrainView {
            camera: cam.clone(),
            image: render(&recon.truth.scene, cam).color,
            features: Some(observe_features(&recon.truth, cam)),
        };
        write_view(&mut run, "capture", &format!("view_{i:02}"), cam, &view)?;
    }

    write_objects(&mut run, "objects", &objects_fixture(s.seed, 0.0))?;
    write_objects(&mut run, "hull", &objects_fixture(s.seed, 0.1))?;

    // Tracking: 8-bit frames, dilated silhouettes and the commanded motion as prior.
    let tr = tracking_fixture(s.track_frames, s.track_step, s.track_degrees, s.track_size);
    run.write("track/scene.s2gs", &encode_scene(&tr.scene)?)?;
    let extract = ObjectExtract::from_indices(&tr.scene, tr.object.clone(), QueryDiagnostics::default())?;
    run.json("track/extract.json", &extract)?;
    save_camera(&run.path("track/frames/camera.json"), &tr.camera)?;
    run.artifact("track/frames/camera.json")?;
    for (i, ((frame, mask), delta)) in tr.frames.iter().zip(&tr.masks).zip(&tr.deltas).enumerate() {
        let f = format!("track/frames/frame_{i:03}.png");
        save_png(&run.path(&f), &quantize(frame))?;
        run.artifact(&f)?;
        let m = format!("track/frames/mask_{i:03}.png");
        save_mask_png(&run.path(&m), tr.camera.width(), mask)?;
        run.artifact(&m)?;
        run.json(&format!("track/frames/prior_{i:03}.json"), delta)?;
    }
    run.json("track/truth.json", &TrackTruth { transforms: tr.truth.clone() })?;

    run.finish(&cfg.text, &cfg.hash, Some(s.seed))
}
