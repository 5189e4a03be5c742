use std::path::PathBuf;

use clap::Args;
use semsplat_core::io::{encode_scene, load_camera, load_json, load_mask_png, load_scene};
use semsplat_core::query::ObjectExtract;
use semsplat_core::tracker::{commit, track_frame, TrackConfig, TrackState};
use semsplat_core::{Error, RigidTransform};
use serde::{Deserialize, Serialize};

use super::load_any_image;
use crate::config::resolve;
use crate::error::CliResult;
use crate::manifest::Run;
use crate::Common;

#[derive(Args, Debug)]
pub struct TrackArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub scene: PathBuf,
    /// Extraction report written by `query`.
    #[arg(long)]
    pub extract: PathBuf,
    /// camera.json plus frame_NNN.png, mask_NNN.png and optional prior_NNN.json per frame.
    #[arg(long)]
    pub frames: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackSettings {
    pub seed: u64,
    pub steps_per_frame: usize,
    pub lr_translation: f64,
    pub lr_rotation: f64,
}

impl Default for TrackSettings {
    fn default() -> Self {
        let t = TrackConfig::default();
        Self {
            seed: 0,
            steps_per_frame: t.steps_per_frame,
            lr_translation: t.lr_translation,
            lr_rotation: t.lr_rotation,
        }
    }
}

#[derive(Debug, Serialize)]
struct FrameResult {
    frame: usize,
    /// Cumulative motion since extraction.
    transform: RigidTransform,
    centroid: [f64; 3],
    loss: Option<f64>,
}

pub fn run(a: TrackArgs) -> CliResult<()> {
    let cfg = resolve::<TrackSettings>(a.common.config.as_deref(), &a.common.overrides(&[]))?;
    let s = &cfg.settings;
    let mut run = Run::new("track", &a.common.out)?;
    run.input(&a.scene)?;
    run.input(&a.extract)?;
    run.input(&a.frames)?;
    let scene = load_scene(&a.scene)?;
    let extract: ObjectExtract = load_json(&a.extract)?;
    if let Some(i) = extract.primitive_indices.iter().find(|i| **i >= scene.len()) {
        return Err(Error::DimensionMismatch(format!("extract references primitive {i}, scene has {}", scene.len())).into());
    }
    let camera = load_camera(&a.frames.join("camera.json"))?;
    let tc = TrackConfig {
        steps_per_frame: s.steps_per_frame,
        lr_translation: s.lr_translation,
        lr_rotation: s.lr_rotation,
    };
    let mut state = TrackState::new(extract, &tc);
    let mut results = Vec::new();
    for frame in 0.. {
        let image_path = a.frames.join(format!("frame_{frame:03}.png"));
        if !image_path.exists() {
            break;
        }
        let observed = load_any_image(&image_path)?;
        let (w, h, mask) = load_mask_png(&a.frames.join(format!("mask_{frame:03}.png")))?;
        if (w, h) != (camera.width(), camera.height()) || (observed.width, observed.height) != (w, h) {
            return Err(Error::DimensionMismatch(format!(
                "frame {frame}: image {}x{}, mask {w}x{h}, camera {}x{}",
                observed.width,
                observed.height,
                camera.width(),
                camera.height()
            ))
            .into());
        }
        let prior_path = a.frames.join(format!("prior_{frame:03}.json"));
        let prior: RigidTransform = if prior_path.exists() { load_json(&prior_path)? } else { RigidTransform::IDENTITY };
        state = track_frame(&state, &scene, &observed, &mask, &camera, &prior)?;
        let c = state.centroid();
        results.push(FrameResult {
            frame,
            transform: state.current_transform,
            centroid: [c.x, c.y, c.z],
            loss: state.last_loss,
        });
    }
    if results.is_empty() {
        return Err(Error::io(&a.frames, std::io::Error::new(std::io::ErrorKind::NotFound, "no frame_000.png in frame directory")).into());
    }
    run.json("transforms.json", &results)?;
    run.write("scene.s2gs", &encode_scene(&commit(&scene, &state))?)?;
    run.finish(&cfg.text, &cfg.hash, Some(s.seed))
}
