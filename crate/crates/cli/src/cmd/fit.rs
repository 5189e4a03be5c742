use std::path::{Path, PathBuf};

use clap::Args;
use semsplat_core::io::{load_camera, load_feature_maps, load_json, load_scene};
use semsplat_core::scene::SceneModel;
use semsplat_core::trainer::{fit_with, init_from_points, init_uniform, InitConfig, LearningRates, TrainConfig, TrainView};
use semsplat_core::{Error, Vec3};
use serde::{Deserialize, Serialize};

use super::load_any_image;
use crate::config::resolve;
use crate::error::CliResult;
use crate::manifest::{list_files, Run};
use crate::Common;

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of views: NAME.json camera, NAME.png or NAME.s2gb image, optional NAME.s2gf features.
    #[arg(long)]
    pub views: PathBuf,
    /// Seed points, a JSON list of {"position": [x, y, z], "color": [r, g, b]}.
    #[arg(long, conflicts_with = "init")]
    pub points: Option<PathBuf>,
    /// Start from an existing scene file instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub seed: u64,
    pub steps: usize,
    pub lambda_dssim: f64,
    pub lambda_local: f64,
    pub lambda_feature: f64,
    pub lambda_normal: f64,
    pub lr_center: f64,
    pub lr_center_final: f64,
    pub lr_rotation: f64,
    pub lr_scale: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub lr_feature: f64,
    pub lr_decoder: f64,
    pub primitives: usize,
    pub sh_degree: usize,
    pub feature_dim: usize,
    pub decoder_hidden: usize,
    pub semantic_dim: usize,
    pub background: [f64; 3],
    /// Initial disk normal.
    pub facing: [f64; 3],
    /// Box for uniform initialization when no seed points are given.
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    /// Write a checkpoint scene every N steps; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        let i = InitConfig::default();
        Self {
            seed: 0,
            steps: t.steps,
            lambda_dssim: t.lambda_dssim,
            lambda_local: t.lambda_local,
            lambda_feature: t.lambda_feature,
            lambda_normal: t.lambda_normal,
            lr_center: t.lr.center,
            lr_center_final: t.lr.center_final,
            lr_rotation: t.lr.rotation,
            lr_scale: t.lr.scale,
            lr_opacity: t.lr.opacity,
            lr_color: t.lr.color,
            lr_feature: t.lr.feature,
            lr_decoder: t.lr.decoder,
            primitives: i.primitives,
            sh_degree: i.sh_degree,
            feature_dim: i.feature_dim,
            decoder_hidden: i.decoder_hidden,
            semantic_dim: i.semantic_dim,
            background: i.background,
            facing: [0.0, 0.0, 1.0],
            bbox_min: [-1.0; 3],
            bbox_max: [1.0; 3],
            checkpoint_every: 0,
        }
    }
}

impl FitSettings {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda_dssim: self.lambda_dssim,
            lambda_local: self.lambda_local,
            lambda_feature: self.lambda_feature,
            lambda_normal: self.lambda_normal,
            steps: self.steps,
            lr: LearningRates {
                center: self.lr_center,
                center_final: self.lr_center_final,
                rotation: self.lr_rotation,
                scale: self.lr_scale,
                opacity: self.lr_opacity,
                color: self.lr_color,
                feature: self.lr_feature,
                decoder: self.lr_decoder,
            },
            seed: self.seed,
        }
    }

    pub fn init_config(&self) -> InitConfig {
        InitConfig {
            primitives: self.primitives,
            sh_degree: self.sh_degree,
            feature_dim: self.feature_dim,
            decoder_hidden: self.decoder_hidden,
            semantic_dim: self.semantic_dim,
            seed: self.seed,
            background: self.background,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedPoint {
    pub position: [f64; 3],
    pub color: [f64; 3],
}

/// Views of a directory, ordered by file name.
pub fn load_views(dir: &Path) -> CliResult<Vec<TrainView>> {
    let files = list_files(dir)?;
    let mut views = Vec::new();
    for cam in files.iter().filter(|p| p.extension().is_some_and(|e| e == "json")) {
        let png = cam.with_extension("png");
        let image_path = if png.exists() { png } else { cam.with_extension("s2gb") };
        let camera = load_camera(cam)?;
        let image = load_any_image(&image_path)?;
        let feat = cam.with_extension("s2gf");
        let features = if feat.exists() { Some(load_feature_maps(&feat)?) } else { None };
        views.push(TrainView { camera, image, features });
    }
    if views.is_empty() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "no camera files in view directory")).into());
    }
    Ok(views)
}

pub fn run(a: FitArgs) -> CliResult<()> {
    let cfg = resolve::<FitSettings>(a.common.config.as_deref(), &a.common.overrides(&[]))?;
    let s = &cfg.settings;
    let mut run = Run::new("fit", &a.common.out)?;
    run.input(&a.views)?;
    let views = load_views(&a.views)?;
    let facing = Vec3::from(s.facing);
    let init: SceneModel = if let Some(p) = &a.init {
        run.input(p)?;
        load_scene(p)?
    } else if let Some(p) = &a.points {
        run.input(p)?;
        let pts: Vec<SeedPoint> = load_json(p)?;
        let pts: Vec<(Vec3, [f64; 3])> = pts.into_iter().map(|p| (Vec3::from(p.position), p.color)).collect();
        init_from_points(&pts, facing, &s.init_config())?
    } else {
        init_uniform(Vec3::from(s.bbox_min), Vec3::from(s.bbox_max), facing, &s.init_config())?
    };
    if let Some(v) = views.iter().find(|v| v.features.as_ref().is_some_and(|f| f.dim() != init.decoder.output_dim)) {
        return Err(Error::DimensionMismatch(format!("feature maps have {} channels, decoder emits {}", v.features.as_ref().map_or(0, |f| f.dim()), init.decoder.output_dim)).into());
    }
    let every = s.checkpoint_every;
    let mut checkpoints = Vec::new();
    let res = fit_with(&views, &s.train_config(), init, |step, loss, scene| {
        if step % 100 == 0 {
            log::info!("step {step} loss {loss:.6}");
        }
        if every > 0 && (step + 1) % every == 0 {
            let rel = format!("checkpoints/step_{:06}.s2gs", step + 1);
            semsplat_core::io::save_scene(&run.path(&rel), scene)?;
            checkpoints.push(rel);
        }
        Ok(())
    })?;
    for c in &checkpoints {
        run.artifact(c)?;
    }
    run.write("scene.s2gs", &semsplat_core::io::encode_scene(&res.scene)?)?;
    run.json("losses.json", &res.losses)?;
    run.finish(&cfg.text, &cfg.hash, Some(s.seed))
}
