use std::path::PathBuf;

use clap::Args;
use semsplat_core::io::{encode_image, load_camera, load_scene, save_png};
use semsplat_core::{render, Image};
use serde::{Deserialize, Serialize};

use crate::config::resolve;
use crate::error::CliResult;
use crate::manifest::Run;
use crate::Common;

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub scene: PathBuf,
    /// Camera JSON.
    #[arg(long)]
    pub camera: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub seed: u64,
    /// Also write the per-pixel decoded local and global semantic maps.
    pub decoded: bool,
}

pub fn run(a: RenderArgs) -> CliResult<()> {
    let cfg = resolve::<RenderSettings>(a.common.config.as_deref(), &a.common.overrides(&[]))?;
    let mut run = Run::new("render", &a.common.out)?;
    run.input(&a.scene)?;
    run.input(&a.camera)?;
    let scene = load_scene(&a.scene)?;
    let camera = load_camera(&a.camera)?;
    let out = render(&scene, &camera);
    save_png(&run.path("color.png"), &out.color)?;
    run.artifact("color.png")?;
    for (name, img) in [
        ("color", &out.color),
        ("depth", &out.depth),
        ("normal", &out.normal),
        ("weight", &out.weight),
        ("feature", &out.feature),
        ("final_transmittance", &out.final_transmittance),
    ] {
        run.write(&format!("{name}.s2gb"), &encode_image(img)?)?;
    }
    if cfg.settings.decoded {
        let d = scene.decoder.output_dim;
        let mut local = Image::new(out.width(), out.height(), d);
        let mut global = Image::new(out.width(), out.height(), d);
        for (i, f) in out.feature.data.chunks(out.feature.channels).enumerate() {
            let (l, g) = scene.decoder.decode(f);
            local.data[i * d..(i + 1) * d].copy_from_slice(&l);
            global.data[i * d..(i + 1) * d].copy_from_slice(&g);
        }
        run.write("semantic_local.s2gb", &encode_image(&local)?)?;
        run.write("semantic_global.s2gb", &encode_image(&global)?)?;
    }
    run.finish(&cfg.text, &cfg.hash, Some(cfg.settings.seed))
}
