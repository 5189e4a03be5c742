use std::path::PathBuf;

use clap::Args;
use semsplat_core::metrics::report;
use serde::{Deserialize, Serialize};

use super::load_any_image;
use crate::config::resolve;
use crate::error::CliResult;
use crate::manifest::Run;
use crate::Common;

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub common: Common,
    /// First image (PNG or S2GB).
    #[arg(long)]
    pub a: PathBuf,
    /// Second image (PNG or S2GB).
    #[arg(long)]
    pub b: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSettings {
    pub seed: u64,
}

pub fn run(a: MetricsArgs) -> CliResult<()> {
    let cfg = resolve::<MetricsSettings>(a.common.config.as_deref(), &a.common.overrides(&[]))?;
    let mut run = Run::new("metrics", &a.common.out)?;
    run.input(&a.a)?;
    run.input(&a.b)?;
    let r = report(&load_any_image(&a.a)?, &load_any_image(&a.b)?)?;
    println!("{}", serde_json::to_string(&r).map_err(semsplat_core::Error::from)?);
    run.json("report.json", &r)?;
    run.finish(&cfg.text, &cfg.hash, Some(cfg.settings.seed))
}
