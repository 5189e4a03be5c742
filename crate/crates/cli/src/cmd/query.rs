use std::path::PathBuf;

use clap::Args;
use semsplat_core::io::{load_query, load_scene};
use semsplat_core::query::{extract_object, QueryConfig};
use serde::{Deserialize, Serialize};

use crate::config::resolve;
use crate::error::CliResult;
use crate::manifest::Run;
use crate::Common;

#[derive(Args, Debug)]
pub struct QueryArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub scene: PathBuf,
    /// Query embedding (S2GQ file).
    #[arg(long)]
    pub query: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySettings {
    pub seed: u64,
    pub similarity_threshold: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_samples: usize,
    pub hull_tolerance: f64,
}

impl Default for QuerySettings {
    fn default() -> Self {
        let q = QueryConfig::default();
        Self {
            seed: 0,
            similarity_threshold: q.similarity_threshold,
            dbscan_eps: q.dbscan_eps,
            dbscan_min_samples: q.dbscan_min_samples,
            hull_tolerance: q.hull_tolerance,
        }
    }
}

pub fn run(a: QueryArgs) -> CliResult<()> {
    let cfg = resolve::<QuerySettings>(a.common.config.as_deref(), &a.common.overrides(&[]))?;
    let s = &cfg.settings;
    let mut run = Run::new("query", &a.common.out)?;
    run.input(&a.scene)?;
    run.input(&a.query)?;
    let scene = load_scene(&a.scene)?;
    let q = load_query(&a.query)?;
    let qc = QueryConfig {
        similarity_threshold: s.similarity_threshold,
        dbscan_eps: s.dbscan_eps,
        dbscan_min_samples: s.dbscan_min_samples,
        hull_tolerance: s.hull_tolerance,
    };
    let ex = extract_object(&scene, &q, &qc)?;
    run.json("report.json", &ex)?;
    run.finish(&cfg.text, &cfg.hash, Some(s.seed))
}
