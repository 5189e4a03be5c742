//! `semsplat`: the semantic splatting pipeline and the desk-scale experiments.

mod cmd;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "semsplat", version, about = "Semantic 2D Gaussian splatting: fit, render, query, track and policy experiments.")]
struct Cli {
    /// Worker threads. Outputs do not depend on it.
    #[arg(long, global = true, env = "SEMSPLAT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory; receives all artifacts, config.toml and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Key-value (TOML) config file; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Global seed; shorthand for `--set seed=N`.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Common {
    /// Overrides with the dedicated flags applied last.
    pub fn overrides(&self, extra: &[(&str, Option<String>)]) -> Vec<String> {
        let mut v = self.set.clone();
        if let Some(s) = self.seed {
            v.push(format!("seed={s}"));
        }
        for (k, val) in extra {
            if let Some(val) = val {
                v.push(format!("{k}={val}"));
            }
        }
        v
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit a scene to posed views (camera JSON + PNG/S2GB image + optional S2GF features).
    Fit(cmd::fit::FitArgs),
    /// Render every channel of a scene from one camera.
    Render(cmd::render::RenderArgs),
    /// Extract the object matching a query embedding.
    Query(cmd::query::QueryArgs),
    /// Track an extracted object through a directory of frames.
    Track(cmd::track::TrackArgs),
    /// Collect demonstrations and train a diffusion policy.
    TrainPolicy(cmd::policy::TrainPolicyArgs),
    /// Evaluate a trained policy in closed loop.
    EvalPolicy(cmd::policy::EvalPolicyArgs),
    /// Compare two images (PSNR/SSIM).
    Metrics(cmd::metrics::MetricsArgs),
    /// Write the synthetic fixture set.
    GenFixtures(cmd::fixtures::GenFixturesArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(a) => cmd::fit::run(a),
        Command::Render(a) => cmd::render::run(a),
        Command::Query(a) => cmd::query::run(a),
        Command::Track(a) => cmd::track::run(a),
        Command::TrainPolicy(a) => cmd::policy::train(a),
        Command::EvalPolicy(a) => cmd::policy::eval(a),
        Command::Metrics(a) => cmd::metrics::run(a),
        Command::GenFixtures(a) => cmd::fixtures::run(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return ExitCode::from(error::report(&CliError::Usage(e.to_string())) as u8),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return ExitCode::from(error::report(&CliError::Usage("--threads must be at least 1".into())) as u8);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return ExitCode::from(error::report(&CliError::Usage(format!("cannot start {n} threads: {e}"))) as u8);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => ExitCode::from(error::report(&e) as u8),
    }
}
