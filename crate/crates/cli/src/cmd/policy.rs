use std::path::PathBuf;

use clap::Args;
use semsplat_core::io::{decode_dataset, encode_dataset, load_dataset, load_json};
use semsplat_core::policy::rollout::{collect_demonstrations, evaluate, feature_dim, DeskContext, Domain, ROBOT_STATE_DIM};
use semsplat_core::policy::sim::ACTION_DIM;
use semsplat_core::policy::{train_policy, NoiseSchedule, ObsSource, PolicyNet, PolicyTrainConfig, TaskKind};
use semsplat_core::Error;
use serde::{Deserialize, Serialize};

use crate::config::resolve;
use crate::error::CliResult;
use crate::manifest::Run;
use crate::Common;

#[derive(Args, Debug)]
pub struct TrainPolicyArgs {
    #[command(flatten)]
    pub common: Common,
    /// pick, push or stack.
    #[arg(long)]
    pub task: Option<String>,
    /// Observation source: state, pixels (alias rgb) or s2gs.
    #[arg(long)]
    pub obs: Option<String>,
    /// Number of expert demonstrations to collect.
    #[arg(long)]
    pub demos: Option<usize>,
    /// Train on an existing S2GD dataset instead of collecting demonstrations.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainPolicySettings {
    pub seed: u64,
    pub task: TaskKind,
    pub obs_source: ObsSource,
    /// Demonstrations use simulator seeds `demo_seed_base..demo_seed_base + demos`.
    pub demos: usize,
    pub demo_seed_base: u64,
    /// Appearance domain of the demonstrations.
    pub domain: String,
    pub diffusion_steps: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub emb_dim: usize,
}

impl Default for TrainPolicySettings {
    fn default() -> Self {
        let t = PolicyTrainConfig::default();
        Self {
            seed: 0,
            task: TaskKind::Push,
            obs_source: ObsSource::State,
            demos: 100,
            demo_seed_base: 0,
            domain: "train".into(),
            diffusion_steps: 100,
            steps: t.steps,
            batch_size: t.batch_size,
            lr: t.lr,
            hidden: t.hidden,
            emb_dim: t.emb_dim,
        }
    }
}

/// Contents of `policy.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyFile {
    pub task: TaskKind,
    pub obs_source: ObsSource,
    pub diffusion_steps: usize,
    pub net: PolicyNet,
}

pub fn train(a: TrainPolicyArgs) -> CliResult<()> {
    let extra = [
        ("task", a.task.as_ref().map(|t| format!("\"{t}\""))),
        ("obs_source", a.obs.as_ref().map(|o| format!("\"{o}\""))),
        ("demos", a.demos.map(|d| d.to_string())),
    ];
    let cfg = resolve::<TrainPolicySettings>(a.common.config.as_deref(), &a.common.overrides(&extra))?;
    let s = &cfg.settings;
    let mut run = Run::new("train-policy", &a.common.out)?;
    if s.diffusion_steps == 0 {
        return Err(Error::InvalidConfig("diffusion_steps must be positive".into()).into());
    }
    let sched = NoiseSchedule::cosine(s.diffusion_steps);
    let dataset = match &a.dataset {
        Some(p) => {
            run.input(p)?;
            let ds = load_dataset(p)?;
            let want = feature_dim(s.task, s.obs_source) + ROBOT_STATE_DIM;
            if ds.obs_dim != want || ds.action_dim != ACTION_DIM {
                return Err(Error::DimensionMismatch(format!(
                    "dataset has obs {} / action {}, {} with {} observations needs {want} / {ACTION_DIM}",
                    ds.obs_dim,
                    ds.action_dim,
                    s.task,
                    s.obs_source.name()
                ))
                .into());
            }
            ds
        }
        None => {
            let domain = Domain::by_name(&s.domain)?;
            let ctx = DeskContext::standard();
            collect_demonstrations(s.task, s.obs_source, &domain, &ctx, s.demo_seed_base..s.demo_seed_base + s.demos as u64)?
        }
    };
    // Train on the dataset as stored so `--dataset` reruns match.
    let bytes = encode_dataset(&dataset)?;
    run.write("dataset.s2gd", &bytes)?;
    let dataset = decode_dataset(&bytes)?;
    let tc = PolicyTrainConfig {
        steps: s.steps,
        batch_size: s.batch_size,
        lr: s.lr,
        hidden: s.hidden.clone(),
        emb_dim: s.emb_dim,
        seed: s.seed,
    };
    let trained = train_policy(&dataset, &sched, &tc)?;
    run.json(
        "policy.json",
        &PolicyFile {
            task: s.task,
            obs_source: s.obs_source,
            diffusion_steps: s.diffusion_steps,
            net: trained.net,
        },
    )?;
    run.json("losses.json", &trained.losses)?;
    run.finish(&cfg.text, &cfg.hash, Some(s.seed))
}

#[derive(Args, Debug)]
pub struct EvalPolicyArgs {
    #[command(flatten)]
    pub common: Common,
    /// policy.json written by `train-policy`.
    #[arg(long)]
    pub policy: PathBuf,
    /// Must match the policy's task when given.
    #[arg(long)]
    pub task: Option<String>,
    /// Must match the policy's observation source when given.
    #[arg(long)]
    pub obs: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Appearance domain: train or shifted.
    #[arg(long)]
    pub domain: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalPolicySettings {
    pub seed: u64,
    pub episodes: usize,
    /// Episode `i` runs simulator seed `sim_seed_base + i`.
    pub sim_seed_base: u64,
    pub domain: String,
}

impl Default for EvalPolicySettings {
    fn default() -> Self {
        Self {
            seed: 0,
            episodes: 50,
            sim_seed_base: 100_000,
            domain: "train".into(),
        }
    }
}

pub fn eval(a: EvalPolicyArgs) -> CliResult<()> {
    let extra = [
        ("episodes", a.episodes.map(|e| e.to_string())),
        ("domain", a.domain.as_ref().map(|d| format!("\"{d}\""))),
    ];
    let cfg = resolve::<EvalPolicySettings>(a.common.config.as_deref(), &a.common.overrides(&extra))?;
    let s = &cfg.settings;
    let mut run = Run::new("eval-policy", &a.common.out)?;
    run.input(&a.policy)?;
    let policy: PolicyFile = load_json(&a.policy)?;
    if let Some(t) = &a.task {
        let t: TaskKind = t.parse()?;
        if t != policy.task {
            return Err(Error::InvalidConfig(format!("policy was trained for {}, not {t}", policy.task)).into());
        }
    }
    if let Some(o) = &a.obs {
        let o: ObsSource = o.parse()?;
        if o != policy.obs_source {
            return Err(Error::InvalidConfig(format!("policy observes {}, not {}", policy.obs_source.name(), o.name())).into());
        }
    }
    if policy.diffusion_steps == 0 {
        return Err(Error::Malformed("policy has zero diffusion steps".into()).into());
    }
    let sched = NoiseSchedule::cosine(policy.diffusion_steps);
    let domain = Domain::by_name(&s.domain)?;
    let ctx = DeskContext::standard();
    let report = evaluate(&policy.net, &sched, policy.task, policy.obs_source, &domain, &ctx, s.episodes, s.sim_seed_base, s.seed)?;
    log::info!("{} / {} on {}: success rate {:.3}", policy.task, policy.obs_source.name(), domain.name, report.success_rate);
    run.json("report.json", &report)?;
    run.finish(&cfg.text, &cfg.hash, Some(s.seed))
}
