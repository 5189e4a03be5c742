//! Observation pipelines, demonstrations and closed-loop evaluation on the
//! planar tasks.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{Episode, PolicyDataset, PolicyNet};
use super::sim::{expert_action, push_displacement, SimState, TaskKind, ACTION_DIM, GRASP_RADIUS, OBJECT_RADIUS};
use super::{sample_actions, NoisePredictor, NoiseSchedule, PolicyObservation};
use crate::error::{Error, Result};
use crate::fixtures::{planted_semantics, PlantedSemantics};
use crate::geometry::{Camera, Quat, RigidTransform, Vec3};
use crate::image::Image;
use crate::query::{extract_object, QueryConfig};
use crate::rasterizer::render;
use crate::scene::{SceneModel, SplatPrimitive};
use crate::tracker::{apply_motion, object_mask, track_frame, TrackConfig, TrackState};

/// Height of the object top faces; goal markers lie just above the table.
pub const OBJECT_HEIGHT: f64 = 0.04;
pub const GOAL_HEIGHT: f64 = 0.002;
pub const GOAL_MARKER_RADIUS: f64 = 0.03;
/// Sensor resolution for rendering and tracking.
pub const SENSOR_SIZE: usize = 64;
/// Downsampling factor from the sensor to the pixel observation.
pub const PIXEL_OBS_FACTOR: usize = 4;
/// Spacing of the splat grid covering each disk.
const SPLAT_SPACING: f64 = 0.0125;
pub const ROBOT_STATE_DIM: usize = 3;
/// Predicted action sequence length and executed prefix.
pub const ACTION_HORIZON: usize = 8;
pub const ACTION_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsSource {
    /// Ground-truth positions.
    State,
    /// Flattened downsampled render.
    Pixels,
    /// Centroids of extracted and tracked splat objects.
    S2gs,
}

impl ObsSource {
    pub fn name(self) -> &'static str {
        match self {
            ObsSource::State => "state",
            ObsSource::Pixels => "pixels",
            ObsSource::S2gs => "s2gs",
        }
    }
}

impl std::str::FromStr for ObsSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "state" => Ok(ObsSource::State),
            "pixels" | "rgb" => Ok(ObsSource::Pixels),
            "s2gs" => Ok(ObsSource::S2gs),
            _ => Err(Error::InvalidConfig(format!("unknown observation source '{s}', expected state, pixels or s2gs"))),
        }
    }
}

/// Appearance of the desk: table (background), objects A and B, goal marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub name: String,
    pub table: [f64; 3],
    pub objects: [[f64; 3]; 2],
    pub goal: [f64; 3],
}

impl Domain {
    pub fn training() -> Self {
        Self {
            name: "train".into(),
            table: [0.55, 0.45, 0.35],
            objects: [[0.85, 0.15, 0.1], [0.15, 0.25, 0.85]],
            goal: [0.2, 0.8, 0.25],
        }
    }

    /// Recolored table, objects and goal.
    pub fn shifted() -> Self {
        Self {
            name: "shifted".into(),
            table: [0.15, 0.18, 0.2],
            objects: [[0.95, 0.9, 0.2], [0.9, 0.5, 0.85]],
            goal: [0.3, 0.85, 0.95],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "train" => Ok(Self::training()),
            "shifted" => Ok(Self::shifted()),
            _ => Err(Error::InvalidConfig(format!("unknown domain '{name}', expected train or shifted"))),
        }
    }
}

/// Everything shared by the observation pipelines.
#[derive(Debug, Clone)]
pub struct DeskContext {
    pub semantics: PlantedSemantics,
    pub camera: Camera,
    pub query: QueryConfig,
    pub track: TrackConfig,
}

impl DeskContext {
    pub fn standard() -> Self {
        let fov = 2.0 * (0.55f64 / 1.5).atan();
        let camera = Camera::look_at(
            Vec3::new(0.5, 0.5, 1.5),
            Vec3::new(0.5, 0.5, 0.0),
            Vec3::new(0.0, -1.0, 0.0),
            Camera::intrinsics_from_fov(SENSOR_SIZE, SENSOR_SIZE, fov),
        )
        .expect("valid desk camera");
        Self {
            semantics: planted_semantics(3, 8, 32, 16, 11),
            camera,
            query: QueryConfig {
                similarity_threshold: 0.6,
                dbscan_eps: 0.03,
                dbscan_min_samples: 6,
                hull_tolerance: 1e-4,
            },
            track: TrackConfig {
                steps_per_frame: 10,
                lr_translation: 2e-4,
                lr_rotation: 1e-3,
            },
        }
    }
}

/// Splat scene of a task at its initial layout plus the primitive range of
/// every entity (objects first, then the goal marker unless stacking).
#[derive(Debug, Clone)]
pub struct DeskScene {
    pub scene: SceneModel,
    pub entities: Vec<Range<usize>>,
}

fn disk(center: Vec3, radius: f64, color: [f64; 3], feature: &[f64], out: &mut Vec<SplatPrimitive>) {
    let n = (radius / SPLAT_SPACING).floor() as i64;
    for j in -n..=n {
        for i in -n..=n {
            let (dx, dy) = (i as f64 * SPLAT_SPACING, j as f64 * SPLAT_SPACING);
            if dx * dx + dy * dy <= radius * radius + 1e-12 {
                let c = center + Vec3::new(dx, dy, 0.0);
                out.push(SplatPrimitive::new(c, Quat::IDENTITY, [0.6 * SPLAT_SPACING; 2], 0.9, color, 0, feature.to_vec()));
            }
        }
    }
}

pub fn entity_count(task: TaskKind) -> usize {
    task.object_count() + usize::from(task != TaskKind::Stack)
}

impl DeskScene {
    pub fn build(sim: &SimState, domain: &Domain, ctx: &DeskContext) -> Self {
        let mut prims = Vec::new();
        let mut entities = Vec::new();
        for (i, o) in sim.objects.iter().enumerate() {
            let start = prims.len();
            disk(Vec3::new(o.origin[0], o.origin[1], OBJECT_HEIGHT), OBJECT_RADIUS, domain.objects[i], &ctx.semantics.features[i], &mut prims);
            entities.push(start..prims.len());
        }
        if sim.task != TaskKind::Stack {
            let start = prims.len();
            let g = sim.goal.center;
            disk(Vec3::new(g[0], g[1], GOAL_HEIGHT), GOAL_MARKER_RADIUS, domain.goal, &ctx.semantics.features[2], &mut prims);
            entities.push(start..prims.len());
        }
        let scene = SceneModel::new(prims, ctx.semantics.decoder.clone(), domain.table, 0).expect("desk scene is consistent");
        Self { scene, entities }
    }

    /// Scene with every object moved by its accumulated offset.
    pub fn at(&self, sim: &SimState) -> SceneModel {
        let mut s = self.scene.clone();
        for (o, r) in sim.objects.iter().zip(&self.entities) {
            let idx: Vec<usize> = r.clone().collect();
            s = apply_motion(&s, &idx, &RigidTransform::from_translation(Vec3::new(o.offset[0], o.offset[1], 0.0)));
        }
        s
    }

    pub fn query_embedding<'a>(&self, entity: usize, task: TaskKind, ctx: &'a DeskContext) -> &'a [f64] {
        let feature = if entity < task.object_count() { entity } else { 2 };
        &ctx.semantics.embeddings[feature]
    }
}

/// Ground-truth observation: object (and goal) centers at their splat heights.
pub fn state_features(sim: &SimState) -> Vec<f64> {
    let mut s = Vec::new();
    for o in &sim.objects {
        let p = o.position();
        s.extend([p[0], p[1], OBJECT_HEIGHT]);
    }
    if sim.task != TaskKind::Stack {
        s.extend([sim.goal.center[0], sim.goal.center[1], GOAL_HEIGHT]);
    }
    s
}

pub fn robot_state(sim: &SimState) -> Vec<f64> {
    vec![sim.ee[0], sim.ee[1], if sim.grip_closed { 1.0 } else { 0.0 }]
}

pub fn pixel_features(scene: &SceneModel, camera: &Camera) -> Vec<f64> {
    render(scene, camera).color.downsample(PIXEL_OBS_FACTOR).data
}

/// Per-step centroids from a fresh extraction on the current scene.
pub fn extracted_features(scene: &SceneModel, task: TaskKind, desk: &DeskScene, ctx: &DeskContext) -> Result<Vec<f64>> {
    let mut s = Vec::new();
    for e in 0..desk.entities.len() {
        let x = extract_object(scene, desk.query_embedding(e, task, ctx), &ctx.query)?;
        s.extend(x.centroid.iter());
    }
    Ok(s)
}

/// Builds policy observations for one episode; the splat pipeline extracts
/// once and then tracks every object after each step.
pub struct Observer<'a> {
    source: ObsSource,
    domain: Domain,
    ctx: &'a DeskContext,
    desk: DeskScene,
    /// One tracker per entity; only objects are ever moved.
    trackers: Vec<TrackState>,
    grip_closed: bool,
    attached: Option<usize>,
}

impl<'a> Observer<'a> {
    pub fn new(source: ObsSource, sim: &SimState, domain: &Domain, ctx: &'a DeskContext) -> Result<Self> {
        let desk = DeskScene::build(sim, domain, ctx);
        let mut trackers = Vec::new();
        if source == ObsSource::S2gs {
            let scene = desk.at(sim);
            for e in 0..desk.entities.len() {
                let x = extract_object(&scene, desk.query_embedding(e, sim.task, ctx), &ctx.query)?;
                trackers.push(TrackState::new(x, &ctx.track));
            }
        }
        Ok(Self {
            source,
            domain: domain.clone(),
            ctx,
            desk,
            trackers,
            grip_closed: sim.grip_closed,
            attached: None,
        })
    }

    pub fn desk(&self) -> &DeskScene {
        &self.desk
    }

    pub fn observe(&self, sim: &SimState) -> PolicyObservation {
        let s = match self.source {
            ObsSource::State => state_features(sim),
            ObsSource::Pixels => pixel_features(&self.desk.at(sim), &self.ctx.camera),
            ObsSource::S2gs => self.trackers.iter().flat_map(|t| t.centroid().iter().copied().collect::<Vec<_>>()).collect(),
        };
        PolicyObservation { s, q: robot_state(sim) }
    }

    fn estimated(&self, i: usize) -> [f64; 2] {
        let c = self.trackers[i].centroid();
        [c.x, c.y]
    }

    /// Motion prior for every object from the commanded end-effector motion
    /// and the gripper, applied with the simulator's contact rules to the
    /// current estimates.
    fn priors(&mut self, sim: &SimState, ee_delta: [f64; 2]) -> Vec<RigidTransform> {
        let n = sim.objects.len();
        let was_closed = self.grip_closed;
        self.grip_closed = sim.grip_closed;
        let mut priors = vec![RigidTransform::IDENTITY; n];
        if let Some(i) = self.attached {
            if sim.grip_closed {
                priors[i] = RigidTransform::from_translation(Vec3::new(ee_delta[0], ee_delta[1], 0.0));
            }
        }
        if !sim.grip_closed {
            self.attached = None;
        } else if !was_closed {
            self.attached = (0..n)
                .map(|i| {
                    let p = self.estimated(i);
                    ((p[0] - sim.ee[0]).hypot(p[1] - sim.ee[1]), i)
                })
                .filter(|(d, _)| *d <= GRASP_RADIUS)
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, i)| i);
        }
        if sim.grip_closed && self.attached.is_none() {
            for (i, prior) in priors.iter_mut().enumerate() {
                // The estimate is where the object was before this step, as in the simulator.
                if let Some(d) = push_displacement(self.estimated(i), sim.ee, ee_delta) {
                    *prior = RigidTransform::from_translation(Vec3::new(d[0], d[1], 0.0));
                }
            }
        }
        priors
    }

    /// Update after the simulator executed one action.
    pub fn update(&mut self, sim: &SimState, ee_delta: [f64; 2]) -> Result<()> {
        if self.source != ObsSource::S2gs {
            self.grip_closed = sim.grip_closed;
            return Ok(());
        }
        let priors = self.priors(sim, ee_delta);
        let truth = self.desk.at(sim);
        let observed = render(&truth, &self.ctx.camera).color;
        for i in 0..sim.objects.len() {
            let idx: Vec<usize> = self.desk.entities[i].clone().collect();
            let mask = object_mask(&truth, &idx, &self.ctx.camera, 2);
            if !mask.iter().any(|m| *m) {
                continue;
            }
            let mut scene = self.desk.scene.clone();
            for (j, t) in self.trackers.iter().enumerate().take(sim.objects.len()) {
                if j != i {
                    scene = apply_motion(&scene, &t.object.primitive_indices, &t.current_transform);
                }
            }
            self.trackers[i] = track_frame(&self.trackers[i], &scene, &observed, &mask, &self.ctx.camera, &priors[i])?;
        }
        Ok(())
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }
}

/// Produces the next actions to execute.
pub trait Controller {
    fn act(&mut self, obs: &PolicyObservation, sim: &SimState) -> Result<Vec<[f64; 3]>>;
}

/// Expert with access to the simulator state; one action per call.
pub struct ExpertController;

impl Controller for ExpertController {
    fn act(&mut self, _obs: &PolicyObservation, sim: &SimState) -> Result<Vec<[f64; 3]>> {
        Ok(vec![expert_action(sim)])
    }
}

/// Samples an action sequence by full reverse diffusion and executes a prefix.
pub struct DiffusionController<'a, N: NoisePredictor> {
    pub net: &'a N,
    pub sched: &'a NoiseSchedule,
    pub rng: ChaCha8Rng,
    pub horizon: usize,
    pub chunk: usize,
}

impl<N: NoisePredictor> Controller for DiffusionController<'_, N> {
    fn act(&mut self, obs: &PolicyObservation, _sim: &SimState) -> Result<Vec<[f64; 3]>> {
        if !obs.is_finite() {
            return Err(Error::NonFinite { term: "policy observation", step: 0 });
        }
        let a = sample_actions(self.net, self.sched, obs, self.horizon * ACTION_DIM, &mut self.rng)?;
        Ok(a.chunks(ACTION_DIM).take(self.chunk).map(|c| [c[0], c[1], c[2]]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutOutcome {
    pub success: bool,
    pub steps: usize,
    /// End-effector position after every step.
    pub trajectory: Vec<[f64; 2]>,
    pub final_state: SimState,
}

/// Runs `controller` until success or the task horizon.
pub fn rollout(controller: &mut impl Controller, mut sim: SimState, observer: &mut Observer) -> Result<RolloutOutcome> {
    let horizon = sim.task.horizon();
    let mut trajectory = Vec::new();
    while !sim.success() && sim.steps < horizon {
        let obs = observer.observe(&sim);
        let actions = controller.act(&obs, &sim)?;
        if actions.is_empty() {
            return Err(Error::InvalidConfig("controller returned no actions".into()));
        }
        for a in actions {
            let fx = sim.step(&a);
            observer.update(&sim, fx.ee_delta)?;
            trajectory.push(sim.ee);
            if sim.success() || sim.steps >= horizon {
                break;
            }
        }
    }
    Ok(RolloutOutcome {
        success: sim.success(),
        steps: sim.steps,
        trajectory,
        final_state: sim,
    })
}

/// Length of `s` for a task under a source.
pub fn feature_dim(task: TaskKind, source: ObsSource) -> usize {
    match source {
        ObsSource::Pixels => (SENSOR_SIZE / PIXEL_OBS_FACTOR).pow(2) * 3,
        _ => 3 * entity_count(task),
    }
}

/// Expert demonstrations from the listed simulator seeds. Splat observations
/// come from a fresh extraction on every step's scene.
pub fn collect_demonstrations(task: TaskKind, source: ObsSource, domain: &Domain, ctx: &DeskContext, seeds: Range<u64>) -> Result<PolicyDataset> {
    let obs_dim = feature_dim(task, source) + ROBOT_STATE_DIM;
    let mut ds = PolicyDataset::new(ACTION_HORIZON, ACTION_DIM, obs_dim, ROBOT_STATE_DIM);
    let episodes: Vec<Result<Episode>> = seeds
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|seed| {
            let mut sim = SimState::generate(task, seed);
            let desk = DeskScene::build(&sim, domain, ctx);
            let mut ep = Episode {
                observations: Vec::new(),
                actions: Vec::new(),
            };
            while !sim.success() && sim.steps < task.horizon() {
                let s = match source {
                    ObsSource::State => state_features(&sim),
                    ObsSource::Pixels => pixel_features(&desk.at(&sim), &ctx.camera),
                    ObsSource::S2gs => extracted_features(&desk.at(&sim), task, &desk, ctx)?,
                };
                let a = expert_action(&sim);
                ep.observations.push(s.into_iter().chain(robot_state(&sim)).collect());
                ep.actions.push(a.to_vec());
                sim.step(&a);
            }
            if !sim.success() {
                return Err(Error::InvalidConfig(format!("expert failed {task} seed {seed}")));
            }
            Ok(ep)
        })
        .collect();
    for e in episodes {
        ds.episodes.push(e?);
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub sim_seed: u64,
    pub success: bool,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskKind,
    pub obs_source: ObsSource,
    pub domain: String,
    pub episodes: usize,
    pub success_rate: f64,
    pub outcomes: Vec<EpisodeResult>,
}

/// Runs `episodes` closed-loop episodes on simulator seeds
/// `sim_seed_base + i`; episode `i` samples from its own stream of `seed`.
pub fn evaluate(net: &PolicyNet, sched: &NoiseSchedule, task: TaskKind, source: ObsSource, domain: &Domain, ctx: &DeskContext, episodes: usize, sim_seed_base: u64, seed: u64) -> Result<EvalReport> {
    let expected = feature_dim(task, source) + ROBOT_STATE_DIM;
    if net.obs_dim != expected || net.action_dim != ACTION_DIM {
        return Err(Error::DimensionMismatch(format!(
            "policy expects obs {} / action {}, {task} with {} observations needs {expected} / {ACTION_DIM}",
            net.obs_dim,
            net.action_dim,
            source.name()
        )));
    }
    let outcomes: Vec<Result<EpisodeResult>> = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let sim_seed = sim_seed_base + i as u64;
            let sim = SimState::generate(task, sim_seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut ctl = DiffusionController {
                net,
                sched,
                rng,
                horizon: net.horizon,
                chunk: ACTION_CHUNK.min(net.horizon),
            };
            let mut obs = Observer::new(source, &sim, domain, ctx)?;
            let out = rollout(&mut ctl, sim, &mut obs)?;
            Ok(EpisodeResult {
                episode: i,
                sim_seed,
                success: out.success,
                steps: out.steps,
            })
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let wins = outcomes.iter().filter(|o| o.success).count();
    Ok(EvalReport {
        task,
        obs_source: source,
        domain: domain.name.clone(),
        episodes,
        success_rate: if episodes == 0 { 0.0 } else { wins as f64 / episodes as f64 },
        outcomes,
    })
}

/// Pixel observations flattened to a `width x height x 3` image for inspection.
pub fn pixel_observation_image(s: &[f64]) -> Result<Image> {
    let side = SENSOR_SIZE / PIXEL_OBS_FACTOR;
    Image::from_vec(side, side, 3, s.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expert_replay_succeeds_through_every_pipeline() {
        let ctx = DeskContext::standard();
        for task in TaskKind::ALL {
            for source in [ObsSource::State, ObsSource::Pixels, ObsSource::S2gs] {
                let sim = SimState::generate(task, 7);
                let mut obs = Observer::new(source, &sim, &Domain::training(), &ctx).unwrap();
                let out = rollout(&mut ExpertController, sim, &mut obs).unwrap();
                assert!(out.success, "{task} {source:?}");
            }
        }
    }

    #[test]
    fn extraction_matches_ground_truth() {
        let ctx = DeskContext::standard();
        for task in TaskKind::ALL {
            let sim = SimState::generate(task, 3);
            let desk = DeskScene::build(&sim, &Domain::shifted(), &ctx);
            let s = extracted_features(&desk.at(&sim), task, &desk, &ctx).unwrap();
            let truth = state_features(&sim);
            for (a, b) in s.iter().zip(&truth) {
                assert!((a - b).abs() < 1e-9, "{task}: {s:?} vs {truth:?}");
            }
        }
    }

    #[test]
    fn tracking_follows_expert_push() {
        let ctx = DeskContext::standard();
        for seed in 0..3 {
            let mut sim = SimState::generate(TaskKind::Push, seed);
            let mut obs = Observer::new(ObsSource::S2gs, &sim, &Domain::training(), &ctx).unwrap();
            let mut worst: f64 = 0.0;
            while !sim.success() && sim.steps < 80 {
                let fx = sim.step(&expert_action(&sim));
                obs.update(&sim, fx.ee_delta).unwrap();
                let s = obs.observe(&sim).s;
                let p = sim.objects[0].position();
                worst = worst.max((s[0] - p[0]).hypot(s[1] - p[1]));
            }
            assert!(worst < 0.01, "seed {seed}: tracking error {worst}");
        }
    }
}
