//! Planar kinematic manipulation tasks on the unit square.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EE_RADIUS: f64 = 0.02;
pub const OBJECT_RADIUS: f64 = 0.05;
/// Largest end-effector displacement per step (action magnitude 1).
pub const MAX_STEP: f64 = 0.05;
/// The gripper grasps an object whose center is this close when it closes.
pub const GRASP_RADIUS: f64 = 0.03;
pub const SUCCESS_TOLERANCE: f64 = 0.03;
/// Action layout: `(dx, dy, grip)`, each in `[-1, 1]`; grip > 0 closes.
pub const ACTION_DIM: usize = 3;
/// Nominal end-effector start; episodes jitter it by up to 0.05 per axis.
pub const HOME: [f64; 2] = [0.5, 0.12];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Pick,
    Push,
    Stack,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Pick, TaskKind::Push, TaskKind::Stack];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Pick => "pick",
            TaskKind::Push => "push",
            TaskKind::Stack => "stack",
        }
    }

    pub fn object_count(self) -> usize {
        match self {
            TaskKind::Stack => 2,
            _ => 1,
        }
    }

    /// Step budget for one episode.
    pub fn horizon(self) -> usize {
        match self {
            TaskKind::Pick => 80,
            TaskKind::Push => 80,
            TaskKind::Stack => 80,
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pick" => Ok(TaskKind::Pick),
            "push" => Ok(TaskKind::Push),
            "stack" => Ok(TaskKind::Stack),
            _ => Err(Error::InvalidConfig(format!("unknown task '{s}', expected pick, push or stack"))),
        }
    }
}

/// An object's position is `origin + offset`; the offset accumulates every
/// displacement since the episode started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub origin: [f64; 2],
    pub offset: [f64; 2],
    pub attached: bool,
}

impl SimObject {
    fn at(p: [f64; 2]) -> Self {
        Self {
            origin: p,
            offset: [0.0; 2],
            attached: false,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.origin[0] + self.offset[0], self.origin[1] + self.offset[1]]
    }

    fn displace(&mut self, d: [f64; 2]) {
        self.offset[0] += d[0];
        self.offset[1] += d[1];
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub task: TaskKind,
    pub ee: [f64; 2],
    pub grip_closed: bool,
    /// Pick and push: the single object. Stack: A (carried) then B (base).
    pub objects: Vec<SimObject>,
    /// Unused by stack, whose target is object B.
    pub goal: Goal,
    pub steps: usize,
}

/// Displacements applied by one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEffect {
    pub ee_delta: [f64; 2],
    pub object_deltas: Vec<[f64; 2]>,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn clamp_unit(p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

fn sanitize(a: f64) -> f64 {
    if a.is_finite() {
        a.clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Displacement of an object at `p` overlapped by a closed empty gripper
/// at `ee` that just moved by `ee_delta`: the object slides along the motion
/// direction until contact, or along the center line when the gripper did
/// not move. The result stays inside the workspace.
pub fn push_displacement(p: [f64; 2], ee: [f64; 2], ee_delta: [f64; 2]) -> Option<[f64; 2]> {
    let reach = OBJECT_RADIUS + EE_RADIUS;
    let w = sub(p, ee);
    let d = w[0].hypot(w[1]);
    if d >= reach {
        return None;
    }
    let m = ee_delta[0].hypot(ee_delta[1]);
    let np = if m > 1e-12 {
        let u = [ee_delta[0] / m, ee_delta[1] / m];
        let wu = w[0] * u[0] + w[1] * u[1];
        let s = -wu + (wu * wu - d * d + reach * reach).sqrt();
        [p[0] + s * u[0], p[1] + s * u[1]]
    } else if d > 1e-12 {
        [ee[0] + w[0] / d * reach, ee[1] + w[1] / d * reach]
    } else {
        [ee[0] + reach, ee[1]]
    };
    Some(sub(clamp_unit(np), p))
}

impl SimState {
    /// Random initial state for `task`; identical seeds give identical states.
    pub fn generate(task: TaskKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000 ^ (task as u64) << 40);
        let mut pt = |lo: f64, hi: f64| [rng.random_range(lo..hi), rng.random_range(lo..hi)];
        let home = pt(-0.05, 0.05);
        let ee = [HOME[0] + home[0], HOME[1] + home[1]];
        let (objects, goal) = loop {
            match task {
                TaskKind::Pick => {
                    let (o, g) = (pt(0.2, 0.8), pt(0.2, 0.8));
                    if dist(o, g) >= 0.25 {
                        break (vec![o], g);
                    }
                }
                TaskKind::Push => {
                    // Goal along +x of the object.
                    let o = pt(0.25, 0.55);
                    let o = [o[0], o[1] + 0.1];
                    let d = pt(0.15, 0.3)[0];
                    break (vec![o], [o[0] + d, o[1]]);
                }
                TaskKind::Stack => {
                    let (a, b) = (pt(0.2, 0.8), pt(0.2, 0.8));
                    if dist(a, b) >= 0.25 {
                        break (vec![a, b], b);
                    }
                }
            }
        };
        Self {
            task,
            ee,
            grip_closed: false,
            objects: objects.into_iter().map(SimObject::at).collect(),
            goal: Goal {
                center: goal,
                radius: SUCCESS_TOLERANCE,
            },
            steps: 0,
        }
    }

    /// Move, then update the grasp, then resolve pushes by a closed empty gripper.
    pub fn step(&mut self, action: &[f64]) -> StepEffect {
        let a = [0, 1, 2].map(|i| action.get(i).copied().map(sanitize).unwrap_or(0.0));
        let before: Vec<[f64; 2]> = self.objects.iter().map(SimObject::position).collect();
        let target = clamp_unit([self.ee[0] + a[0] * MAX_STEP, self.ee[1] + a[1] * MAX_STEP]);
        let ee_delta = sub(target, self.ee);
        self.ee = target;
        for o in self.objects.iter_mut().filter(|o| o.attached) {
            o.displace(ee_delta);
        }
        let close = a[2] > 0.0;
        if !close {
            for o in &mut self.objects {
                o.attached = false;
            }
        } else if !self.grip_closed {
            let nearest = self
                .objects
                .iter()
                .enumerate()
                .map(|(i, o)| (dist(o.position(), self.ee), i))
                .filter(|(d, _)| *d <= GRASP_RADIUS)
                .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            if let Some((_, i)) = nearest {
                self.objects[i].attached = true;
            }
        }
        self.grip_closed = close;
        if close && !self.objects.iter().any(|o| o.attached) {
            for o in &mut self.objects {
                if let Some(d) = push_displacement(o.position(), self.ee, ee_delta) {
                    o.displace(d);
                }
            }
        }
        self.steps += 1;
        StepEffect {
            ee_delta,
            object_deltas: self.objects.iter().zip(&before).map(|(o, b)| sub(o.position(), *b)).collect(),
        }
    }

    pub fn success(&self) -> bool {
        match self.task {
            TaskKind::Pick => {
                let o = &self.objects[0];
                o.attached && dist(o.position(), self.goal.center) < SUCCESS_TOLERANCE
            }
            TaskKind::Push => dist(self.objects[0].position(), self.goal.center) < SUCCESS_TOLERANCE,
            TaskKind::Stack => {
                let (a, b) = (&self.objects[0], &self.objects[1]);
                !a.attached && dist(a.position(), b.position()) < SUCCESS_TOLERANCE
            }
        }
    }

    /// Position the task drives its first object to.
    pub fn target(&self) -> [f64; 2] {
        match self.task {
            TaskKind::Stack => self.objects[1].position(),
            _ => self.goal.center,
        }
    }

    /// Shift every entity and the goal by `d`, ignoring workspace bounds.
    pub fn translated(&self, d: [f64; 2]) -> Self {
        let mut s = self.clone();
        s.ee = [s.ee[0] + d[0], s.ee[1] + d[1]];
        for o in &mut s.objects {
            o.origin = [o.origin[0] + d[0], o.origin[1] + d[1]];
        }
        s.goal.center = [s.goal.center[0] + d[0], s.goal.center[1] + d[1]];
        s
    }
}

fn toward(from: [f64; 2], to: [f64; 2]) -> [f64; 2] {
    let v = [(to[0] - from[0]) / MAX_STEP, (to[1] - from[1]) / MAX_STEP];
    let n = v[0].hypot(v[1]);
    if n > 1.0 {
        [v[0] / n, v[1] / n]
    } else {
        v
    }
}

fn act(m: [f64; 2], close: bool) -> [f64; 3] {
    [m[0], m[1], if close { 1.0 } else { -1.0 }]
}

/// Reach `obj` open, close on it, then carry it so that it lands on `dest`.
fn grasp_and_carry(sim: &SimState, idx: usize, dest: [f64; 2], release_at_dest: bool) -> [f64; 3] {
    let o = &sim.objects[idx];
    let p = o.position();
    if o.attached {
        let aim = [sim.ee[0] + dest[0] - p[0], sim.ee[1] + dest[1] - p[1]];
        let arrived = dist(p, dest) < 0.01;
        return act(toward(sim.ee, aim), !(release_at_dest && arrived));
    }
    if sim.grip_closed {
        return act(toward(sim.ee, p), false);
    }
    act(toward(sim.ee, p), dist(sim.ee, p) < 0.01)
}

fn push_action(sim: &SimState) -> [f64; 3] {
    let p = sim.objects[0].position();
    let d = sub(sim.goal.center, p);
    let n = d[0].hypot(d[1]);
    if n < 1e-9 {
        return [0.0, 0.0, -1.0];
    }
    let dir = [d[0] / n, d[1] / n];
    let reach = OBJECT_RADIUS + EE_RADIUS;
    let rel = sub(sim.ee, p);
    let along = rel[0] * dir[0] + rel[1] * dir[1];
    let perp = (rel[0] - along * dir[0]).hypot(rel[1] - along * dir[1]);
    if sim.grip_closed && along < -(reach - 0.01) && perp < 0.015 {
        let s = n.min(MAX_STEP);
        let aim = [p[0] - dir[0] * (reach - s), p[1] - dir[1] * (reach - s)];
        return act(toward(sim.ee, aim), true);
    }
    let pre = [p[0] - dir[0] * (reach + 0.01), p[1] - dir[1] * (reach + 0.01)];
    act(toward(sim.ee, pre), dist(sim.ee, pre) < 0.01)
}

/// Memoryless proportional controller for the current state.
pub fn expert_action(sim: &SimState) -> [f64; 3] {
    match sim.task {
        TaskKind::Pick => grasp_and_carry(sim, 0, sim.goal.center, false),
        TaskKind::Push => push_action(sim),
        TaskKind::Stack => grasp_and_carry(sim, 0, sim.objects[1].position(), true),
    }
}

/// Actions of the expert run from `sim` until success or the task horizon.
pub fn scripted_expert(sim: &SimState) -> Vec<[f64; 3]> {
    let mut s = sim.clone();
    let mut out = Vec::new();
    while !s.success() && s.steps < s.task.horizon() {
        let a = expert_action(&s);
        s.step(&a);
        out.push(a);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn replay(sim: &SimState, actions: &[[f64; 3]]) -> SimState {
        let mut s = sim.clone();
        for a in actions {
            s.step(a);
        }
        s
    }

    #[test]
    fn expert_succeeds_on_every_task() {
        for task in TaskKind::ALL {
            for seed in 0..100 {
                let sim = SimState::generate(task, seed);
                let end = replay(&sim, &scripted_expert(&sim));
                assert!(end.success(), "{task} seed {seed}: {end:?}");
            }
        }
    }

    #[test]
    fn push_first_action_heads_for_contact_side() {
        let sim = SimState {
            task: TaskKind::Push,
            ee: [0.1, 0.5],
            grip_closed: false,
            objects: vec![SimObject::at([0.4, 0.5])],
            goal: Goal { center: [0.7, 0.5], radius: SUCCESS_TOLERANCE },
            steps: 0,
        };
        let a = expert_action(&sim);
        assert!(a[0] > 0.0 && a[1].abs() < 1e-12);
    }

    #[test]
    fn closed_gripper_pushes_open_passes() {
        let mut sim = SimState {
            task: TaskKind::Push,
            ee: [0.3, 0.5],
            grip_closed: true,
            objects: vec![SimObject::at([0.4, 0.5])],
            goal: Goal { center: [0.8, 0.5], radius: SUCCESS_TOLERANCE },
            steps: 0,
        };
        let mut open = sim.clone();
        let fx = sim.step(&[1.0, 0.0, 1.0]);
        assert!((sim.objects[0].position()[0] - (0.35 + OBJECT_RADIUS + EE_RADIUS)).abs() < 1e-12);
        assert!(fx.object_deltas[0][0] > 0.0);
        open.grip_closed = false;
        open.step(&[1.0, 0.0, -1.0]);
        assert_eq!(open.objects[0].position(), [0.4, 0.5]);
    }

    #[test]
    fn grasp_only_within_radius() {
        let mut sim = SimState::generate(TaskKind::Pick, 3);
        let p = sim.objects[0].position();
        sim.ee = [p[0] + 0.05, p[1]];
        sim.step(&[0.0, 0.0, 1.0]);
        assert!(!sim.objects[0].attached);
        // The empty closed gripper shoved the object to contact distance.
        let p = sim.objects[0].position();
        assert!((sim.ee[0] - p[0] - (OBJECT_RADIUS + EE_RADIUS)).abs() < 1e-12);
        sim.step(&[0.0, 0.0, -1.0]);
        sim.ee = [p[0] + 0.02, p[1]];
        sim.step(&[0.0, 0.0, 1.0]);
        assert!(sim.objects[0].attached);
        sim.step(&[1.0, 0.0, 1.0]);
        assert!((sim.objects[0].position()[0] - (p[0] + MAX_STEP)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn deterministic_under_same_actions(seed in 0u64..1000, acts in prop::collection::vec(prop::array::uniform3(-1.5f64..1.5), 1..40)) {
            let a = SimState::generate(TaskKind::Push, seed);
            let b = SimState::generate(TaskKind::Push, seed);
            prop_assert_eq!(&a, &b);
            let acts: Vec<[f64; 3]> = acts;
            prop_assert_eq!(replay(&a, &acts), replay(&b, &acts));
        }

        #[test]
        fn success_is_translation_invariant(task in 0usize..3, seed in 0u64..200, steps in 0usize..60, dx in -2.0f64..2.0, dy in -2.0f64..2.0) {
            let sim = SimState::generate(TaskKind::ALL[task], seed);
            let acts = scripted_expert(&sim);
            let s = replay(&sim, &acts[..steps.min(acts.len())]);
            prop_assert_eq!(s.success(), s.translated([dx, dy]).success());
        }
    }
}
