//! `TetherValve`: a reset-free point-hand manipulation task.
//!
//! A hand moves in a 0.55 m square arena and may grasp an object tied to the
//! arena center by a 0.15 m tether. The three phases are reaching the object,
//! dragging it to the center, and lifting it to a point 0.2 m above the
//! table. The simulator is a set of pure functions over [`EnvState`].

use alloc::format;
use alloc::string::String;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OBS_DIM: usize = 8;
pub const ACTION_DIM: usize = 4;

/// `[hand_x, hand_y, hand_z, grip, obj_x, obj_y, obj_z, held]`.
pub type Observation = [f64; OBS_DIM];

/// Geometry and thresholds. Lengths are meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub arena_half_width: f64,
    pub max_height: f64,
    pub tether_radius: f64,
    pub max_step: f64,
    pub grasp_radius: f64,
    pub hand_init_height: f64,
    pub reach_threshold: f64,
    pub reposition_threshold: f64,
    pub reposition_max_height: f64,
    pub pickup_target: [f64; 3],
    pub pickup_threshold: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            arena_half_width: 0.275,
            max_height: 0.3,
            tether_radius: 0.15,
            max_step: 0.02,
            grasp_radius: 0.05,
            hand_init_height: 0.1,
            reach_threshold: 0.1,
            reposition_threshold: 0.1,
            reposition_max_height: 0.05,
            pickup_target: [0.0, 0.0, 0.2],
            pickup_threshold: 0.1,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("arena_half_width", self.arena_half_width),
            ("max_height", self.max_height),
            ("tether_radius", self.tether_radius),
            ("max_step", self.max_step),
            ("grasp_radius", self.grasp_radius),
            ("reach_threshold", self.reach_threshold),
            ("reposition_threshold", self.reposition_threshold),
            ("pickup_threshold", self.pickup_threshold),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("env.{name} must be positive, got {v}")));
            }
        }
        if self.tether_radius > self.arena_half_width {
            return Err(Error::Validation("env.tether_radius exceeds the arena".into()));
        }
        if !(0.0..=self.max_height).contains(&self.hand_init_height) {
            return Err(Error::Validation("env.hand_init_height outside [0, max_height]".into()));
        }
        Ok(())
    }
}

/// Semantic sub-tasks with a ground-truth success predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    Reach,
    Reposition,
    Pickup,
    /// Object resting on the table away from the center, released. The
    /// backward task of the forward-backward baseline.
    Place,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::Reach, TaskKind::Reposition, TaskKind::Pickup, TaskKind::Place];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Reach => "reach",
            TaskKind::Reposition => "reposition",
            TaskKind::Pickup => "pickup",
            TaskKind::Place => "place",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Domain(format!("unknown task `{name}`")))
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        TaskKind::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::Domain(format!("unknown task id {code}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub hand: [f64; 3],
    /// Gripper closure in `[0, 1]`.
    pub grip: f64,
    pub obj: [f64; 3],
    pub held: bool,
    /// `hand − obj` frozen at the moment of grasp.
    pub grasp_offset: [f64; 3],
    pub step_count: u64,
}

/// Normalized command: Cartesian hand delta and gripper command, each in `[−1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub delta: [f64; 3],
    pub grip: f64,
}

impl Action {
    pub fn new(delta: [f64; 3], grip: f64) -> Self {
        Self { delta, grip }
    }

    pub fn from_slice(a: &[f64]) -> Result<Self> {
        match a {
            [x, y, z, g] => Ok(Self { delta: [*x, *y, *z], grip: *g }),
            _ => Err(Error::Shape(format!("action needs {ACTION_DIM} components, got {}", a.len()))),
        }
    }

    pub fn to_array(self) -> [f64; ACTION_DIM] {
        [self.delta[0], self.delta[1], self.delta[2], self.grip]
    }

    fn clamped(self) -> Self {
        let c = |v: f64| v.clamp(-1.0, 1.0);
        Self { delta: self.delta.map(c), grip: c(self.grip) }
    }
}

fn horizontal(a: [f64; 3], b: [f64; 3]) -> f64 {
    libm::hypot(a[0] - b[0], a[1] - b[1])
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TetherValve {
    pub config: EnvConfig,
}

impl TetherValve {
    pub fn new(config: EnvConfig) -> Self {
        Self { config }
    }

    /// Hand at a uniform arena position at the configured height, open
    /// gripper, object uniform on the tether disk.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        let c = &self.config;
        let w = c.arena_half_width;
        let hand = [rng.random_range(-w..=w), rng.random_range(-w..=w), c.hand_init_height];
        let r = c.tether_radius * libm::sqrt(rng.random::<f64>());
        let theta = core::f64::consts::TAU * rng.random::<f64>();
        EnvState {
            hand,
            grip: 0.0,
            obj: [r * libm::cos(theta), r * libm::sin(theta), 0.0],
            held: false,
            grasp_offset: [0.0; 3],
            step_count: 0,
        }
    }

    pub fn init_seeded(&self, seed: u64) -> EnvState {
        self.init(&mut crate::rng::stream(seed, 0))
    }

    /// Grasp envelope: horizontally and vertically within the grasp radius.
    pub fn within_grasp(&self, hand: [f64; 3], obj: [f64; 3]) -> bool {
        horizontal(hand, obj) < self.config.grasp_radius && (hand[2] - obj[2]).abs() < self.config.grasp_radius
    }

    pub fn step(&self, state: &EnvState, action: &Action) -> Result<EnvState> {
        if !(action.delta.iter().all(|v| v.is_finite()) && action.grip.is_finite()) {
            return Err(Error::NonFinite("action"));
        }
        let c = &self.config;
        let a = action.clamped();
        let w = c.arena_half_width;
        let mut hand = state.hand;
        for i in 0..3 {
            hand[i] += c.max_step * a.delta[i];
        }
        hand[0] = hand[0].clamp(-w, w);
        hand[1] = hand[1].clamp(-w, w);
        hand[2] = hand[2].clamp(0.0, c.max_height);

        let closing = a.grip > 0.0;
        let mut next = EnvState {
            hand,
            grip: 0.5 * (a.grip + 1.0),
            obj: state.obj,
            held: state.held,
            grasp_offset: state.grasp_offset,
            step_count: state.step_count + 1,
        };
        if state.held {
            if closing {
                for i in 0..3 {
                    next.obj[i] = hand[i] - state.grasp_offset[i];
                }
                next.obj[2] = next.obj[2].max(0.0);
            } else {
                next.held = false;
                next.obj[2] = 0.0;
            }
        } else if closing && self.within_grasp(hand, state.obj) {
            next.held = true;
            next.grasp_offset = [hand[0] - state.obj[0], hand[1] - state.obj[1], hand[2] - state.obj[2]];
        }

        let r = libm::hypot(next.obj[0], next.obj[1]);
        if r > c.tether_radius {
            let s = c.tether_radius / r;
            next.obj[0] *= s;
            next.obj[1] *= s;
        }
        if next.held && !self.within_grasp(hand, next.obj) {
            next.held = false;
            next.obj[2] = 0.0;
        }
        if !next.held {
            next.grasp_offset = [0.0; 3];
        }
        Ok(next)
    }

    pub fn success(&self, state: &EnvState, task: TaskKind) -> bool {
        self.success_at(state.hand, state.obj, state.held, task)
    }

    /// Same predicate evaluated from an observation.
    pub fn success_obs(&self, obs: &Observation, task: TaskKind) -> bool {
        self.success_at([obs[0], obs[1], obs[2]], [obs[4], obs[5], obs[6]], obs[7] > 0.5, task)
    }

    fn success_at(&self, hand: [f64; 3], obj: [f64; 3], held: bool, task: TaskKind) -> bool {
        let c = &self.config;
        let centered = libm::hypot(obj[0], obj[1]) < c.reposition_threshold;
        match task {
            TaskKind::Reach => dist(hand, obj) < c.reach_threshold,
            TaskKind::Reposition => centered && obj[2] < c.reposition_max_height,
            TaskKind::Pickup => dist(obj, c.pickup_target) < c.pickup_threshold,
            TaskKind::Place => !held && !centered && obj[2] < c.reposition_max_height,
        }
    }

    pub fn observe(&self, state: &EnvState) -> Observation {
        [
            state.hand[0],
            state.hand[1],
            state.hand[2],
            state.grip,
            state.obj[0],
            state.obj[1],
            state.obj[2],
            if state.held { 1.0 } else { 0.0 },
        ]
    }

    /// Describes the first violated state invariant, if any.
    pub fn check_invariants(&self, s: &EnvState) -> core::result::Result<(), String> {
        let c = &self.config;
        let finite = s.hand.iter().chain(&s.obj).chain(&s.grasp_offset).all(|v| v.is_finite()) && s.grip.is_finite();
        if !finite {
            return Err("non-finite state".into());
        }
        let r = libm::hypot(s.obj[0], s.obj[1]);
        if r > c.tether_radius + 1e-12 {
            return Err(format!("object at radius {r} beyond tether"));
        }
        if s.obj[2] < 0.0 || s.obj[2] > c.max_height {
            return Err(format!("object height {} outside [0, {}]", s.obj[2], c.max_height));
        }
        let w = c.arena_half_width;
        if s.hand[0].abs() > w || s.hand[1].abs() > w || !(0.0..=c.max_height).contains(&s.hand[2]) {
            return Err(format!("hand {:?} outside arena", s.hand));
        }
        if !(0.0..=1.0).contains(&s.grip) {
            return Err(format!("grip {} outside [0, 1]", s.grip));
        }
        if s.held && !self.within_grasp(s.hand, s.obj) {
            return Err("held object outside the grasp envelope".into());
        }
        if !s.held && s.obj[2] != 0.0 {
            return Err("released object off the table".into());
        }
        Ok(())
    }

    /// Proportional controller that drives the state into the task's success set.
    pub fn scripted_expert(&self, state: &EnvState, task: TaskKind) -> Action {
        let c = &self.config;
        if self.success(state, task) && !(task == TaskKind::Place && state.held) {
            return Action::new([0.0; 3], if state.held { 1.0 } else { -1.0 });
        }
        match task {
            TaskKind::Reach => {
                let target = [state.obj[0], state.obj[1], state.obj[2] + 0.02];
                Action::new(self.toward(state.hand, target), if state.held { 1.0 } else { -1.0 })
            }
            TaskKind::Reposition => {
                if !state.held {
                    return self.approach_and_grasp(state);
                }
                let r = libm::hypot(state.obj[0], state.obj[1]);
                if r < 0.5 * c.reposition_threshold && state.obj[2] < c.reposition_max_height {
                    return Action::new([0.0; 3], 1.0);
                }
                let target = [state.hand[0] - state.obj[0], state.hand[1] - state.obj[1], state.hand[2] - state.obj[2]];
                Action::new(self.toward(state.hand, target), 1.0)
            }
            TaskKind::Pickup => {
                if !state.held {
                    return self.approach_and_grasp(state);
                }
                let goal = c.pickup_target;
                let target = [
                    goal[0] + state.hand[0] - state.obj[0],
                    goal[1] + state.hand[1] - state.obj[1],
                    goal[2] + state.hand[2] - state.obj[2],
                ];
                Action::new(self.toward(state.hand, target), 1.0)
            }
            TaskKind::Place => {
                let r = libm::hypot(state.obj[0], state.obj[1]);
                let outside = r >= 1.1 * c.reposition_threshold;
                if state.held && outside {
                    return Action::new([0.0; 3], -1.0);
                }
                if !state.held {
                    return self.approach_and_grasp(state);
                }
                let (ux, uy) = if r > 1e-9 { (state.obj[0] / r, state.obj[1] / r) } else { (1.0, 0.0) };
                let goal = 0.5 * (c.reposition_threshold + c.tether_radius);
                let target = [
                    goal * ux + state.hand[0] - state.obj[0],
                    goal * uy + state.hand[1] - state.obj[1],
                    state.hand[2] - state.obj[2],
                ];
                Action::new(self.toward(state.hand, target), 1.0)
            }
        }
    }

    fn approach_and_grasp(&self, state: &EnvState) -> Action {
        let target = [state.obj[0], state.obj[1], state.obj[2] + 0.01];
        let delta = self.toward(state.hand, target);
        let mut next = state.hand;
        for i in 0..3 {
            next[i] += self.config.max_step * delta[i];
        }
        let grip = if self.within_grasp(next, state.obj) { 1.0 } else { -1.0 };
        Action::new(delta, grip)
    }

    fn toward(&self, from: [f64; 3], to: [f64; 3]) -> [f64; 3] {
        core::array::from_fn(|i| ((to[i] - from[i]) / self.config.max_step).clamp(-1.0, 1.0))
    }
}
