//! Milestone graphs: sets of example outcome states per sub-task, with an
//! edge from each sub-task to the one to practice after it succeeds.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, EnvState, Observation, TaskKind, TetherValve, OBS_DIM};
use crate::error::{Error, Result};

/// Dense index of a graph vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub name: String,
    pub examples: Vec<Observation>,
    pub next: TaskId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilestoneGraph {
    vertices: Vec<Vertex>,
}

/// Examples per milestone when none is configured.
pub const DEFAULT_EXAMPLES: usize = 300;

/// Fraction of each success threshold kept clear when posing examples.
const MARGIN: f64 = 0.9;

const MAX_DRAWS: usize = 1_000_000;

impl MilestoneGraph {
    /// Builds a graph from `(task, next_task)` pairs naming each vertex once.
    pub fn build<S: AsRef<str>>(spec: &[(S, S)]) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, (name, _)) in spec.iter().enumerate() {
            if index.insert(name.as_ref(), i).is_some() {
                return Err(Error::Validation(format!("task `{}` listed twice", name.as_ref())));
            }
        }
        let mut vertices = Vec::with_capacity(spec.len());
        for (name, next) in spec {
            let Some(&j) = index.get(next.as_ref()) else {
                return Err(Error::Validation(format!(
                    "sink vertex `{}`: it is the target of `{}` but has no outgoing edge",
                    next.as_ref(),
                    name.as_ref()
                )));
            };
            vertices.push(Vertex { name: name.as_ref().to_string(), examples: Vec::new(), next: TaskId(j) });
        }
        Self::from_vertices(vertices)
    }

    /// Wraps explicit vertices after checking names, edges and example shapes.
    pub fn from_vertices(vertices: Vec<Vertex>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::Validation("milestone graph has no vertices".into()));
        }
        for (i, v) in vertices.iter().enumerate() {
            if v.next.0 >= vertices.len() {
                return Err(Error::Validation(format!(
                    "dangling edge: `{}` points to vertex {} of {}",
                    v.name,
                    v.next.0,
                    vertices.len()
                )));
            }
            if vertices[..i].iter().any(|u| u.name == v.name) {
                return Err(Error::Validation(format!("task `{}` listed twice", v.name)));
            }
        }
        Ok(Self { vertices })
    }

    /// `reach → reposition → pickup → reach`.
    pub fn default_cycle() -> Self {
        Self::build(&[("reach", "reposition"), ("reposition", "pickup"), ("pickup", "reach")])
            .expect("default cycle is valid")
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn vertex(&self, id: TaskId) -> &Vertex {
        &self.vertices[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = TaskId> {
        (0..self.vertices.len()).map(TaskId)
    }

    pub fn find(&self, name: &str) -> Option<TaskId> {
        self.vertices.iter().position(|v| v.name == name).map(TaskId)
    }

    pub fn next_label(&self, id: TaskId) -> TaskId {
        self.vertices[id.0].next
    }

    pub fn edges(&self) -> Vec<(TaskId, TaskId)> {
        self.ids().map(|id| (id, self.next_label(id))).collect()
    }

    /// Ground-truth task behind a vertex, looked up by name.
    pub fn kind(&self, id: TaskId) -> Result<TaskKind> {
        TaskKind::from_name(&self.vertices[id.0].name)
    }

    /// Vertices reachable from `from` by following edges (including itself).
    pub fn reachable_from(&self, from: TaskId) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut cur = from;
        while !seen[cur.0] {
            seen[cur.0] = true;
            cur = self.next_label(cur);
        }
        seen
    }

    pub fn set_examples(&mut self, id: TaskId, examples: Vec<Observation>) {
        self.vertices[id.0].examples = examples;
    }

    /// Samples `n` examples for vertex `id` from its task's success set.
    pub fn generate_examples(&self, env: &TetherValve, id: TaskId, n: usize, seed: u64) -> Result<Vec<Observation>> {
        generate_examples(env, self.kind(id)?, n, seed)
    }

    /// Fills every vertex with `n` generated examples.
    pub fn with_generated_examples(mut self, env: &TetherValve, n: usize, seed: u64) -> Result<Self> {
        for id in self.ids().collect::<Vec<_>>() {
            let ex = self.generate_examples(env, id, n, seed.wrapping_add(id.0 as u64))?;
            self.set_examples(id, ex);
        }
        Ok(self)
    }

    /// Every vertex must carry at least one example before training.
    pub fn require_examples(&self) -> Result<()> {
        match self.vertices.iter().find(|v| v.examples.is_empty()) {
            Some(v) => Err(Error::Validation(format!("milestone `{}` has no examples", v.name))),
            None => Ok(()),
        }
    }
}

/// Poses `n` observations inside the success set of `kind`, with every
/// threshold shrunk by 10%.
///
/// Each set is posed as the state the milestone leaves behind: reach
/// examples rest the object off-center with the open hand at it, reposition
/// examples put the object on the table near the center (half still held,
/// half released with the hand anywhere), pickup examples hold it up near
/// the lift target, and place examples leave it released off-center.
pub fn generate_examples(env: &TetherValve, kind: TaskKind, n: usize, seed: u64) -> Result<Vec<Observation>> {
    let mut rng = crate::rng::stream(seed, 0x6d69_6c65);
    let mut out = Vec::with_capacity(n);
    let mut draws = 0usize;
    while out.len() < n {
        draws += 1;
        if draws > MAX_DRAWS {
            return Err(Error::Generation { task: kind.name().to_string(), draws: MAX_DRAWS });
        }
        let Some(state) = propose(env, kind, &mut rng) else { continue };
        if env.success(&state, kind) && env.check_invariants(&state).is_ok() {
            out.push(env.observe(&state));
        }
    }
    Ok(out)
}

fn propose<R: Rng + ?Sized>(env: &TetherValve, kind: TaskKind, rng: &mut R) -> Option<EnvState> {
    let c = &env.config;
    let off_center = |rng: &mut R| annulus(rng, c.reposition_threshold / MARGIN, c.tether_radius);
    match kind {
        TaskKind::Reach => {
            let obj = off_center(rng);
            let r = MARGIN * c.reach_threshold;
            let hand = [
                obj[0] + rng.random_range(-r..r),
                obj[1] + rng.random_range(-r..r),
                rng.random_range(0.0..r),
            ];
            if norm3([hand[0] - obj[0], hand[1] - obj[1], hand[2] - obj[2]]) >= r {
                return None;
            }
            Some(resting(hand, obj))
        }
        TaskKind::Reposition => {
            let obj = annulus(rng, 0.0, MARGIN * c.reposition_threshold);
            if rng.random::<bool>() {
                Some(holding(env, obj, rng))
            } else {
                Some(resting(anywhere(env, rng), obj))
            }
        }
        TaskKind::Pickup => {
            let r = MARGIN * c.pickup_threshold;
            let t = c.pickup_target;
            let d = [rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r)];
            if norm3(d) >= r {
                return None;
            }
            Some(holding(env, [t[0] + d[0], t[1] + d[1], t[2] + d[2]], rng))
        }
        TaskKind::Place => {
            let obj = off_center(rng);
            Some(resting(anywhere(env, rng), obj))
        }
    }
}

/// Uniform hand position inside the arena.
fn anywhere<R: Rng + ?Sized>(env: &TetherValve, rng: &mut R) -> [f64; 3] {
    let c = &env.config;
    let w = c.arena_half_width;
    [rng.random_range(-w..=w), rng.random_range(-w..=w), rng.random_range(0.0..=c.max_height)]
}

fn resting(hand: [f64; 3], obj: [f64; 3]) -> EnvState {
    EnvState { hand, grip: 0.0, obj, held: false, grasp_offset: [0.0; 3], step_count: 0 }
}

fn holding<R: Rng + ?Sized>(env: &TetherValve, obj: [f64; 3], rng: &mut R) -> EnvState {
    let g = MARGIN * env.config.grasp_radius;
    let (dx, dy) = loop {
        let (dx, dy) = (rng.random_range(-g..g), rng.random_range(-g..g));
        if libm::hypot(dx, dy) < g {
            break (dx, dy);
        }
    };
    let offset = [dx, dy, rng.random_range(0.0..g)];
    EnvState {
        hand: [obj[0] + offset[0], obj[1] + offset[1], obj[2] + offset[2]],
        grip: 1.0,
        obj,
        held: true,
        grasp_offset: offset,
        step_count: 0,
    }
}

/// Uniform point on the table with radius in `[r_min, r_max)`.
fn annulus<R: Rng + ?Sized>(rng: &mut R, r_min: f64, r_max: f64) -> [f64; 3] {
    let u: f64 = rng.random();
    let r = libm::sqrt(r_min * r_min + u * (r_max * r_max - r_min * r_min));
    let theta = core::f64::consts::TAU * rng.random::<f64>();
    [r * libm::cos(theta), r * libm::sin(theta), 0.0]
}

fn norm3(v: [f64; 3]) -> f64 {
    libm::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
}

/// Gaussian state noise used to augment observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub sigma: f64,
    pub clip_to_valid: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { sigma: 0.02, clip_to_valid: false }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::Validation(format!("augment sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Adds `N(0, σ²)` to every continuous component; the held flag is
    /// never perturbed.
    pub fn augment<R: Rng + ?Sized>(&self, obs: &Observation, bounds: &EnvConfig, rng: &mut R) -> Observation {
        if self.sigma == 0.0 {
            return *obs;
        }
        let mut out = *obs;
        for v in out.iter_mut().take(OBS_DIM - 1) {
            *v += self.sigma * crate::rng::normal(rng);
        }
        if self.clip_to_valid {
            let w = bounds.arena_half_width;
            out[0] = out[0].clamp(-w, w);
            out[1] = out[1].clamp(-w, w);
            out[2] = out[2].clamp(0.0, bounds.max_height);
            out[3] = out[3].clamp(0.0, 1.0);
            let r = libm::hypot(out[4], out[5]);
            if r > bounds.tether_radius {
                out[4] *= bounds.tether_radius / r;
                out[5] *= bounds.tether_radius / r;
            }
            out[6] = out[6].clamp(0.0, bounds.max_height);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> TetherValve {
        TetherValve::default()
    }

    #[test]
    fn default_spec_is_a_three_cycle() {
        let g = MilestoneGraph::default_cycle();
        assert_eq!(g.len(), 3);
        assert_eq!(g.edges(), vec![(TaskId(0), TaskId(1)), (TaskId(1), TaskId(2)), (TaskId(2), TaskId(0))]);
        for id in g.ids() {
            assert!(g.reachable_from(id).iter().all(|&r| r), "{id:?}");
        }
    }

    #[test]
    fn self_loop_counts_as_an_outgoing_edge() {
        let g = MilestoneGraph::build(&[("A", "B"), ("B", "B")]).unwrap();
        assert_eq!(g.next_label(TaskId(1)), TaskId(1));
    }

    #[test]
    fn missing_vertex_is_reported_as_a_sink() {
        let err = MilestoneGraph::build(&[("A", "B")]).unwrap_err();
        match err {
            Error::Validation(msg) => assert!(msg.contains("sink vertex `B`"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dangling_index_and_duplicates_are_rejected() {
        let v = |name: &str, next| Vertex { name: name.into(), examples: vec![], next: TaskId(next) };
        assert!(MilestoneGraph::from_vertices(vec![v("a", 0), v("b", 2)]).is_err());
        assert!(MilestoneGraph::from_vertices(vec![v("a", 1), v("a", 0)]).is_err());
        assert!(MilestoneGraph::build(&[("a", "a"), ("a", "a")]).is_err());
        assert!(MilestoneGraph::from_vertices(vec![]).is_err());
    }

    #[test]
    fn generated_examples_satisfy_their_predicates() {
        let e = env();
        let g = MilestoneGraph::default_cycle();
        for id in g.ids() {
            let kind = g.kind(id).unwrap();
            let ex = g.generate_examples(&e, id, 300, 7).unwrap();
            assert_eq!(ex.len(), 300);
            assert!(ex.iter().all(|o| e.success_obs(o, kind)), "{kind:?}");
        }
        let place = generate_examples(&e, TaskKind::Place, 300, 1).unwrap();
        assert!(place.iter().all(|o| e.success_obs(o, TaskKind::Place)));
    }

    #[test]
    fn examples_keep_the_interior_margin() {
        let e = env();
        for o in generate_examples(&e, TaskKind::Reach, 300, 3).unwrap() {
            let d = norm3([o[0] - o[4], o[1] - o[5], o[2] - o[6]]);
            assert!(d < 0.09, "{d}");
        }
        for o in generate_examples(&e, TaskKind::Reposition, 300, 3).unwrap() {
            assert!(libm::hypot(o[4], o[5]) < 0.09);
        }
    }

    #[test]
    fn generation_edge_cases() {
        assert!(generate_examples(&env(), TaskKind::Pickup, 0, 1).unwrap().is_empty());
        assert_eq!(
            generate_examples(&env(), TaskKind::Reach, 50, 9).unwrap(),
            generate_examples(&env(), TaskKind::Reach, 50, 9).unwrap()
        );
        let g = MilestoneGraph::build(&[("A", "A")]).unwrap();
        assert!(matches!(g.generate_examples(&env(), TaskId(0), 1, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn impossible_success_set_gives_up() {
        let mut cfg = EnvConfig::default();
        cfg.pickup_target = [0.0, 0.0, 5.0];
        let err = generate_examples(&TetherValve::new(cfg), TaskKind::Pickup, 1, 0).unwrap_err();
        assert!(matches!(err, Error::Generation { draws: MAX_DRAWS, .. }));
    }

    #[test]
    fn zero_sigma_is_identity() {
        let o = env().observe(&env().init_seeded(1));
        let cfg = AugmentConfig { sigma: 0.0, clip_to_valid: true };
        assert_eq!(cfg.augment(&o, &EnvConfig::default(), &mut crate::rng::stream(0, 0)), o);
    }

    #[test]
    fn noise_has_the_configured_spread_and_spares_the_held_flag() {
        let o: Observation = [0.1, -0.1, 0.1, 0.5, 0.05, 0.02, 0.0, 1.0];
        let cfg = AugmentConfig::default();
        let mut rng = crate::rng::stream(3, 0);
        let n = 100_000;
        let mut sum = [0.0; OBS_DIM];
        let mut sq = [0.0; OBS_DIM];
        for _ in 0..n {
            let a = cfg.augment(&o, &EnvConfig::default(), &mut rng);
            assert_eq!(a[7], 1.0);
            for i in 0..OBS_DIM {
                let d = a[i] - o[i];
                sum[i] += d;
                sq[i] += d * d;
            }
        }
        for i in 0..OBS_DIM - 1 {
            let mean = sum[i] / n as f64;
            let std = libm::sqrt(sq[i] / n as f64 - mean * mean);
            assert!((std - 0.02).abs() < 0.05 * 0.02, "component {i}: {std}");
        }
    }

    #[test]
    fn clipping_keeps_augmented_states_in_bounds() {
        let o: Observation = [0.275, -0.275, 0.0, 1.0, 0.15, 0.0, 0.0, 0.0];
        let cfg = AugmentConfig { sigma: 0.05, clip_to_valid: true };
        let mut rng = crate::rng::stream(4, 0);
        for _ in 0..1000 {
            let a = cfg.augment(&o, &EnvConfig::default(), &mut rng);
            assert!(a[0] <= 0.275 && a[1] >= -0.275 && a[2] >= 0.0 && a[3] <= 1.0 && a[6] >= 0.0);
            assert!(libm::hypot(a[4], a[5]) <= 0.15 + 1e-12);
        }
    }
}
