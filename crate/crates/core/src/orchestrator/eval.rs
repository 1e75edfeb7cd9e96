use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvState, Observation, TaskKind, TetherValve};
use crate::error::{Error, Result};
use crate::milestones::MilestoneGraph;
use crate::rl::SacAgent;
use crate::taskgraph::{select_naive, select_oracle, OracleConfig, TaskModel};

/// Chooses an action for skill `skill` in `state`.
pub trait Policy {
    fn act(&self, skill: usize, state: &EnvState, obs: &Observation, rng: &mut dyn RngCore) -> Result<Action>;
}

/// Deterministic snapshot of trained agents, one per skill.
pub struct AgentPolicy<'a> {
    pub agents: Vec<&'a SacAgent>,
}

impl Policy for AgentPolicy<'_> {
    fn act(&self, skill: usize, _state: &EnvState, obs: &Observation, rng: &mut dyn RngCore) -> Result<Action> {
        Action::from_slice(&self.agents[skill].act(obs, false, rng)?)
    }
}

/// The environment's hand-written controller for each skill's task.
pub struct ScriptedPolicy {
    pub env: TetherValve,
    pub kinds: Vec<Option<TaskKind>>,
}

impl Policy for ScriptedPolicy {
    fn act(&self, skill: usize, state: &EnvState, _obs: &Observation, rng: &mut dyn RngCore) -> Result<Action> {
        match self.kinds[skill] {
            Some(kind) => Ok(self.env.scripted_expert(state, kind)),
            None => RandomPolicy.act(skill, state, _obs, rng),
        }
    }
}

/// Uniform actions in `[-1, 1]^4`.
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn act(&self, _skill: usize, _state: &EnvState, _obs: &Observation, rng: &mut dyn RngCore) -> Result<Action> {
        Ok(random_action(rng))
    }
}

pub fn random_action<R: Rng + ?Sized>(rng: &mut R) -> Action {
    Action::new(core::array::from_fn(|_| rng.random_range(-1.0..=1.0)), rng.random_range(-1.0..=1.0))
}

/// How the next skill is picked at each slot boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    Learned { model: TaskModel, sample: bool },
    Naive { tasks: usize },
    Oracle { reach: usize, reposition: usize, pickup: usize, config: OracleConfig },
}

impl Schedule {
    /// Oracle over a graph that names `reach`, `reposition` and `pickup` vertices.
    pub fn oracle(graph: &MilestoneGraph, config: OracleConfig) -> Result<Self> {
        let find = |k: TaskKind| {
            graph.find(k.name()).map(|id| id.0).ok_or_else(|| {
                Error::Validation(alloc::format!("oracle scheduler needs a `{}` milestone", k.name()))
            })
        };
        Ok(Schedule::Oracle {
            reach: find(TaskKind::Reach)?,
            reposition: find(TaskKind::Reposition)?,
            pickup: find(TaskKind::Pickup)?,
            config,
        })
    }

    pub fn select(&self, slot: u64, state: &EnvState, obs: &Observation, rng: &mut dyn RngCore) -> Result<usize> {
        Ok(match self {
            Schedule::Learned { model, sample: false } => model.select(obs)?.0,
            Schedule::Learned { model, sample: true } => model.select_sampled(obs, rng)?.0,
            Schedule::Naive { tasks } => select_naive(slot, *tasks).0,
            Schedule::Oracle { reach, reposition, pickup, config } => match select_oracle(state, None, config) {
                TaskKind::Reach => *reach,
                TaskKind::Reposition => *reposition,
                _ => *pickup,
            },
        })
    }
}

/// What evaluation needs to know about each skill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSkill {
    pub name: String,
    /// Success predicate; skills without one are run but not scored.
    pub kind: Option<TaskKind>,
    pub next: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub episodes: usize,
    pub horizon: u64,
    /// Success counts if the predicate holds at any of this many final steps.
    pub tail: usize,
    pub chain_slots: usize,
    pub chain_task: TaskKind,
}

/// Name of the end-to-end metric row.
pub const CHAIN: &str = "chain";

/// Runs `skill` for `horizon` steps; reports whether `kind` held in the tail.
fn rollout(
    env: &TetherValve,
    state: EnvState,
    skill: usize,
    policy: &dyn Policy,
    cfg: &EvalConfig,
    kind: Option<TaskKind>,
    rng: &mut dyn RngCore,
) -> Result<(EnvState, bool)> {
    let mut s = state;
    let mut hit = false;
    for t in 0..cfg.horizon {
        let a = policy.act(skill, &s, &env.observe(&s), rng)?;
        s = env.step(&s, &a)?;
        if let Some(k) = kind {
            if t + cfg.tail as u64 >= cfg.horizon && env.success(&s, k) {
                hit = true;
            }
        }
    }
    Ok((s, hit))
}

/// Per-skill success rates plus the end-to-end chain rate.
///
/// Each episode starts from a fresh init and follows the graph edges from
/// skill 0, running every skill once for `horizon` steps and scoring it on
/// its own predicate. Skills the walk never reaches are scored from fresh
/// inits. The chain metric lets `schedule` pick a skill per slot for
/// `chain_slots` slots and scores `chain_task` over the final tail.
pub fn evaluate(
    env: &TetherValve,
    skills: &[EvalSkill],
    policy: &dyn Policy,
    schedule: &Schedule,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Vec<(String, f64)>> {
    if cfg.episodes == 0 || skills.is_empty() {
        return Err(Error::Validation("evaluation needs at least one episode and one skill".into()));
    }
    let mut init_rng = crate::rng::stream(seed, 1);
    let mut rng = crate::rng::stream(seed, 2);
    let k = skills.len();
    let mut hits = vec![0usize; k];
    let mut chain_hits = 0usize;
    for _ in 0..cfg.episodes {
        let mut visited = vec![false; k];
        let mut s = env.init(&mut init_rng);
        let mut z = 0;
        while !visited[z] {
            visited[z] = true;
            let (next, hit) = rollout(env, s, z, policy, cfg, skills[z].kind, &mut rng)?;
            hits[z] += hit as usize;
            s = next;
            z = skills[z].next;
        }
        for z in (0..k).filter(|&z| !visited[z]) {
            let (_, hit) = rollout(env, env.init(&mut init_rng), z, policy, cfg, skills[z].kind, &mut rng)?;
            hits[z] += hit as usize;
        }

        let mut s = env.init(&mut init_rng);
        for slot in 0..cfg.chain_slots {
            let z = schedule.select(slot as u64, &s, &env.observe(&s), &mut rng)?;
            let last = slot + 1 == cfg.chain_slots;
            let (next, hit) = rollout(env, s, z, policy, cfg, last.then_some(cfg.chain_task), &mut rng)?;
            s = next;
            if last && hit {
                chain_hits += 1;
            }
        }
    }
    let n = cfg.episodes as f64;
    let mut out: Vec<(String, f64)> = skills
        .iter()
        .zip(&hits)
        .filter(|(s, _)| s.kind.is_some())
        .map(|(s, &h)| (s.name.clone(), h as f64 / n))
        .collect();
    out.push((String::from(CHAIN), chain_hits as f64 / n));
    Ok(out)
}
