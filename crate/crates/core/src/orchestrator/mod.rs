//! The reset-free training loop for AVAIL and the baselines it is compared
//! against.

mod eval;
mod rnd;

pub use eval::{
    evaluate, random_action, AgentPolicy, EvalConfig, EvalSkill, Policy, RandomPolicy, Schedule, ScriptedPolicy, CHAIN,
};
pub use rnd::{RndConfig, RndModule, RunningStats};

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvConfig, EnvState, Observation, TaskKind, TetherValve};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::milestones::{AugmentConfig, MilestoneGraph, TaskId, DEFAULT_EXAMPLES};
use crate::rewards::{ClassifierConfig, SuccessClassifier};
use crate::rl::{ReplayBuffer, SacAgent, SacConfig, Transition, UpdateStats, DEFAULT_CAPACITY};
use crate::rng::{stream, Rng};
use crate::taskgraph::{fit_task_model, OracleConfig, SchedulerKind, TaskModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Avail,
    SacSparse,
    SacVice,
    ForwardBackward,
    R3lLite,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] =
        [MethodKind::Avail, MethodKind::SacSparse, MethodKind::SacVice, MethodKind::ForwardBackward, MethodKind::R3lLite];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Avail => "avail",
            MethodKind::SacSparse => "sac_sparse",
            MethodKind::SacVice => "sac_vice",
            MethodKind::ForwardBackward => "forward_backward",
            MethodKind::R3lLite => "r3l_lite",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::Validation(format!("unknown method `{name}`")))
    }
}

/// Every knob of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: MethodKind,
    pub scheduler: SchedulerKind,
    /// Total environment steps.
    pub budget: u64,
    /// Steps per task slot (T).
    pub horizon: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub eval_tail: usize,
    pub chain_slots: usize,
    /// Random-action steps per skill before its first update.
    pub warmup: u64,
    pub examples_per_task: usize,
    pub replay_capacity: usize,
    pub augment: AugmentConfig,
    pub env: EnvConfig,
    pub sac: SacConfig,
    pub classifier: ClassifierConfig,
    pub task_model: TaskModelConfig,
    pub oracle: OracleConfig,
    pub rnd: RndConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: MethodKind::Avail,
            scheduler: SchedulerKind::Learned,
            budget: 150_000,
            horizon: 100,
            eval_interval: 10_000,
            eval_episodes: 20,
            eval_tail: 10,
            chain_slots: 3,
            warmup: 1000,
            examples_per_task: DEFAULT_EXAMPLES,
            replay_capacity: DEFAULT_CAPACITY,
            augment: AugmentConfig::default(),
            env: EnvConfig::default(),
            sac: SacConfig::default(),
            classifier: ClassifierConfig::default(),
            task_model: TaskModelConfig::default(),
            oracle: OracleConfig::default(),
            rnd: RndConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Validation("horizon must be at least 1".into()));
        }
        if self.budget % self.horizon != 0 {
            return Err(Error::Validation(format!(
                "budget {} is not a multiple of horizon {}",
                self.budget, self.horizon
            )));
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return Err(Error::Validation("eval_interval and eval_episodes must be positive".into()));
        }
        if self.eval_tail == 0 || self.eval_tail as u64 > self.horizon {
            return Err(Error::Validation("eval_tail must lie in [1, horizon]".into()));
        }
        if self.chain_slots == 0 || self.examples_per_task == 0 || self.replay_capacity == 0 {
            return Err(Error::Validation("chain_slots, examples_per_task and replay_capacity must be positive".into()));
        }
        self.augment.validate()?;
        self.env.validate()?;
        self.sac.validate()?;
        self.classifier.validate()
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            episodes: self.eval_episodes,
            horizon: self.horizon,
            tail: self.eval_tail,
            chain_slots: self.chain_slots,
            chain_task: TaskKind::Pickup,
        }
    }
}

/// Where a skill's reward comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RewardSource {
    /// Learned success classifier trained against the skill's own experience.
    Classifier(SuccessClassifier),
    /// Indicator of the task's true success predicate.
    Sparse(TaskKind),
    /// Novelty bonus for the perturbation controller.
    Rnd(RndModule),
}

/// One policy with its critics, buffer and reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub name: String,
    pub kind: Option<TaskKind>,
    pub next: usize,
    /// Milestone examples; empty for skills without a learned classifier.
    pub positives: Vec<Observation>,
    pub reward: RewardSource,
    pub agent: SacAgent,
    pub buffer: ReplayBuffer,
    /// Environment steps this skill has controlled.
    pub collected: u64,
}

impl Skill {
    pub fn rewards(&self, next_obs: &Matrix, cfg: &TrainConfig) -> Result<Vec<f64>> {
        match &self.reward {
            RewardSource::Classifier(c) => c.rewards(next_obs, &cfg.classifier),
            RewardSource::Sparse(kind) => {
                let env = TetherValve::new(cfg.env);
                Ok(next_obs
                    .iter_rows()
                    .map(|r| {
                        let o: Observation = r.try_into().expect("observation rows");
                        if env.success_obs(&o, *kind) { 1.0 } else { 0.0 }
                    })
                    .collect())
            }
            RewardSource::Rnd(r) => r.rewards(next_obs),
        }
    }

    /// One SAC update then one reward-model update, both on this skill's buffer.
    fn learn(&mut self, cfg: &TrainConfig, rng: &mut Rng) -> Result<UpdateStats> {
        let batch = {
            let this = &*self;
            this.buffer.sample_batch(cfg.sac.batch_size, |m| this.rewards(m, cfg), rng)?
        };
        let stats = self.agent.update(&batch, rng)?;
        match &mut self.reward {
            RewardSource::Classifier(clf) => {
                let (np, nn) = cfg.classifier.split();
                let negatives = self.buffer.sample_recent_next_obs(nn, cfg.classifier.negative_window, rng)?;
                let positives: Vec<Observation> = {
                    use rand::Rng as _;
                    (0..np).map(|_| self.positives[rng.random_range(0..self.positives.len())]).collect()
                };
                clf.update_batch(&positives, &negatives, &cfg.classifier, &cfg.augment, &cfg.env, rng)?;
            }
            RewardSource::Rnd(rnd) => {
                rnd.update(&batch.next_obs, rng)?;
            }
            RewardSource::Sparse(_) => {}
        }
        Ok(stats)
    }
}

/// One evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub step: u64,
    pub task: String,
    pub success_rate: f64,
}

/// Everything a finished run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub config: TrainConfig,
    pub seed: u64,
    pub rows: Vec<EvalRow>,
    pub checkpoints: Vec<String>,
    pub wall_clock_secs: f64,
}

impl RunArtifacts {
    /// Success rate of `task` at the last evaluation.
    pub fn final_rate(&self, task: &str) -> Option<f64> {
        self.rows.iter().rev().find(|r| r.task == task).map(|r| r.success_rate)
    }

    /// First evaluated step at which `task` reached `level`.
    pub fn steps_to(&self, task: &str, level: f64) -> Option<u64> {
        self.rows.iter().find(|r| r.task == task && r.success_rate >= level).map(|r| r.step)
    }
}

/// Milestone graph each method trains from: the default cycle for AVAIL,
/// pickup alone for the single-task baselines, and pickup/place for the
/// forward-backward controller. The sparse baseline gets no examples.
pub fn method_graph(method: MethodKind, env: &TetherValve, examples: usize, seed: u64) -> Result<MilestoneGraph> {
    let graph = match method {
        MethodKind::Avail => MilestoneGraph::default_cycle(),
        MethodKind::SacSparse | MethodKind::SacVice | MethodKind::R3lLite => MilestoneGraph::build(&[("pickup", "pickup")])?,
        MethodKind::ForwardBackward => MilestoneGraph::build(&[("pickup", "place"), ("place", "pickup")])?,
    };
    if method == MethodKind::SacSparse {
        return Ok(graph);
    }
    graph.with_generated_examples(env, examples, seed)
}

const NET_STREAM: u64 = 0;
const TASK_MODEL_STREAM: u64 = 1;
const ENV_STREAM: u64 = 2;
const ACT_STREAM: u64 = 3;
const LEARN_STREAM: u64 = 4;
const SCHED_STREAM: u64 = 5;
const EVAL_STREAM_BASE: u64 = 1 << 32;

/// Resumable training state. Serializing it captures the run exactly,
/// random streams included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub config: TrainConfig,
    pub seed: u64,
    pub skills: Vec<Skill>,
    pub schedule: Schedule,
    pub state: EnvState,
    pub current: usize,
    pub step: u64,
    /// Calls to the training environment's init; stays at one.
    pub env_inits: u64,
    pub rows: Vec<EvalRow>,
    pub last_stats: Option<UpdateStats>,
    /// Skill chosen at each slot boundary, in order.
    pub slot_log: Vec<(u64, usize)>,
    act_rng: Rng,
    learn_rng: Rng,
    sched_rng: Rng,
}

impl Trainer {
    /// Sets up skills for `config.method` from `graph`, which must carry the
    /// method's milestones (see [`method_graph`]).
    pub fn new(config: TrainConfig, graph: &MilestoneGraph, seed: u64) -> Result<Self> {
        config.validate()?;
        let env = TetherValve::new(config.env);
        let mut net_rng = stream(seed, NET_STREAM);
        let find = |name: &str| {
            graph.find(name).ok_or_else(|| {
                Error::Validation(format!("{} needs a `{name}` milestone", config.method.name()))
            })
        };
        let agent = |rng: &mut Rng| SacAgent::new(config.sac.clone(), config.augment, config.env, rng);
        let buffer = || ReplayBuffer::new(config.replay_capacity);
        let classifier_skill = |id: TaskId, next: usize, rng: &mut Rng| -> Result<Skill> {
            let v = graph.vertex(id);
            if v.examples.is_empty() {
                return Err(Error::Validation(format!("milestone `{}` has no examples", v.name)));
            }
            Ok(Skill {
                name: v.name.clone(),
                kind: TaskKind::from_name(&v.name).ok(),
                next,
                positives: v.examples.clone(),
                reward: RewardSource::Classifier(SuccessClassifier::new(id, &config.classifier, rng)?),
                agent: agent(rng)?,
                buffer: buffer()?,
                collected: 0,
            })
        };

        let skills: Vec<Skill> = match config.method {
            MethodKind::Avail => graph
                .ids()
                .map(|id| classifier_skill(id, graph.next_label(id).0, &mut net_rng))
                .collect::<Result<_>>()?,
            MethodKind::SacSparse => {
                find("pickup")?;
                alloc::vec![Skill {
                    name: "pickup".to_string(),
                    kind: Some(TaskKind::Pickup),
                    next: 0,
                    positives: Vec::new(),
                    reward: RewardSource::Sparse(TaskKind::Pickup),
                    agent: agent(&mut net_rng)?,
                    buffer: buffer()?,
                    collected: 0,
                }]
            }
            MethodKind::SacVice => alloc::vec![classifier_skill(find("pickup")?, 0, &mut net_rng)?],
            MethodKind::ForwardBackward => {
                let f = classifier_skill(find("pickup")?, 1, &mut net_rng)?;
                let b = classifier_skill(find("place")?, 0, &mut net_rng)?;
                alloc::vec![f, b]
            }
            MethodKind::R3lLite => {
                let f = classifier_skill(find("pickup")?, 1, &mut net_rng)?;
                let p = Skill {
                    name: "perturb".to_string(),
                    kind: None,
                    next: 0,
                    positives: Vec::new(),
                    reward: RewardSource::Rnd(RndModule::new(&config.rnd, &mut net_rng)?),
                    agent: agent(&mut net_rng)?,
                    buffer: buffer()?,
                    collected: 0,
                };
                alloc::vec![f, p]
            }
        };

        let schedule = match (config.method, config.scheduler) {
            (MethodKind::Avail, SchedulerKind::Learned) => Schedule::Learned {
                model: fit_task_model(graph, &config.task_model, &config.augment, &config.env, &mut stream(seed, TASK_MODEL_STREAM))?,
                sample: config.task_model.sample,
            },
            (MethodKind::Avail, SchedulerKind::Oracle) => Schedule::oracle(graph, config.oracle)?,
            _ => Schedule::Naive { tasks: skills.len() },
        };

        let state = env.init(&mut stream(seed, ENV_STREAM));
        Ok(Self {
            config,
            seed,
            skills,
            schedule,
            state,
            current: 0,
            step: 0,
            env_inits: 1,
            rows: Vec::new(),
            last_stats: None,
            slot_log: Vec::new(),
            act_rng: stream(seed, ACT_STREAM),
            learn_rng: stream(seed, LEARN_STREAM),
            sched_rng: stream(seed, SCHED_STREAM),
        })
    }

    pub fn env(&self) -> TetherValve {
        TetherValve::new(self.config.env)
    }

    pub fn finished(&self) -> bool {
        self.step >= self.config.budget
    }

    /// One environment step under the current skill, plus its updates.
    pub fn step_once(&mut self) -> Result<()> {
        let env = self.env();
        let obs = env.observe(&self.state);
        if self.step % self.config.horizon == 0 {
            let slot = self.step / self.config.horizon;
            self.current = self.schedule.select(slot, &self.state, &obs, &mut self.sched_rng)?;
            self.slot_log.push((self.step, self.current));
        }
        let cfg = &self.config;
        let skill = &mut self.skills[self.current];
        let action = if skill.collected < cfg.warmup {
            random_action(&mut self.act_rng)
        } else {
            Action::from_slice(&skill.agent.act(&obs, true, &mut self.act_rng)?)?
        };
        let next = env.step(&self.state, &action)?;
        skill.buffer.push(Transition {
            obs,
            action: action.to_array(),
            next_obs: env.observe(&next),
            done: false,
            task: TaskId(self.current),
        });
        skill.collected += 1;
        if skill.collected >= cfg.warmup && skill.buffer.len() >= cfg.sac.batch_size {
            self.last_stats = Some(skill.learn(cfg, &mut self.learn_rng)?);
        }
        self.state = next;
        self.step += 1;
        Ok(())
    }

    /// Skill descriptions for evaluation.
    pub fn eval_skills(&self) -> Vec<EvalSkill> {
        self.skills.iter().map(|s| EvalSkill { name: s.name.clone(), kind: s.kind, next: s.next }).collect()
    }

    /// Evaluates deterministic snapshots of the current policies on a
    /// private environment. Does not touch the training state.
    pub fn evaluate_now(&self) -> Result<Vec<EvalRow>> {
        let policy = AgentPolicy { agents: self.skills.iter().map(|s| &s.agent).collect() };
        let seed_stream = stream(self.seed, EVAL_STREAM_BASE + self.step);
        let eval_seed = {
            use rand::RngCore;
            let mut r = seed_stream;
            r.next_u64()
        };
        let rates = evaluate(&self.env(), &self.eval_skills(), &policy, &self.schedule, &self.config.eval_config(), eval_seed)?;
        Ok(rates.into_iter().map(|(task, success_rate)| EvalRow { step: self.step, task, success_rate }).collect())
    }

    fn due_for_eval(&self) -> bool {
        self.step % self.config.eval_interval == 0 || self.step == self.config.budget
    }

    /// Trains until `stop` steps (capped at the budget), evaluating at step
    /// zero, every `eval_interval` steps and at the end of the budget.
    /// `on_eval` runs after each evaluation, e.g. to checkpoint.
    pub fn run_until<F>(&mut self, stop: u64, mut on_eval: F) -> Result<()>
    where
        F: FnMut(&Trainer) -> Result<()>,
    {
        let stop = stop.min(self.config.budget);
        if self.rows.is_empty() {
            let rows = self.evaluate_now()?;
            self.rows.extend(rows);
            on_eval(self)?;
        }
        while self.step < stop {
            self.step_once()?;
            if self.due_for_eval() {
                let rows = self.evaluate_now()?;
                self.rows.extend(rows);
                on_eval(self)?;
            }
        }
        Ok(())
    }

    pub fn artifacts(&self) -> RunArtifacts {
        RunArtifacts {
            config: self.config.clone(),
            seed: self.seed,
            rows: self.rows.clone(),
            checkpoints: Vec::new(),
            wall_clock_secs: 0.0,
        }
    }
}

/// AVAIL on `graph` for the full budget.
pub fn avail_train(config: TrainConfig, graph: &MilestoneGraph, seed: u64) -> Result<RunArtifacts> {
    if config.method != MethodKind::Avail {
        return Err(Error::Validation(format!("avail_train called with method {}", config.method.name())));
    }
    let mut t = Trainer::new(config, graph, seed)?;
    t.run_until(u64::MAX, |_| Ok(()))?;
    Ok(t.artifacts())
}

/// A baseline for the full budget, with its milestones generated from `seed`.
pub fn baseline_train(kind: MethodKind, mut config: TrainConfig, seed: u64) -> Result<RunArtifacts> {
    if kind == MethodKind::Avail {
        return Err(Error::Validation("baseline_train does not run avail".into()));
    }
    config.method = kind;
    let graph = method_graph(kind, &TetherValve::new(config.env), config.examples_per_task, seed)?;
    let mut t = Trainer::new(config, &graph, seed)?;
    t.run_until(u64::MAX, |_| Ok(()))?;
    Ok(t.artifacts())
}
