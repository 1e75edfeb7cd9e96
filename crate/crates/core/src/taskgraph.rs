//! Task selection: a learned next-task classifier, round-robin, and the
//! hand-written oracle for the three-phase valve task.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, EnvState, Observation, TaskKind, OBS_DIM};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::milestones::{AugmentConfig, MilestoneGraph, TaskId};
use crate::nn::{stack, Activation, Adam, AdamConfig, LayerSpec, Mlp, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    Learned,
    Naive,
    Oracle,
}

impl SchedulerKind {
    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Learned => "learned",
            SchedulerKind::Naive => "naive",
            SchedulerKind::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskModelConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Sample the next task from the model instead of taking the argmax.
    pub sample: bool,
}

impl Default for TaskModelConfig {
    fn default() -> Self {
        Self { hidden: vec![256, 256], epochs: 50, batch_size: 32, lr: 3e-4, sample: false }
    }
}

/// `p_task(z | s)`: softmax over next-task logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskModel {
    pub net: Mlp,
    pub opt: Adam,
}

impl TaskModel {
    pub fn new<R: Rng + ?Sized>(tasks: usize, cfg: &TaskModelConfig, rng: &mut R) -> Result<Self> {
        if tasks == 0 {
            return Err(Error::Validation("task model needs at least one task".into()));
        }
        let specs = stack(OBS_DIM, &cfg.hidden, tasks, |i, o| LayerSpec::dense(i, o, Activation::Relu));
        let net = Mlp::new(&specs, rng)?;
        let opt = Adam::new(&net, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
        Ok(Self { net, opt })
    }

    pub fn tasks(&self) -> usize {
        self.net.output_dim()
    }

    pub fn logits(&self, obs: &Observation) -> Result<Vec<f64>> {
        self.net.predict_one(obs)
    }

    pub fn probabilities(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(obs)?))
    }

    /// `argmax_z p(z | s)`, lowest index on ties.
    pub fn select(&self, obs: &Observation) -> Result<TaskId> {
        Ok(TaskId(argmax(&self.logits(obs)?)))
    }

    pub fn select_sampled<R: Rng + ?Sized>(&self, obs: &Observation, rng: &mut R) -> Result<TaskId> {
        let p = self.probabilities(obs)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return Ok(TaskId(i));
            }
        }
        Ok(TaskId(p.len() - 1))
    }

    /// One cross-entropy step on a batch of labeled observations; returns the mean loss.
    pub fn train_step<R: Rng + ?Sized>(&mut self, x: &Matrix, labels: &[usize], rng: &mut R) -> Result<f64> {
        let trace = self.net.forward_batch(x, Mode::Train, rng)?;
        let logits = trace.output();
        let n = labels.len() as f64;
        let mut grad = Matrix::zeros(logits.rows, logits.cols);
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let p = softmax(logits.row(r));
            loss -= libm::log(p[y].max(1e-300));
            let g = grad.row_mut(r);
            for (j, pj) in p.iter().enumerate() {
                g[j] = (pj - if j == y { 1.0 } else { 0.0 }) / n;
            }
        }
        let loss = loss / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite("task model loss"));
        }
        let (grads, _) = self.net.backward(&trace, &grad)?;
        self.opt.step(&mut self.net, &grads)?;
        Ok(loss)
    }
}

/// Labels every example of vertex `v` with `next(v)`.
pub fn task_dataset(graph: &MilestoneGraph) -> Vec<(Observation, TaskId)> {
    graph
        .ids()
        .flat_map(|id| {
            let next = graph.next_label(id);
            graph.vertex(id).examples.iter().map(move |o| (*o, next))
        })
        .collect()
}

/// Supervised fit of the next-task model on the graph's milestones.
pub fn fit_task_model<R: Rng + ?Sized>(
    graph: &MilestoneGraph,
    cfg: &TaskModelConfig,
    augment: &AugmentConfig,
    bounds: &EnvConfig,
    rng: &mut R,
) -> Result<TaskModel> {
    graph.require_examples()?;
    fit_on(&task_dataset(graph), graph.len(), cfg, augment, bounds, rng)
}

/// Fits a `tasks`-way model on explicit `(observation, label)` pairs.
pub fn fit_on<R: Rng + ?Sized>(
    data: &[(Observation, TaskId)],
    tasks: usize,
    cfg: &TaskModelConfig,
    augment: &AugmentConfig,
    bounds: &EnvConfig,
    rng: &mut R,
) -> Result<TaskModel> {
    if data.is_empty() {
        return Err(Error::Validation("task model dataset is empty".into()));
    }
    if let Some((_, bad)) = data.iter().find(|(_, z)| z.0 >= tasks) {
        return Err(Error::Validation(format!("label {} out of range for {tasks} tasks", bad.0)));
    }
    if tasks > 1 && data.iter().all(|(_, z)| *z == data[0].1) {
        return Err(Error::Validation(format!(
            "degenerate task dataset: every example is labeled {}",
            data[0].1 .0
        )));
    }
    let mut model = TaskModel::new(tasks, cfg, rng)?;
    if tasks == 1 {
        return Ok(model);
    }
    let batch = cfg.batch_size.max(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            let mut x = Matrix::zeros(chunk.len(), OBS_DIM);
            let mut labels = Vec::with_capacity(chunk.len());
            for (r, &i) in chunk.iter().enumerate() {
                x.row_mut(r).copy_from_slice(&augment.augment(&data[i].0, bounds, rng));
                labels.push(data[i].1 .0);
            }
            model.train_step(&x, &labels, rng)?;
        }
    }
    Ok(model)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| libm::exp(l - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Round-robin over `tasks` slots, independent of state.
pub fn select_naive(slot: u64, tasks: usize) -> TaskId {
    TaskId((slot % tasks.max(1) as u64) as usize)
}

/// Radii used by the oracle's branch table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub centered_radius: f64,
    pub hand_over_radius: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { centered_radius: 0.1, hand_over_radius: 0.15 }
    }
}

/// Hand-coded schedule over true positions. The previous task is accepted
/// for interface parity and ignored, as in the branch table.
pub fn select_oracle(state: &EnvState, _previous: Option<TaskKind>, cfg: &OracleConfig) -> TaskKind {
    let obj = [state.obj[0], state.obj[1]];
    let is_centered = libm::hypot(obj[0], obj[1]) < cfg.centered_radius;
    let is_hand_over_object = libm::hypot(obj[0] - state.hand[0], obj[1] - state.hand[1]) < cfg.hand_over_radius;
    if !is_centered && is_hand_over_object {
        TaskKind::Reposition
    } else if !is_centered {
        TaskKind::Reach
    } else {
        TaskKind::Pickup
    }
}

/// [`select_oracle`] with the default radii.
pub fn oracle_kind(state: &EnvState) -> TaskKind {
    select_oracle(state, None, &OracleConfig::default())
}
