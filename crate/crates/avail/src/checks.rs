//! Measured property checks shared by the `selftest` command and the
//! acceptance test target. Each returns a [`Check`] carrying the measured
//! value, the bound it was held to and the time it took.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Result};
use avail_core::env::{Action, EnvConfig, Observation, TaskKind, TetherValve};
use avail_core::linalg::Matrix;
use avail_core::milestones::{AugmentConfig, MilestoneGraph, TaskId};
use avail_core::nn::{grad_check, Activation, LayerSpec, LossSpec, Mlp, Mode};
use avail_core::orchestrator::{MethodKind, RunArtifacts, TrainConfig};
use avail_core::rewards::{ClassifierConfig, SuccessClassifier};
use avail_core::rl::{Batch, SacAgent, SacConfig, Transition};
use avail_core::rng::stream;
use avail_core::taskgraph::{fit_on, select_oracle, task_dataset, OracleConfig, SchedulerKind, TaskModelConfig};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::report::HEADLINE;
use crate::run;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub id: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub secs: f64,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {} {}: {} ({:.1} s)", self.id, self.name, self.detail, self.secs)
    }
}

fn check(id: &'static str, name: &'static str, started: Instant, limit_secs: f64, ok: bool, detail: String) -> Check {
    let secs = started.elapsed().as_secs_f64();
    let in_time = secs < limit_secs;
    let detail = if in_time { detail } else { format!("{detail}; over the {limit_secs} s limit") };
    Check { id, name, passed: ok && in_time, detail, secs }
}

/// Random dense net over relu/tanh/identity with optional layer norm and dropout.
pub fn random_architecture(seed: u64) -> (Mlp, Matrix, LossSpec) {
    let mut r = stream(seed, 0x6772_6164);
    let depth = r.random_range(1..=4);
    let inputs = r.random_range(1..=6);
    let mut prev = inputs;
    let mut specs = Vec::new();
    for i in 0..depth {
        let out = if i + 1 == depth { r.random_range(1..=3) } else { r.random_range(2..=8) };
        let act = [Activation::Relu, Activation::Tanh, Activation::Identity][r.random_range(0..3)];
        let mut spec = LayerSpec::dense(prev, out, act);
        // Over two units layer norm is a sign function, which leaves upstream
        // gradients at the finite-difference noise floor.
        if out >= 3 && r.random_bool(0.5) {
            spec = spec.with_layer_norm();
        }
        if r.random_bool(0.5) {
            spec = spec.with_dropout(r.random_range(0.05..0.5));
        }
        specs.push(spec);
        prev = out;
    }
    let mut net = Mlp::new(&specs, &mut r).expect("valid specs");
    for l in net.layers_mut() {
        if let Some(n) = &mut l.norm {
            n.gain.iter_mut().for_each(|g| *g = r.random_range(0.5..1.5));
            n.shift.iter_mut().for_each(|s| *s = r.random_range(-0.5..0.5));
        }
    }
    let rows = r.random_range(1..=4);
    let x = Matrix::from_vec(rows, inputs, (0..rows * inputs).map(|_| r.random_range(-1.0..1.0)).collect()).expect("shape");
    let target = (0..rows * net.output_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
    (net, x, LossSpec::LeastSquares(target))
}

/// Criterion 1: finite-difference agreement across 20 random architectures.
pub fn gradient_correctness() -> Result<Check> {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let (mut relu, mut tanh, mut norm, mut drop) = (false, false, false, false);
    for seed in 0..20 {
        let (net, x, loss) = random_architecture(seed);
        for l in net.layers() {
            relu |= l.activation == Activation::Relu;
            tanh |= l.activation == Activation::Tanh;
            norm |= l.norm.is_some();
            drop |= l.dropout > 0.0;
        }
        worst = worst.max(grad_check(&net, &x, &loss, Mode::Train, seed)?);
    }
    let covered = relu && tanh && norm && drop;
    Ok(check(
        "1",
        "gradient correctness",
        t,
        10.0,
        worst < 1e-4 && covered,
        format!("max relative error {worst:.2e} (bound 1e-4) over 20 nets; relu/tanh/layer-norm/dropout all covered: {covered}"),
    ))
}

/// Criterion 2: fuzzed steps never break the tether, arena or grasp rules.
pub fn environment_invariants(steps: u64) -> Result<Check> {
    let t = Instant::now();
    let env = TetherValve::default();
    let c = env.config;
    let mut rng = stream(2024, 0);
    let mut s = env.init(&mut rng);
    let (mut violations, mut held_steps, mut max_r) = (0u64, 0u64, 0.0f64);
    let mut first = None;
    for i in 0..steps {
        // Mix uniform noise with expert pulls so grasps, drags against the
        // tether and drops all happen often.
        let a = if rng.random_bool(0.3) {
            let kind = [TaskKind::Reach, TaskKind::Reposition, TaskKind::Pickup, TaskKind::Place][rng.random_range(0..4)];
            env.scripted_expert(&s, kind)
        } else {
            let mut d = [0.0; 3];
            d.iter_mut().for_each(|v| *v = rng.random_range(-1.0..=1.0));
            Action::new(d, rng.random_range(-0.6..=1.0))
        };
        let n = env.step(&s, &a)?;
        let r = n.obj[0].hypot(n.obj[1]);
        max_r = max_r.max(r);
        let w = c.arena_half_width;
        let mut bad = Vec::new();
        if r > c.tether_radius + 1e-12 {
            bad.push("tether");
        }
        if n.hand[0].abs() > w || n.hand[1].abs() > w || n.hand[2] < 0.0 || n.hand[2] > c.max_height {
            bad.push("arena");
        }
        let horizontal = (n.hand[0] - n.obj[0]).hypot(n.hand[1] - n.obj[1]);
        if n.held && !(horizontal < c.grasp_radius && (n.hand[2] - n.obj[2]).abs() < c.grasp_radius) {
            bad.push("held outside grasp");
        }
        if !n.held && n.obj[2] != 0.0 {
            bad.push("released object in the air");
        }
        if env.success(&n, TaskKind::Pickup) && !n.held {
            bad.push("pickup without grasp");
        }
        if n.step_count != s.step_count + 1 {
            bad.push("step count");
        }
        if !bad.is_empty() || env.check_invariants(&n).is_err() {
            violations += 1;
            first.get_or_insert((i, bad.join(", ")));
        }
        held_steps += n.held as u64;
        s = n;
    }
    let first = first.map_or(String::new(), |(i, what)| format!("; first at step {i}: {what}"));
    Ok(check(
        "2",
        "environment invariants",
        t,
        30.0,
        violations == 0,
        format!("{violations} violations in {steps} steps ({held_steps} held), max object radius {max_r:.15}{first}"),
    ))
}

/// Independent branch table of the oracle scheduler.
fn oracle_reference(obj: [f64; 2], hand: [f64; 2]) -> TaskKind {
    let centered = (obj[0] * obj[0] + obj[1] * obj[1]).sqrt() < 0.1;
    let over = ((obj[0] - hand[0]).powi(2) + (obj[1] - hand[1]).powi(2)).sqrt() < 0.15;
    if centered {
        TaskKind::Pickup
    } else if over {
        TaskKind::Reposition
    } else {
        TaskKind::Reach
    }
}

/// Criterion 3: exhaustive 0.01 m grid over object and hand positions.
pub fn oracle_equivalence() -> Result<Check> {
    let t = Instant::now();
    let env = TetherValve::default();
    let w = env.config.arena_half_width;
    let ticks = (2.0 * w / 0.01).round() as i64;
    let coord = |i: i64| -w + 0.01 * i as f64;
    let mut s = env.init_seeded(0);
    let cfg = OracleConfig::default();
    let (mut cells, mut agree) = (0u64, 0u64);
    for ox in 0..=ticks {
        for oy in 0..=ticks {
            s.obj = [coord(ox), coord(oy), 0.0];
            for hx in 0..=ticks {
                for hy in 0..=ticks {
                    s.hand = [coord(hx), coord(hy), 0.1];
                    cells += 1;
                    agree += (select_oracle(&s, None, &cfg) == oracle_reference([s.obj[0], s.obj[1]], [s.hand[0], s.hand[1]])) as u64;
                }
            }
        }
    }
    Ok(check(
        "3",
        "oracle task graph equivalence",
        t,
        60.0,
        agree == cells,
        format!("{agree}/{cells} grid cells agree (bound 100%)"),
    ))
}

/// Criterion 4: next-task accuracy on a 10% held-out split of the default cycle.
pub fn task_model_fidelity() -> Result<Check> {
    let t = Instant::now();
    let env = TetherValve::default();
    let graph = MilestoneGraph::default_cycle().with_generated_examples(&env, 300, 404)?;
    let mut data = task_dataset(&graph);
    data.shuffle(&mut stream(404, 1));
    let (test, train) = data.split_at(data.len() / 10);
    let model = fit_on(train, graph.len(), &TaskModelConfig::default(), &AugmentConfig::default(), &env.config, &mut stream(404, 2))?;
    let mut hits = 0;
    for (o, z) in test {
        hits += (model.select(o)? == *z) as usize;
    }
    let acc = hits as f64 / test.len() as f64;
    Ok(check(
        "4",
        "task-model fidelity",
        t,
        120.0,
        acc >= 0.95,
        format!("held-out next-task accuracy {acc:.3} ({hits}/{}; bound 0.95)", test.len()),
    ))
}

/// Points on either side of a margin around a fixed hyperplane.
pub fn separable_sets(n: usize, seed: u64) -> (Vec<Observation>, Vec<Observation>) {
    let w = [1.0, -0.5, 0.25, 0.0, 0.7, -0.3, 0.2, 0.1];
    let mut rng = stream(seed, 0);
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    while pos.len() < n || neg.len() < n {
        let x: Observation = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let s: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
        if s > 0.2 && pos.len() < n {
            pos.push(x);
        } else if s < -0.2 && neg.len() < n {
            neg.push(x);
        }
    }
    (pos, neg)
}

/// Criterion 5: the default classifier separates a synthetic set within
/// 500 updates, and its reward stays in `[−10, 0]`.
pub fn classifier_learning() -> Result<Check> {
    let t = Instant::now();
    let cfg = ClassifierConfig::default();
    let (pos, neg) = separable_sets(1000, 51);
    let (tp, tn) = separable_sets(250, 52);
    let mut rng = stream(53, 0);
    let mut clf = SuccessClassifier::new(TaskId(0), &cfg, &mut rng)?;
    let bounds = EnvConfig::default();
    for _ in 0..500 {
        clf.update(&pos, &neg, &cfg, &AugmentConfig::default(), &bounds, &mut rng)?;
    }
    let mut hits = 0;
    for x in &tp {
        hits += (clf.probability(x)? > 0.5) as usize;
    }
    for x in &tn {
        hits += (clf.probability(x)? <= 0.5) as usize;
    }
    let acc = hits as f64 / (tp.len() + tn.len()) as f64;

    let mut probes: Vec<Observation> = tp.iter().chain(&tn).copied().collect();
    for k in 0..2000 {
        let scale = [1.0, 10.0, 1e3, 1e6][k % 4];
        probes.push(std::array::from_fn(|_| rng.random_range(-scale..scale)));
    }
    let rewards = clf.rewards(&Matrix::from_rows(&probes)?, &cfg)?;
    let (lo, hi) = rewards.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
    let bounded = lo >= -10.0 && hi <= 0.0;
    Ok(check(
        "5",
        "classifier learning",
        t,
        60.0,
        acc >= 0.95 && bounded,
        format!("held-out accuracy {acc:.3} after 500 updates (bound 0.95); rewards over {} probes in [{lo:.3}, {hi:.3e}] (bound [-10, 0])", probes.len()),
    ))
}

/// Criterion 6: a default-size critic fits ten fixed transitions, and the
/// Polyak trail closes geometrically.
pub fn sac_sanity() -> Result<Check> {
    let t = Instant::now();
    let bounds = EnvConfig::default();
    let mut rng = stream(61, 0);
    let items: Vec<Transition> = (0..10)
        .map(|_| Transition {
            obs: std::array::from_fn(|_| rng.random_range(-0.3..0.3)),
            action: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            next_obs: std::array::from_fn(|_| rng.random_range(-0.3..0.3)),
            done: false,
            task: TaskId(0),
        })
        .collect();
    let rewards: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..0.0)).collect();
    let batch = Batch::from_transitions(&items, |_| Ok(rewards.clone()))?;
    // Fixed rewards are fixed regression targets only without bootstrapping.
    let mut agent = SacAgent::new(SacConfig { gamma: 0.0, ..Default::default() }, AugmentConfig::default(), bounds, &mut stream(62, 0))?;
    let mut loss = f64::INFINITY;
    let mut used = 0;
    for i in 1..=2000 {
        let y = agent.compute_target(&batch, &mut rng)?;
        loss = agent.critic_update(&batch, &y, &mut rng)?;
        agent.polyak_update();
        used = i;
        if loss < 1e-3 {
            break;
        }
    }

    let mut agent = SacAgent::new(SacConfig::default(), AugmentConfig::default(), bounds, &mut stream(63, 0))?;
    for c in &mut agent.critics {
        c.scale_output_layer(3.0);
    }
    let flat = |m: &Mlp| m.tensors().concat();
    let gap0: Vec<f64> = flat(&agent.targets[0]).iter().zip(flat(&agent.critics[0])).map(|(a, b)| a - b).collect();
    let k = 1000;
    for _ in 0..k {
        agent.polyak_update();
    }
    let ratio = (1.0 - agent.config.tau).powi(k);
    let gap: Vec<f64> = flat(&agent.targets[0]).iter().zip(flat(&agent.critics[0])).map(|(a, b)| a - b).collect();
    let dev = gap.iter().zip(&gap0).map(|(g, g0)| (g - g0 * ratio).abs()).fold(0.0, f64::max);
    Ok(check(
        "6",
        "SAC sanity",
        t,
        120.0,
        loss < 1e-3 && dev < 1e-10,
        format!("critic loss {loss:.2e} after {used} updates (bound 1e-3 within 2000); polyak gap deviation from (1-tau)^{k} is {dev:.1e} (bound 1e-10)"),
    ))
}

/// Small-network configuration for the 2k-step determinism runs.
pub fn micro_config(output_dir: &Path) -> ExperimentConfig {
    let mut train = TrainConfig {
        budget: 2000,
        eval_interval: 500,
        eval_episodes: 4,
        warmup: 200,
        examples_per_task: 100,
        replay_capacity: 5000,
        ..Default::default()
    };
    train.sac.hidden = vec![32, 32];
    train.sac.batch_size = 64;
    train.classifier.hidden = vec![32, 32, 32];
    train.classifier.batch_size = 64;
    train.task_model.hidden = vec![32, 32];
    train.task_model.epochs = 5;
    ExperimentConfig { seeds: vec![9], graph: None, output_dir: output_dir.to_path_buf(), train }
}

/// Criterion 9: identical runs give identical CSV bytes, and a run stopped
/// at step 1000 and resumed from disk matches the uninterrupted run.
pub fn determinism(work: &Path) -> Result<Check> {
    let t = Instant::now();
    let read = |dir: &Path, f: &str| std::fs::read(dir.join(f));
    let cfg = micro_config(&work.join("a"));
    let (a, _) = run::run_experiment(&cfg, None)?;
    let (b, _) = run::run_experiment(&ExperimentConfig { output_dir: work.join("b"), ..cfg.clone() }, None)?;
    let (c, _) = run::run_experiment(&ExperimentConfig { output_dir: work.join("c"), ..cfg.clone() }, Some(1000))?;
    let (a, b, c) = (&a[0].dir, &b[0].dir, &c[0].dir);
    let stopped = run::load_trainer(c)?.step;
    run::resume(c, None)?;
    let csv_a = read(a, crate::report::CURVES_FILE)?;
    let same_csv = csv_a == read(b, crate::report::CURVES_FILE)?;
    let resumed_csv = csv_a == read(c, crate::report::CURVES_FILE)?;
    let state = |d: &Path| read(&d.join(run::CHECKPOINT_DIR), run::TRAINER_FILE);
    let resumed_state = state(a)? == state(c)?;
    let rows = csv_a.iter().filter(|&&b| b == b'\n').count().saturating_sub(1);
    Ok(check(
        "9",
        "determinism",
        t,
        600.0,
        same_csv && resumed_csv && resumed_state && stopped == 1000,
        format!(
            "repeat run CSV identical: {same_csv}; resumed at step {stopped}, CSV identical: {resumed_csv}, final state identical: {resumed_state} ({rows} rows)"
        ),
    ))
}

/// The runs behind criteria 7 and 8.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub avail: Vec<RunArtifacts>,
    pub oracle: Vec<RunArtifacts>,
    pub naive: Vec<RunArtifacts>,
    pub forward_backward: Vec<RunArtifacts>,
    pub sac_sparse: Vec<RunArtifacts>,
}

/// Trains every method the comparison needs, one run per seed.
pub fn run_comparison(base: &ExperimentConfig) -> Result<Comparison> {
    let go = |method, scheduler| -> Result<Vec<RunArtifacts>> {
        let mut cfg = base.clone();
        cfg.train.method = method;
        cfg.train.scheduler = scheduler;
        Ok(run::run_experiment(&cfg, None)?.0.into_iter().map(|o| o.artifacts).collect())
    };
    Ok(Comparison {
        avail: go(MethodKind::Avail, SchedulerKind::Learned)?,
        oracle: go(MethodKind::Avail, SchedulerKind::Oracle)?,
        naive: go(MethodKind::Avail, SchedulerKind::Naive)?,
        forward_backward: go(MethodKind::ForwardBackward, SchedulerKind::Learned)?,
        sac_sparse: go(MethodKind::SacSparse, SchedulerKind::Learned)?,
    })
}

fn finals(runs: &[RunArtifacts]) -> Result<Vec<f64>> {
    runs.iter()
        .map(|r| r.final_rate(HEADLINE).ok_or_else(|| anyhow::anyhow!("run without a {HEADLINE} row")))
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Criterion 7 (a, b, c) from finished runs.
pub fn end_to_end(cmp: &Comparison, secs: f64) -> Result<Vec<Check>> {
    if cmp.avail.is_empty() {
        bail!("no runs to compare");
    }
    let avail = finals(&cmp.avail)?;
    let fb = mean(&finals(&cmp.forward_backward)?);
    let sparse = mean(&finals(&cmp.sac_sparse)?);
    let oracle = mean(&finals(&cmp.oracle)?);
    let m = mean(&avail);
    let worst = avail.iter().copied().fold(f64::INFINITY, f64::min);
    let done = |id, name, ok, detail| Check { id, name, passed: ok, detail, secs };
    Ok(vec![
        done(
            "7a",
            "AVAIL pickup success",
            m >= 0.8 && worst >= 0.7,
            format!("mean final pickup {m:.3} (bound 0.8), worst seed {worst:.3} (bound 0.7), seeds {avail:?}"),
        ),
        done(
            "7b",
            "method ordering",
            m > fb && fb > sparse && sparse <= 0.2,
            format!("avail {m:.3} > forward-backward {fb:.3} > sac-sparse {sparse:.3}, sac-sparse bound 0.2"),
        ),
        done(
            "7c",
            "oracle vs learned scheduler",
            (oracle - m).abs() <= 0.15,
            format!("oracle {oracle:.3} vs learned {m:.3}, gap {:.3} (bound 0.15)", (oracle - m).abs()),
        ),
    ])
}

/// Mean steps to 0.6 headline success for the learned and naive schedulers
/// and their ratio, as written to the comparison summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Efficiency {
    pub learned_steps: f64,
    pub naive_steps: f64,
    pub ratio: f64,
    pub learned_reached: usize,
    pub naive_reached: usize,
}

/// Runs that never reach 0.6 count as the full budget.
pub fn efficiency(cmp: &Comparison) -> Efficiency {
    let steps = |runs: &[RunArtifacts]| {
        mean(&runs.iter().map(|r| r.steps_to(HEADLINE, 0.6).unwrap_or(r.config.budget) as f64).collect::<Vec<_>>())
    };
    let reached = |runs: &[RunArtifacts]| runs.iter().filter(|r| r.steps_to(HEADLINE, 0.6).is_some()).count();
    let (l, n) = (steps(&cmp.avail), steps(&cmp.naive));
    Efficiency {
        learned_steps: l,
        naive_steps: n,
        ratio: if n > 0.0 { l / n } else { f64::INFINITY },
        learned_reached: reached(&cmp.avail),
        naive_reached: reached(&cmp.naive),
    }
}

/// Criterion 8: learned over naive steps-to-0.6. Above 1.1 is reported,
/// above 1.5 fails.
pub fn scheduler_efficiency(cmp: &Comparison, secs: f64) -> Check {
    let e = efficiency(cmp);
    let verdict = if e.ratio <= 1.1 {
        "within 1.1"
    } else if e.ratio <= 1.5 {
        "above 1.1, informational"
    } else {
        "above the 1.5 hard limit"
    };
    Check {
        id: "8",
        name: "scheduler efficiency",
        passed: e.ratio <= 1.5,
        detail: format!(
            "steps to 0.6: learned {:.0} ({}/{} seeds reached), naive {:.0} ({}/{}), ratio {:.3} ({verdict})",
            e.learned_steps,
            e.learned_reached,
            cmp.avail.len(),
            e.naive_steps,
            e.naive_reached,
            cmp.naive.len(),
            e.ratio
        ),
        secs,
    }
}
