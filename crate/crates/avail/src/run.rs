//! Run directories, checkpointing and the per-seed training driver.
//!
//! A run directory `{method}-{seed}-{timestamp}` holds the echoed
//! `config.toml`, `curves.csv`, `summary.json` and `checkpoint/`. The
//! checkpoint is rewritten after every evaluation: `trainer.bin` is the
//! exact resumable state (networks, optimizers, buffers, random streams);
//! the `.nn` files export each network in the parameter-file format.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use avail_core::env::TetherValve;
use avail_core::orchestrator::{method_graph, MethodKind, RewardSource, RunArtifacts, Schedule, Trainer};
use log::info;
use serde::Serialize;

use crate::config::{save_config, ExperimentConfig};
use crate::graphfile::load_graph;
use crate::nnfile;
use crate::report::{self, Summary, CURVES_FILE, SUMMARY_FILE};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const TRAINER_FILE: &str = "trainer.bin";
pub const CONFIG_FILE: &str = "config.toml";

/// Creates `{parent}/{method}-{seed}-{timestamp}`, adding a counter if a
/// run with the same name already exists.
pub fn create_run_dir(parent: &Path, method: MethodKind, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S");
    let base = format!("{}-{seed}-{stamp}", method.name());
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}.{n}") };
        let dir = parent.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

#[derive(Serialize)]
struct AgentMeta<'a> {
    name: &'a str,
    log_alpha: f64,
    alpha: f64,
    updates: u64,
    collected: u64,
    buffered: usize,
    config: &'a avail_core::rl::SacConfig,
}

/// Writes `dir/checkpoint` atomically (build beside it, then swap).
pub fn write_checkpoint(dir: &Path, t: &Trainer) -> Result<PathBuf> {
    let final_dir = dir.join(CHECKPOINT_DIR);
    let tmp = dir.join(format!("{CHECKPOINT_DIR}.tmp"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(tmp.join("agents"))?;
    let state = bincode::serialize(t).context("encoding trainer state")?;
    fs::write(tmp.join(TRAINER_FILE), state)?;
    for (i, s) in t.skills.iter().enumerate() {
        let a = tmp.join("agents").join(format!("{i}-{}", s.name));
        fs::create_dir_all(&a)?;
        nnfile::save(&s.agent.actor, &a.join("actor.nn"))?;
        for k in 0..2 {
            nnfile::save(&s.agent.critics[k], &a.join(format!("critic{k}.nn")))?;
            nnfile::save(&s.agent.targets[k], &a.join(format!("target{k}.nn")))?;
        }
        let meta = AgentMeta {
            name: &s.name,
            log_alpha: s.agent.log_alpha,
            alpha: s.agent.alpha(),
            updates: s.agent.updates,
            collected: s.collected,
            buffered: s.buffer.len(),
            config: &s.agent.config,
        };
        fs::write(a.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        match &s.reward {
            RewardSource::Classifier(c) => {
                fs::create_dir_all(tmp.join("classifiers"))?;
                nnfile::save(&c.net, &tmp.join("classifiers").join(format!("{i}.nn")))?;
            }
            RewardSource::Rnd(r) => {
                nnfile::save(&r.target, &a.join("rnd_target.nn"))?;
                nnfile::save(&r.predictor, &a.join("rnd_predictor.nn"))?;
            }
            RewardSource::Sparse(_) => {}
        }
    }
    if let Schedule::Learned { model, .. } = &t.schedule {
        nnfile::save(&model.net, &tmp.join("task_model.nn"))?;
    }
    if final_dir.exists() {
        fs::remove_dir_all(&final_dir)?;
    }
    fs::rename(&tmp, &final_dir)?;
    Ok(final_dir)
}

/// Loads the trainer from a run directory or its `checkpoint/` directory.
/// A run interrupted between removing the old checkpoint and renaming the
/// new one is picked up from `checkpoint.tmp`, which is complete by then.
pub fn load_trainer(path: &Path) -> Result<Trainer> {
    let candidates = [
        path.join(CHECKPOINT_DIR).join(TRAINER_FILE),
        path.join(TRAINER_FILE),
        path.join(format!("{CHECKPOINT_DIR}.tmp")).join(TRAINER_FILE),
    ];
    let Some(file) = candidates.iter().find(|p| p.is_file()) else {
        bail!("no {TRAINER_FILE} under {}", path.display());
    };
    let bytes = fs::read(file).with_context(|| format!("reading {}", file.display()))?;
    bincode::deserialize(&bytes).with_context(|| format!("decoding {}", file.display()))
}

/// Writes the curve CSV and summary for the trainer's current rows.
pub fn write_reports(dir: &Path, t: &Trainer, wall_clock_secs: f64) -> Result<RunArtifacts> {
    let mut art = t.artifacts();
    art.wall_clock_secs = wall_clock_secs;
    art.checkpoints = vec![dir.join(CHECKPOINT_DIR).display().to_string()];
    report::write_csv(&dir.join(CURVES_FILE), &report::curve_rows(&art))?;
    report::write_summary(&dir.join(SUMMARY_FILE), &Summary::of(&art))?;
    Ok(art)
}

/// Trains `t` in `dir` until `stop` (or the budget), checkpointing and
/// refreshing the reports after every evaluation.
pub fn drive(dir: &Path, t: &mut Trainer, stop: Option<u64>) -> Result<RunArtifacts> {
    let started = Instant::now();
    let stop = stop.unwrap_or(u64::MAX).min(t.config.budget);
    let interval = t.config.eval_interval;
    loop {
        let next = ((t.step / interval) + 1).saturating_mul(interval).min(stop);
        t.run_until(next, |_| Ok(()))?;
        write_checkpoint(dir, t)?;
        let art = write_reports(dir, t, started.elapsed().as_secs_f64())?;
        info!(
            "{}: step {}/{}, {}",
            dir.display(),
            t.step,
            t.config.budget,
            t.rows
                .iter()
                .filter(|r| r.step == t.step)
                .map(|r| format!("{}={:.2}", r.task, r.success_rate))
                .collect::<Vec<_>>()
                .join(" ")
        );
        if t.step >= stop {
            return Ok(art);
        }
    }
}

/// Builds the trainer for one seed of `cfg`.
pub fn new_trainer(cfg: &ExperimentConfig, seed: u64) -> Result<Trainer> {
    let train = &cfg.train;
    let graph = match (&cfg.graph, train.method) {
        (Some(path), MethodKind::Avail) => load_graph(path)?,
        _ => method_graph(train.method, &TetherValve::new(train.env), train.examples_per_task, seed)?,
    };
    Ok(Trainer::new(train.clone(), &graph, seed)?)
}

/// One finished (or interrupted) run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub artifacts: RunArtifacts,
}

/// Trains every seed in its own run directory and writes the aggregate CSV.
/// `stop` interrupts each run early (used to exercise resume).
pub fn run_experiment(cfg: &ExperimentConfig, stop: Option<u64>) -> Result<(Vec<RunOutcome>, PathBuf)> {
    cfg.validate()?;
    let mut outcomes = Vec::new();
    for &seed in &cfg.seeds {
        let dir = create_run_dir(&cfg.output_dir, cfg.train.method, seed)?;
        let mut echo = cfg.clone();
        echo.seeds = vec![seed];
        save_config(&echo, &dir.join(CONFIG_FILE))?;
        let mut t = new_trainer(cfg, seed).with_context(|| format!("setting up seed {seed}"))?;
        let artifacts = drive(&dir, &mut t, stop).with_context(|| format!("training seed {seed}"))?;
        outcomes.push(RunOutcome { dir, artifacts });
    }
    let rows: Vec<_> = outcomes.iter().flat_map(|o| report::curve_rows(&o.artifacts)).collect();
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S");
    let agg = cfg.output_dir.join(format!("{}-aggregate-{stamp}.csv", cfg.train.method.name()));
    report::write_csv(&agg, &report::aggregate(&rows))?;
    Ok((outcomes, agg))
}

/// Continues an interrupted run in place from its last checkpoint.
pub fn resume(dir: &Path, stop: Option<u64>) -> Result<RunOutcome> {
    let mut t = load_trainer(dir)?;
    info!("resuming {} at step {}", dir.display(), t.step);
    let artifacts = drive(dir, &mut t, stop)?;
    Ok(RunOutcome { dir: dir.to_path_buf(), artifacts })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dirs_are_named_and_unique() {
        let tmp = tempfile::tempdir().unwrap();
        let a = create_run_dir(tmp.path(), MethodKind::SacVice, 4).unwrap();
        let b = create_run_dir(tmp.path(), MethodKind::SacVice, 4).unwrap();
        assert_ne!(a, b);
        let name = a.file_name().unwrap().to_str().unwrap();
        assert!(name.starts_with("sac_vice-4-"), "{name}");
        assert_eq!(name.len(), "sac_vice-4-".len() + "20260101T000000".len());
    }
}
