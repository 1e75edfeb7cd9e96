//! CSV and JSON outputs: per-run learning curves, run summaries, the
//! across-seed aggregate and the tidy export used for plotting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use avail_core::orchestrator::{RunArtifacts, TrainConfig, CHAIN};
use serde::{Deserialize, Serialize};

pub const CURVES_FILE: &str = "curves.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Task whose rate is reported as the method's pickup success.
pub const HEADLINE: &str = CHAIN;

/// One line of `curves.csv`: `step,task,success_rate,method,seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: u64,
    pub task: String,
    pub success_rate: f64,
    pub method: String,
    pub seed: u64,
}

pub fn curve_rows(art: &RunArtifacts) -> Vec<CurveRow> {
    art.rows
        .iter()
        .map(|r| CurveRow {
            step: r.step,
            task: r.task.clone(),
            success_rate: r.success_rate,
            method: art.config.method.name().to_string(),
            seed: art.seed,
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curves(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = r.deserialize().collect::<Result<Vec<CurveRow>, _>>();
    rows.with_context(|| format!("parsing {}", path.display()))
}

/// `summary.json` of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub scheduler: String,
    pub seed: u64,
    pub steps: u64,
    pub headline_task: String,
    /// Last evaluated rate per task.
    pub final_rates: BTreeMap<String, f64>,
    /// First evaluated step where the headline rate reached 0.6.
    pub steps_to_0_6: Option<u64>,
    pub wall_clock_secs: f64,
    pub checkpoints: Vec<String>,
    pub config: TrainConfig,
}

impl Summary {
    pub fn of(art: &RunArtifacts) -> Self {
        let mut final_rates = BTreeMap::new();
        for r in &art.rows {
            final_rates.insert(r.task.clone(), r.success_rate);
        }
        Self {
            method: art.config.method.name().into(),
            scheduler: art.config.scheduler.name().into(),
            seed: art.seed,
            steps: art.rows.last().map_or(0, |r| r.step),
            headline_task: HEADLINE.into(),
            final_rates,
            steps_to_0_6: art.steps_to(HEADLINE, 0.6),
            wall_clock_secs: art.wall_clock_secs,
            checkpoints: art.checkpoints.clone(),
            config: art.config.clone(),
        }
    }
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Mean and sample standard deviation across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub step: u64,
    pub task: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn aggregate(rows: &[CurveRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(&str, u64, &str), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry((&r.method, r.step, &r.task)).or_default().push(r.success_rate);
    }
    groups
        .into_iter()
        .map(|((method, step, task), xs)| {
            let (mean, std) = mean_std(&xs);
            AggregateRow { method: method.into(), step, task: task.into(), mean, std, n: xs.len() }
        })
        .collect()
}

/// Mean and sample standard deviation; the deviation of one value is zero.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Long-format row for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TidyRow {
    pub method: String,
    pub seed: u64,
    pub step: u64,
    pub task: String,
    pub success: f64,
}

/// Gathers `curves.csv` from every run directory, sorted by method, seed
/// and step. Fails listing every directory that lacks the file.
pub fn export_curves(dirs: &[PathBuf]) -> Result<Vec<TidyRow>> {
    if dirs.is_empty() {
        bail!("export-curves needs at least one run directory");
    }
    let missing: Vec<String> =
        dirs.iter().map(|d| d.join(CURVES_FILE)).filter(|p| !p.is_file()).map(|p| p.display().to_string()).collect();
    if !missing.is_empty() {
        bail!("missing curve files: {}", missing.join(", "));
    }
    let mut out = Vec::new();
    for d in dirs {
        for r in read_curves(&d.join(CURVES_FILE))? {
            if !(0.0..=1.0).contains(&r.success_rate) {
                bail!("{}: success rate {} outside [0, 1]", d.display(), r.success_rate);
            }
            out.push(TidyRow { method: r.method, seed: r.seed, step: r.step, task: r.task, success: r.success_rate });
        }
    }
    // Stable: tasks keep their evaluation order within a step.
    out.sort_by(|a, b| (&a.method, a.seed, a.step).cmp(&(&b.method, b.seed, b.step)));
    Ok(out)
}
