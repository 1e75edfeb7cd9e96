//! Acceptance suite. Prints one `[PASS]`/`[FAIL]`/`[SKIP]` line per
//! criterion and exits non-zero if any criterion that ran failed.
//!
//! Criteria 7 and 8 train fifteen full runs (five method/scheduler
//! combinations, three seeds, 150k steps each). That takes hours, so they
//! only run when `ACCEPTANCE_FULL=1`. `ACCEPTANCE_CONFIG=path.toml` swaps
//! the default configuration for another one (its `seeds` and
//! `output_dir` are honoured), and the comparison summary with the
//! scheduler-efficiency ratio is written to the output directory.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use avail::checks::{self, Check};
use avail::config::{load_config, ExperimentConfig};
use serde::Serialize;

#[derive(Serialize)]
struct ComparisonSummary<'a> {
    seeds: &'a [u64],
    budget: u64,
    checks: Vec<(String, bool, String)>,
    efficiency: checks::Efficiency,
}

fn full_suite(results: &mut Vec<Check>) -> Result<()> {
    let cfg = match std::env::var_os("ACCEPTANCE_CONFIG") {
        Some(p) => load_config(&PathBuf::from(p))?,
        None => ExperimentConfig { output_dir: PathBuf::from("acceptance-runs"), ..Default::default() },
    };
    let t = Instant::now();
    let cmp = checks::run_comparison(&cfg)?;
    let secs = t.elapsed().as_secs_f64();
    let mut ran = checks::end_to_end(&cmp, secs)?;
    ran.push(checks::scheduler_efficiency(&cmp, secs));
    let summary = ComparisonSummary {
        seeds: &cfg.seeds,
        budget: cfg.train.budget,
        checks: ran.iter().map(|c| (c.id.to_string(), c.passed, c.detail.clone())).collect(),
        efficiency: checks::efficiency(&cmp),
    };
    let path = cfg.output_dir.join("comparison-summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?)?;
    println!("comparison summary: {}", path.display());
    results.extend(ran);
    Ok(())
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    let mut errors = Vec::new();
    let mut record = |r: Result<Check>| match r {
        Ok(c) => {
            println!("{c}");
            results.push(c);
        }
        Err(e) => errors.push(format!("{e:#}")),
    };
    record(checks::gradient_correctness());
    record(checks::environment_invariants(1_000_000));
    record(checks::oracle_equivalence());
    record(checks::task_model_fidelity());
    record(checks::classifier_learning());
    record(checks::sac_sanity());
    let work = tempfile::tempdir().expect("temporary directory");
    record(checks::determinism(work.path()));

    if std::env::var("ACCEPTANCE_FULL").is_ok_and(|v| v == "1") {
        let before = results.len();
        if let Err(e) = full_suite(&mut results) {
            errors.push(format!("end-to-end comparison: {e:#}"));
        }
        for c in &results[before..] {
            println!("{c}");
        }
    } else {
        for (id, name) in [("7a", "AVAIL pickup success"), ("7b", "method ordering"), ("7c", "oracle vs learned scheduler"), ("8", "scheduler efficiency")] {
            println!("[SKIP] {id} {name}: needs 15 runs of 150k steps; set ACCEPTANCE_FULL=1");
        }
    }

    for e in &errors {
        println!("[ERROR] {e}");
    }
    let failed = results.iter().filter(|c| !c.passed).count();
    println!("acceptance: {} passed, {failed} failed, {} errors", results.len() - failed, errors.len());
    if failed > 0 || !errors.is_empty() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
