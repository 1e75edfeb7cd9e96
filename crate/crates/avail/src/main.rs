use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use avail::checks;
use avail::config::load_config;
use avail::graphfile::save_graph;
use avail::report;
use avail::run;
use avail_core::env::TetherValve;
use avail_core::orchestrator::{method_graph, MethodKind};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "avail", version, about = "Reset-free multi-task RL from milestone examples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate milestone examples for the configured method and write them to a file.
    GenMilestones {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one run per configured seed, or continue an interrupted run.
    Train {
        #[arg(long, required_unless_present = "resume")]
        config: Option<PathBuf>,
        /// Run directory to continue from its last checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many environment steps (the run stays resumable).
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Evaluate a checkpoint's policies.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
    },
    /// Merge run directories into one long-format CSV.
    ExportCurves {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the property checks.
    Selftest {
        /// Skip the slower checks (task model, classifier, determinism).
        #[arg(long)]
        quick: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenMilestones { config, out } => {
            let cfg = load_config(&config)?;
            let method = cfg.train.method;
            if method == MethodKind::SacSparse {
                bail!("sac_sparse trains without milestones");
            }
            let graph = method_graph(method, &TetherValve::new(cfg.train.env), cfg.train.examples_per_task, cfg.seeds[0])?;
            save_graph(&graph, &out)?;
            println!("wrote {} milestones ({} examples each) to {}", graph.len(), cfg.train.examples_per_task, out.display());
        }
        Command::Train { config, resume: Some(dir), stop_after } => {
            if let Some(path) = config {
                let cfg = load_config(&path)?;
                let saved = run::load_trainer(&dir)?.config;
                if saved != cfg.train {
                    bail!("{} does not match the configuration stored in {}", path.display(), dir.display());
                }
            }
            let out = run::resume(&dir, stop_after)?;
            println!("{} at step {}", out.dir.display(), out.artifacts.rows.last().map_or(0, |r| r.step));
        }
        Command::Train { config, resume: None, stop_after } => {
            let cfg = load_config(&config.context("--config is required")?)?;
            let (outcomes, aggregate) = run::run_experiment(&cfg, stop_after)?;
            for o in &outcomes {
                let rate = o.artifacts.final_rate(report::HEADLINE).unwrap_or(f64::NAN);
                println!("{}: final {} {rate:.3}", o.dir.display(), report::HEADLINE);
            }
            println!("aggregate: {}", aggregate.display());
        }
        Command::Eval { checkpoint, episodes } => {
            let mut t = run::load_trainer(&checkpoint)?;
            if episodes == 0 {
                bail!("--episodes must be at least 1");
            }
            t.config.eval_episodes = episodes;
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.write_record(["step", "task", "success_rate"])?;
            for r in t.evaluate_now()? {
                w.write_record([r.step.to_string(), r.task, r.success_rate.to_string()])?;
            }
            w.flush()?;
        }
        Command::ExportCurves { dirs, out } => {
            let rows = report::export_curves(&dirs)?;
            match out {
                Some(path) => report::write_csv(&path, &rows)?,
                None => {
                    let mut w = csv::Writer::from_writer(std::io::stdout());
                    for r in &rows {
                        w.serialize(r)?;
                    }
                    w.flush()?;
                }
            }
        }
        Command::Selftest { quick } => {
            let mut results = vec![checks::gradient_correctness()?, checks::environment_invariants(1_000_000)?, checks::oracle_equivalence()?];
            if !quick {
                results.push(checks::task_model_fidelity()?);
                results.push(checks::classifier_learning()?);
            }
            results.push(checks::sac_sanity()?);
            if !quick {
                let work = std::env::temp_dir().join(format!("avail-selftest-{}", std::process::id()));
                let det = checks::determinism(&work);
                let _ = std::fs::remove_dir_all(&work);
                results.push(det?);
            }
            for c in &results {
                println!("{c}");
            }
            if results.iter().any(|c| !c.passed) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
