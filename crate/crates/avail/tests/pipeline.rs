use std::fs;
use std::path::{Path, PathBuf};

use avail::checks::micro_config;
use avail::config::{apply_overrides, key_paths, load_config, ExperimentConfig};
use avail::graphfile::{load_graph, save_graph};
use avail::report::{self, read_curves, CurveRow, Summary};
use avail::{nnfile, run};
use avail_core::env::TetherValve;
use avail_core::milestones::MilestoneGraph;
use avail_core::orchestrator::{MethodKind, RewardSource, Schedule, CHAIN};
use toml::{Table, Value};

fn tiny(out: &Path) -> ExperimentConfig {
    let mut cfg = micro_config(out);
    cfg.train.budget = 1000;
    cfg.train.eval_episodes = 2;
    cfg
}

fn lookup<'a>(t: &'a Table, dotted: &str) -> &'a Value {
    let mut parts = dotted.split('.').peekable();
    let mut node = t;
    loop {
        let k = parts.next().unwrap();
        let v = &node[k];
        if parts.peek().is_none() {
            return v;
        }
        node = v.as_table().unwrap();
    }
}

#[test]
fn every_config_key_is_echoed_and_overridable() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cfg.seeds = vec![3, 4];
    let (outcomes, _) = run::run_experiment(&cfg, Some(500)).unwrap();

    let defaults = ExperimentConfig::default().to_table().unwrap();
    let keys = key_paths(&defaults);
    assert!(keys.len() > 40, "only {} keys", keys.len());
    for (o, seed) in outcomes.iter().zip([3, 4]) {
        let echo_text = fs::read_to_string(o.dir.join(run::CONFIG_FILE)).unwrap();
        let echo: Table = echo_text.parse().unwrap();
        assert_eq!(key_paths(&echo), keys, "echo is missing or adds keys");
        let parsed = ExperimentConfig::from_toml(&echo_text).unwrap();
        assert_eq!(parsed.seeds, vec![seed]);
        assert_eq!(parsed.train, cfg.train);
    }

    // Re-stating any key through its environment variable is accepted and
    // changes nothing.
    for k in &keys {
        let var = format!("AVAIL_{}", k.replace('.', "__").to_uppercase());
        let mut t = defaults.clone();
        apply_overrides(&mut t, [(var.clone(), lookup(&defaults, k).to_string())]).unwrap();
        let back = ExperimentConfig::from_table(t).unwrap_or_else(|e| panic!("{var}: {e:#}"));
        assert_eq!(back, ExperimentConfig::default(), "{var}");
    }
}

#[test]
fn overrides_from_the_environment_reach_the_loaded_config() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("c.toml");
    fs::write(&path, "seeds = [1]\n[sac]\nlr = 0.001\n").unwrap();
    // Only this test touches these variables.
    std::env::set_var("AVAIL_SAC__GAMMA", "0.9");
    std::env::set_var("AVAIL_METHOD", "forward_backward");
    let cfg = load_config(&path);
    std::env::remove_var("AVAIL_SAC__GAMMA");
    std::env::remove_var("AVAIL_METHOD");
    let cfg = cfg.unwrap();
    assert_eq!(cfg.train.sac.gamma, 0.9);
    assert_eq!(cfg.train.sac.lr, 0.001);
    assert_eq!(cfg.train.method, MethodKind::ForwardBackward);
}

#[test]
fn two_seeds_give_two_runs_and_one_aggregate() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cfg.seeds = vec![0, 1];
    let (outcomes, agg) = run::run_experiment(&cfg, None).unwrap();
    assert_eq!(outcomes.len(), 2);

    let mut entries: Vec<String> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    entries.sort();
    assert_eq!(entries.len(), 3, "{entries:?}");
    assert!(entries[0].starts_with("avail-0-") && entries[1].starts_with("avail-1-"), "{entries:?}");
    assert!(entries[2].starts_with("avail-aggregate-") && entries[2].ends_with(".csv"));
    assert_eq!(agg, tmp.path().join(&entries[2]));

    let mut all = Vec::new();
    for (o, seed) in outcomes.iter().zip([0u64, 1]) {
        let rows = read_curves(&o.dir.join(report::CURVES_FILE)).unwrap();
        let header = fs::read_to_string(o.dir.join(report::CURVES_FILE)).unwrap();
        assert!(header.starts_with("step,task,success_rate,method,seed\n"));
        // Evaluations at 0, 500 and 1000, four rows each (three skills and
        // the chain).
        assert_eq!(rows.len(), 12);
        assert!(rows.iter().all(|r| r.seed == seed && r.method == "avail" && (0.0..=1.0).contains(&r.success_rate)));
        assert_eq!(rows.iter().filter(|r| r.task == CHAIN).map(|r| r.step).collect::<Vec<_>>(), [0, 500, 1000]);

        let summary: Summary = serde_json::from_str(&fs::read_to_string(o.dir.join(report::SUMMARY_FILE)).unwrap()).unwrap();
        assert_eq!((summary.seed, summary.steps, summary.method.as_str()), (seed, 1000, "avail"));
        assert_eq!(summary.final_rates.len(), 4);
        assert_eq!(summary.config, cfg.train);
        all.extend(rows);
    }

    let mut r = csv::Reader::from_path(&agg).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["method", "step", "task", "mean", "std", "n"]);
    let agg_rows: Vec<report::AggregateRow> = r.deserialize().map(Result::unwrap).collect();
    assert_eq!(agg_rows.len(), 12);
    for a in &agg_rows {
        let xs: Vec<f64> = all.iter().filter(|c: &&CurveRow| c.step == a.step && c.task == a.task).map(|c| c.success_rate).collect();
        assert_eq!(a.n, 2);
        assert_eq!((a.mean, a.std), report::mean_std(&xs));
    }
}

#[test]
fn checkpoint_networks_match_the_trainer() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    let (outcomes, _) = run::run_experiment(&cfg, Some(500)).unwrap();
    let dir = &outcomes[0].dir;
    let ckpt = dir.join(run::CHECKPOINT_DIR);
    assert!(!dir.join("checkpoint.tmp").exists());
    let t = run::load_trainer(dir).unwrap();
    assert_eq!(t.step, 500);
    for (i, s) in t.skills.iter().enumerate() {
        let a = ckpt.join("agents").join(format!("{i}-{}", s.name));
        assert_eq!(nnfile::load(&a.join("actor.nn")).unwrap(), s.agent.actor);
        for k in 0..2 {
            assert_eq!(nnfile::load(&a.join(format!("critic{k}.nn"))).unwrap(), s.agent.critics[k]);
            assert_eq!(nnfile::load(&a.join(format!("target{k}.nn"))).unwrap(), s.agent.targets[k]);
        }
        let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("meta.json")).unwrap()).unwrap();
        assert_eq!(meta["updates"], s.agent.updates);
        match &s.reward {
            RewardSource::Classifier(c) => {
                assert_eq!(nnfile::load(&ckpt.join("classifiers").join(format!("{i}.nn"))).unwrap(), c.net)
            }
            other => panic!("avail skill {i} rewarded by {other:?}"),
        }
    }
    let Schedule::Learned { model, .. } = &t.schedule else { panic!("avail uses the learned scheduler") };
    assert_eq!(nnfile::load(&ckpt.join("task_model.nn")).unwrap(), model.net);
}

#[test]
fn resume_continues_where_the_run_stopped() {
    let tmp = tempfile::tempdir().unwrap();
    let whole = run::run_experiment(&tiny(&tmp.path().join("a")), None).unwrap().0.remove(0);
    let part = run::run_experiment(&tiny(&tmp.path().join("b")), Some(500)).unwrap().0.remove(0);
    assert_eq!(read_curves(&part.dir.join(report::CURVES_FILE)).unwrap().len(), 8);
    let resumed = run::resume(&part.dir, None).unwrap();
    assert_eq!(resumed.artifacts.rows, whole.artifacts.rows);
    assert_eq!(
        fs::read(part.dir.join(report::CURVES_FILE)).unwrap(),
        fs::read(whole.dir.join(report::CURVES_FILE)).unwrap()
    );
    // Interrupted between removing the old checkpoint and renaming the new.
    fs::rename(part.dir.join(run::CHECKPOINT_DIR), part.dir.join("checkpoint.tmp")).unwrap();
    assert_eq!(run::load_trainer(&part.dir).unwrap().step, 1000);
    // A finished run has nothing left to do.
    let again = run::resume(&part.dir, None).unwrap();
    assert_eq!(again.artifacts.rows, whole.artifacts.rows);
}

#[test]
fn a_milestone_file_drives_training() {
    let tmp = tempfile::tempdir().unwrap();
    let graph = MilestoneGraph::default_cycle().with_generated_examples(&TetherValve::default(), 100, 77).unwrap();
    let path = tmp.path().join("milestones.json");
    save_graph(&graph, &path).unwrap();
    assert_eq!(load_graph(&path).unwrap(), graph);

    let mut cfg = tiny(tmp.path());
    cfg.graph = Some(path);
    let t = run::new_trainer(&cfg, 0).unwrap();
    for (s, v) in t.skills.iter().zip(graph.vertices()) {
        assert_eq!(s.positives, v.examples);
    }
}

#[test]
fn export_sorts_runs_and_reports_missing_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs: Vec<PathBuf> = Vec::new();
    for method in [MethodKind::SacSparse, MethodKind::Avail, MethodKind::ForwardBackward] {
        let mut cfg = tiny(tmp.path());
        cfg.train.method = method;
        cfg.train.budget = 500;
        cfg.seeds = vec![2, 1, 0];
        dirs.extend(run::run_experiment(&cfg, None).unwrap().0.into_iter().map(|o| o.dir));
    }
    let rows = report::export_curves(&dirs).unwrap();
    let mut groups: Vec<(String, u64)> = rows.iter().map(|r| (r.method.clone(), r.seed)).collect();
    groups.dedup();
    assert_eq!(groups.len(), 9, "{groups:?}");
    let mut sorted = groups.clone();
    sorted.sort();
    assert_eq!(groups, sorted);
    assert!(rows.windows(2).all(|w| (&w[0].method, w[0].seed, w[0].step) <= (&w[1].method, w[1].seed, w[1].step)));

    let missing = [tmp.path().join("nope-1"), tmp.path().join("nope-2")];
    let mut with_missing = dirs.clone();
    with_missing.extend(missing.iter().cloned());
    let err = format!("{:#}", report::export_curves(&with_missing).unwrap_err());
    for m in &missing {
        assert!(err.contains(&m.display().to_string()), "{err}");
    }
}
