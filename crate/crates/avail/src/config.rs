//! Experiment configuration: a TOML file whose top level holds the run
//! list (`seeds`, `graph`, `output_dir`) next to every training knob, with
//! `AVAIL_`-prefixed environment variables layered on top.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use avail_core::orchestrator::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Prefix of environment overrides. Nested keys join with a double
/// underscore: `AVAIL_SAC__LR=1e-3` sets `sac.lr`.
pub const ENV_PREFIX: &str = "AVAIL_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// One run per seed.
    pub seeds: Vec<u64>,
    /// Milestone file for AVAIL; generated from the first seed when absent.
    pub graph: Option<PathBuf>,
    /// Parent of the per-run directories and the aggregate CSV.
    pub output_dir: PathBuf,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2], graph: None, output_dir: PathBuf::from("runs"), train: TrainConfig::default() }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must list at least one seed");
        }
        self.train.validate().context("invalid training config")?;
        Ok(())
    }

    /// Parses TOML text, filling defaults and rejecting unknown keys.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: Table = text.parse().context("config is not valid TOML")?;
        Self::from_table(table)
    }

    pub fn from_table(mut table: Table) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        if let Some(v) = table.remove("seeds") {
            cfg.seeds = v.try_into().context("`seeds` must be a list of non-negative integers")?;
        }
        if let Some(v) = table.remove("graph") {
            cfg.graph = Some(v.try_into().context("`graph` must be a path")?);
        }
        if let Some(v) = table.remove("output_dir") {
            cfg.output_dir = v.try_into().context("`output_dir` must be a path")?;
        }
        cfg.train = TrainConfig::deserialize(Value::Table(table)).map_err(|e| anyhow::anyhow!("{}", e.message().trim()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_table(&self) -> Result<Table> {
        let Value::Table(mut table) = Value::try_from(&self.train)? else {
            bail!("training config did not serialize to a table");
        };
        table.insert("seeds".into(), Value::try_from(&self.seeds)?);
        if let Some(g) = &self.graph {
            table.insert("graph".into(), Value::try_from(g)?);
        }
        table.insert("output_dir".into(), Value::try_from(&self.output_dir)?);
        Ok(table)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(&self.to_table()?)?)
    }
}

/// Reads `path`, applies environment overrides, validates.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut table: Table = text.parse().with_context(|| format!("{} is not valid TOML", path.display()))?;
    apply_overrides(&mut table, std::env::vars())?;
    ExperimentConfig::from_table(table).with_context(|| format!("in config {}", path.display()))
}

pub fn save_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    std::fs::write(path, cfg.to_toml()?).with_context(|| format!("writing config {}", path.display()))
}

/// Applies every `AVAIL_*` variable in `vars` to `table`. Values are read
/// as TOML (`3`, `1e-3`, `true`, `[1, 2]`); anything else is a string.
pub fn apply_overrides<I>(table: &mut Table, vars: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    for (name, raw) in vars {
        let Some(key) = name.strip_prefix(ENV_PREFIX) else { continue };
        let path: Vec<String> = key.split("__").map(str::to_lowercase).collect();
        if path.iter().any(String::is_empty) {
            bail!("malformed override variable `{name}`");
        }
        let (leaf, parents) = path.split_last().expect("split yields at least one piece");
        let mut node = &mut *table;
        for p in parents {
            let entry = node.entry(p.clone()).or_insert_with(|| Value::Table(Table::new()));
            node = match entry {
                Value::Table(t) => t,
                _ => bail!("override `{name}` descends into `{p}`, which is not a section"),
            };
        }
        node.insert(leaf.clone(), parse_value(&raw));
    }
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Dotted names of every key in a table, sorted.
pub fn key_paths(table: &Table) -> Vec<String> {
    fn walk(prefix: &str, t: &Table, out: &mut Vec<String>) {
        for (k, v) in t {
            let name = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                Value::Table(inner) => walk(&name, inner, out),
                _ => out.push(name),
            }
        }
    }
    let mut out = Vec::new();
    walk("", table, &mut out);
    out.sort();
    out
}
