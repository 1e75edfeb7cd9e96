//! Milestone files: a JSON record with a task table, an edge table and one
//! row-major observation matrix per task.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use avail_core::env::{Observation, OBS_DIM};
use avail_core::milestones::{MilestoneGraph, TaskId, Vertex};
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "avail-milestones";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MilestoneFile {
    pub format: String,
    pub version: u32,
    pub obs_dim: usize,
    pub tasks: Vec<TaskRecord>,
    /// `(from, to)` pairs; must agree with each task's `next`.
    pub edges: Vec<(usize, usize)>,
    pub examples: Vec<ExampleMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub index: usize,
    pub name: String,
    pub next: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleMatrix {
    pub task: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MilestoneFile {
    pub fn from_graph(graph: &MilestoneGraph) -> Self {
        let vs = graph.vertices();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            obs_dim: OBS_DIM,
            tasks: vs.iter().enumerate().map(|(i, v)| TaskRecord { index: i, name: v.name.clone(), next: v.next.0 }).collect(),
            edges: graph.edges().into_iter().map(|(a, b)| (a.0, b.0)).collect(),
            examples: vs
                .iter()
                .enumerate()
                .map(|(i, v)| ExampleMatrix {
                    task: i,
                    rows: v.examples.len(),
                    cols: OBS_DIM,
                    data: v.examples.iter().flatten().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn into_graph(self) -> Result<MilestoneGraph> {
        ensure!(self.format == FORMAT, "not a milestone file (format `{}`)", self.format);
        ensure!(self.version == VERSION, "unsupported milestone file version {}", self.version);
        ensure!(self.obs_dim == OBS_DIM, "observation width {} does not match {OBS_DIM}", self.obs_dim);
        let k = self.tasks.len();
        for (i, t) in self.tasks.iter().enumerate() {
            ensure!(t.index == i, "task table out of order at row {i} (index {})", t.index);
        }
        let mut edges = self.edges.clone();
        edges.sort_unstable();
        let mut expected: Vec<(usize, usize)> = self.tasks.iter().map(|t| (t.index, t.next)).collect();
        expected.sort_unstable();
        ensure!(edges == expected, "edge table disagrees with the tasks' next labels");

        let mut examples: Vec<Option<Vec<Observation>>> = vec![None; k];
        for m in self.examples {
            ensure!(m.task < k, "examples for unknown task {}", m.task);
            ensure!(m.cols == OBS_DIM, "task {} examples have {} columns, expected {OBS_DIM}", m.task, m.cols);
            ensure!(m.data.len() == m.rows * m.cols, "task {} matrix holds {} values, expected {}", m.task, m.data.len(), m.rows * m.cols);
            if examples[m.task].is_some() {
                bail!("task {} has two example matrices", m.task);
            }
            let rows = m.data.chunks_exact(OBS_DIM).map(|c| c.try_into().expect("exact chunk")).collect();
            examples[m.task] = Some(rows);
        }
        let vertices = self
            .tasks
            .into_iter()
            .zip(examples)
            .map(|(t, ex)| Vertex { name: t.name, examples: ex.unwrap_or_default(), next: TaskId(t.next) })
            .collect();
        Ok(MilestoneGraph::from_vertices(vertices)?)
    }
}

pub fn save_graph(graph: &MilestoneGraph, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&MilestoneFile::from_graph(graph))?;
    std::fs::write(path, text).with_context(|| format!("writing milestones {}", path.display()))
}

pub fn load_graph(path: &Path) -> Result<MilestoneGraph> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading milestones {}", path.display()))?;
    let file: MilestoneFile = serde_json::from_str(&text).with_context(|| format!("parsing milestones {}", path.display()))?;
    file.into_graph().with_context(|| format!("in milestones {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use avail_core::env::TetherValve;

    fn graph() -> MilestoneGraph {
        MilestoneGraph::default_cycle().with_generated_examples(&TetherValve::default(), 7, 3).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let g = graph();
        let text = serde_json::to_string(&MilestoneFile::from_graph(&g)).unwrap();
        let back: MilestoneFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_graph().unwrap(), g);
    }

    #[test]
    fn tables_describe_the_graph() {
        let f = MilestoneFile::from_graph(&graph());
        let names: Vec<&str> = f.tasks.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, ["reach", "reposition", "pickup"]);
        assert_eq!(f.edges, vec![(0, 1), (1, 2), (2, 0)]);
        assert!(f.examples.iter().all(|m| m.rows == 7 && m.data.len() == 56));
    }

    #[test]
    fn inconsistent_files_are_rejected() {
        let good = MilestoneFile::from_graph(&graph());
        let mut f = good.clone();
        f.edges[0] = (0, 2);
        assert!(f.into_graph().is_err());
        let mut f = good.clone();
        f.examples[1].data.pop();
        assert!(f.into_graph().is_err());
        let mut f = good.clone();
        f.obs_dim = 9;
        assert!(f.into_graph().is_err());
        let mut f = good;
        f.tasks[2].next = 5;
        f.edges[2] = (2, 5);
        assert!(f.into_graph().is_err());
    }
}
