use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Observation, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::milestones::TaskId;

pub const DEFAULT_CAPACITY: usize = 200_000;

/// One environment step. Rewards are not stored: they are recomputed from
/// the live classifier whenever the transition is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Observation,
    pub action: [f64; ACTION_DIM],
    pub next_obs: Observation,
    pub done: bool,
    pub task: TaskId,
}

/// A sampled minibatch with rewards attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Matrix,
    pub actions: Matrix,
    pub next_obs: Matrix,
    pub rewards: Vec<f64>,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Stacks transitions and scores each `next_obs` with `reward_fn`.
    pub fn from_transitions<F>(items: &[Transition], mut reward_fn: F) -> Result<Self>
    where
        F: FnMut(&Matrix) -> Result<Vec<f64>>,
    {
        let n = items.len();
        let mut obs = Matrix::zeros(n, OBS_DIM);
        let mut actions = Matrix::zeros(n, ACTION_DIM);
        let mut next_obs = Matrix::zeros(n, OBS_DIM);
        for (i, t) in items.iter().enumerate() {
            obs.row_mut(i).copy_from_slice(&t.obs);
            actions.row_mut(i).copy_from_slice(&t.action);
            next_obs.row_mut(i).copy_from_slice(&t.next_obs);
        }
        let rewards = reward_fn(&next_obs)?;
        if rewards.len() != n {
            return Err(Error::Shape(alloc::format!("reward function returned {} values for {n} rows", rewards.len())));
        }
        Ok(Self { obs, actions, next_obs, rewards, done: items.iter().map(|t| t.done).collect() })
    }
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Validation("replay capacity must be positive".into()));
        }
        Ok(Self { capacity, items: Vec::new(), cursor: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Slot of the `i`-th oldest stored transition.
    fn slot(&self, i: usize) -> usize {
        if self.items.len() < self.capacity {
            i
        } else {
            (self.cursor + i) % self.capacity
        }
    }

    /// The `i`-th oldest stored transition.
    pub fn get(&self, i: usize) -> Option<&Transition> {
        (i < self.items.len()).then(|| &self.items[self.slot(i)])
    }

    /// Transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        (0..self.items.len()).map(|i| &self.items[self.slot(i)])
    }

    /// `n` chronological indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.len() < n || self.items.is_empty() {
            return Err(Error::Underflow { requested: n, available: self.items.len() });
        }
        Ok((0..n).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Transition>> {
        Ok(self.gather(&self.sample_indices(n, rng)?))
    }

    pub fn gather(&self, indices: &[usize]) -> Vec<Transition> {
        indices.iter().map(|&i| self.items[self.slot(i)]).collect()
    }

    /// Uniform batch with rewards from the current reward function.
    pub fn sample_batch<R, F>(&self, n: usize, reward_fn: F, rng: &mut R) -> Result<Batch>
    where
        R: Rng + ?Sized,
        F: FnMut(&Matrix) -> Result<Vec<f64>>,
    {
        Batch::from_transitions(&self.sample(n, rng)?, reward_fn)
    }

    /// `n` next-observations drawn uniformly from the `window` most recent transitions.
    pub fn sample_recent_next_obs<R: Rng + ?Sized>(&self, n: usize, window: usize, rng: &mut R) -> Result<Vec<Observation>> {
        let len = self.items.len();
        if len == 0 {
            return Err(Error::Underflow { requested: n, available: 0 });
        }
        let w = window.clamp(1, len);
        Ok((0..n).map(|_| self.items[self.slot(len - w + rng.random_range(0..w))].next_obs).collect())
    }
}
