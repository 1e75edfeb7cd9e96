//! Reset-free multi-task reinforcement learning from milestone examples.
//!
//! The crate is `no_std` (it needs `alloc`) and carries every algorithmic
//! piece of the system: a small dense-network substrate with hand-written
//! backpropagation, the `TetherValve` manipulation simulator, milestone
//! graphs, success-classifier rewards, task schedulers, a soft actor-critic
//! learner, and the training loop with its baselines. File formats, the
//! command line and wall-clock concerns live in the `avail` companion crate.
//!
//! Everything here is a pure function of explicit seeds.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod env;
pub mod error;
pub mod linalg;
pub mod milestones;
pub mod nn;
pub mod orchestrator;
pub mod rewards;
pub mod rl;
pub mod rng;
pub mod taskgraph;

pub use error::{Error, Result};
