//! Per-task soft actor-critic learners and their replay buffers.

mod buffer;
mod sac;

pub use buffer::{Batch, ReplayBuffer, Transition, DEFAULT_CAPACITY};
pub use sac::{critic_input, SacAgent, SacConfig, UpdateStats};

#[cfg(test)]
mod tests;
