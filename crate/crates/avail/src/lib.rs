//! Files, reports and the command line around `avail-core`.
//!
//! Configuration is TOML ([`config`]), networks are stored in a small
//! binary format ([`nnfile`]), milestone graphs in JSON ([`graphfile`]) and
//! learning curves in CSV ([`report`]). [`run`] owns run directories,
//! checkpoints and resume; [`checks`] holds the measured property checks
//! behind `avail selftest` and the acceptance tests.

pub mod checks;
pub mod config;
pub mod graphfile;
pub mod nnfile;
pub mod report;
pub mod run;
