//! Batch front-end for `rrqss`: configuration, sweeps, reports.

pub mod check;
pub mod config;
pub mod output;
pub mod sweep;
