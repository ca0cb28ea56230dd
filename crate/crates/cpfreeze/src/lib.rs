//! Experiment driver for the `cpfreeze` binary: online attack runs,
//! defenses, timing, file formats and charts on top of `cpfreeze-core`.

pub mod config;
pub mod container;
pub mod defense;
pub mod experiment;
pub mod report;
pub mod timing;
