//! Experiment harness around `textsense-core`: configuration, W vs W+T runs,
//! prompt-strategy ablations and report tables.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod report;
