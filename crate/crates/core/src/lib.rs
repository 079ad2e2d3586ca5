//! Cyclical hyper-parameter schedules for neural-network training.
//!
//! Training starts and ends with "easy" settings (small weight decay, low
//! softmax temperature, tight gradient clipping, large batches, low momentum)
//! and passes through "hard" settings mid-run. [`schedule`] holds the generic
//! cycle, [`controllers`] maps it onto concrete hyper-parameters, and
//! [`harness`] runs seeded experiments with a small dense network from [`nn`]
//! on synthetic data from [`data`].

pub mod cli;
pub mod config;
pub mod controllers;
pub mod data;
pub mod error;
pub mod harness;
pub mod nn;
pub mod schedule;

pub use config::ExperimentConfig;
pub use controllers::{ClipMode, ControllerRanges, ControllerSet};
pub use error::{Error, Result};
pub use harness::{compare, run_experiment, sweep_fc, ComparisonSummary, RunRecord};
pub use schedule::{blend, cycle_coefficient, CycleCoefficient, CyclicalSchedule};
