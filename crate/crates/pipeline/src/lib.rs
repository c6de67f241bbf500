//! Data plumbing and experiment orchestration around `nominal-core`.
//!
//! A run reads telemetry and a failure log, builds the train / validation /
//! test splits, fits one model per health index, scores the test spans,
//! raises and pools alarms, evaluates them against the failures and writes
//! every intermediate into a run directory described by `manifest.json`.

pub mod archive;
pub mod config;
pub mod emit;
pub mod fit;
pub mod ingest;
pub mod run;
pub mod scale;
pub mod split;
pub mod synthetic;

pub use config::{Overrides, PipelineConfig};
pub use run::{run_experiment, Inputs, RunSummary};
