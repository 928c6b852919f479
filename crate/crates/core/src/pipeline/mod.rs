//! Staged, resumable pipeline: each stage writes its artifacts under the
//! output directory and records them in `manifest.json`.

pub mod config;
pub mod io;
pub mod manifest;
mod stages;

pub use config::{derive_seed, Arm, PipelineConfig, Stage, STAGE_VERSION};
pub use manifest::{Manifest, OutputFile, StageRecord};
pub use stages::{PairStats, Pipeline, ProjectionRecord, StageOutcome, Unit};
