//! File formats, configuration, pipeline orchestration and the command-line
//! front end for `microforge-core`.
//!
//! Images are 8-bit greyscale PNG or binary PGM. Patch sets and checkpoints
//! use small little-endian container formats (`MGPT`, `MGCK`). Tables are
//! CSV and reports JSON.

pub mod config;
pub mod io;
pub mod parallel;
pub mod pipeline;
pub mod tables;

pub use config::{ConfigError, ConfigMap, PipelineConfig};
pub use pipeline::{ablation_compare, run_pipeline, AblationMode, PipelineError, RunOptions, RunReport};
