//! Synthetic data stages with pluggable model backends, and the benchmark
//! harness that scores model outputs with external or stub judges.

pub mod backend;
pub mod bench;
pub mod config;
pub mod error;
pub mod image_io;
pub mod job;
pub mod keywords;
pub mod manifest;
pub mod stages;
pub mod validate;

pub use config::{CategoryWeights, PipelineConfig, StageCounts};
pub use error::{PipelineError, Result};
pub use job::{RunControl, StageSummary};
pub use manifest::Stage;
pub use stages::Pipeline;
pub use validate::{validate_manifest, ViolationKind, ViolationReport};
