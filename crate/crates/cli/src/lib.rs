//! Staged benchmark runner: configuration, the resumable pipeline and a
//! synthetic session generator for smoke runs.
//!
//! ```text
//! ingest → series → features → train → forecast → report
//! ```
//!
//! Every stage reads the previous stage's files under the output directory
//! and records its own in `run_meta.json`.

pub mod config;
pub mod pipeline;
pub mod synth;

use evbench::engine::EngineError;
use evbench::evalreport::EvalError;
use evbench::features::FeatureError;
use evbench::ingest::IngestError;
use evbench::timeseries::SeriesError;
use thiserror::Error;

pub use config::{Dataset, RawConfig, RunConfig};
pub use pipeline::{Pipeline, RunMeta, Stage, StageRecord};

fn bullet_list(items: &[String]) -> String {
    items.iter().map(|p| format!("\n  - {}", p)).collect()
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration:{}", bullet_list(.0))]
    Validation(Vec<String>),
    #[error(
        "configuration hash {new} differs from {old} recorded in {dir}; pass --overwrite to replace the existing outputs"
    )]
    ConfigChanged { dir: String, old: String, new: String },
    #[error("stage '{stage}' needs the outputs of stage '{missing}'; run it first with --stage {missing}")]
    MissingStage { stage: Stage, missing: Stage },
    #[error("{0}")]
    Stale(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl PipelineError {
    /// 1 for problems with the configuration, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) | PipelineError::ConfigChanged { .. } => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
