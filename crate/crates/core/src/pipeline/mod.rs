//! End-to-end orchestration: build, synthetic universes, HTTP service.

mod build;
pub mod service;
mod synth;

use std::path::PathBuf;

use thiserror::Error;

use crate::ingest::IngestError;
use crate::nodestore::StoreError;
use crate::ranker::RankError;
use crate::transform::TransformError;
use crate::treelearn::TreeError;

pub use build::{build, build_with_report, config_hash, BuildConfig, BuildReport, SliceReport};
pub use synth::{generate_synthetic, PlantedPair, SynthSpec, SynthTruth, TRUTH_FILE};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no price files (*.csv) in {0}")]
    EmptyInput(PathBuf),
    #[error("calendar has {days} days; slice width {h} needs at least {}", h + 1)]
    CalendarTooShort { days: usize, h: usize },
    #[error("no slice has at least 2 eligible instruments")]
    NoEligibleSlices,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}
