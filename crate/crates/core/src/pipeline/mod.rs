//! End-to-end curation of editing triplets: preliminary file checks, image
//! quality, instruction adherence and aesthetic ranking, applied in that order.

mod config;
mod manifest;
mod stages;

pub use config::{
    AdherenceStageConfig, AestheticConfig, DigestAlgorithm, PipelineConfig, PreliminaryConfig, QualityStageConfig, RankingMode,
    ScoreSource, SharpnessRule, StageToggles,
};
pub use manifest::{load_manifest, manifest_to_string, read_manifest, write_atomic, write_manifest, StageVerdict, TripletRecord};
pub use stages::{
    percentile, run_pipeline, run_stage, DropRecord, PipelineOutcome, PipelineReport, Stage, StageOutcome, StageReport,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
