use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::NumericError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("no interactions found in {0}")]
    EmptyCorpus(PathBuf),
    #[error("item {0} is not a node of the graph")]
    MissingNode(u32),
    #[error("cannot draw negatives for item {anchor}: every other bucket is empty")]
    SamplingImpossible { anchor: u32 },
    #[error("zero-norm embedding for item {anchor}; cosine similarity undefined")]
    ZeroNorm { anchor: u32 },
    #[error("target item {0} is outside the vocabulary")]
    TargetOutOfVocab(u32),
    #[error("target item {0} is listed among the exclusions")]
    TargetExcluded(u32),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
