use thiserror::Error;

use crate::analysis::memory::ExtractionError;
use crate::backend::BackendError;
use crate::corpus::CorpusError;
use crate::evaluator::SweepError;
use crate::report::ReportError;
use crate::taskgen::TaskError;

/// Top-level error for the measurement pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code: 1 configuration, 2 backend, 3 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Task(TaskError::GridTooFine { .. }) => 1,
            Error::Backend(_) => 2,
            Error::Sweep(SweepError::Backend(_)) => 2,
            Error::Sweep(SweepError::ContextTooShort { .. }) => 1,
            Error::Sweep(SweepError::Task(TaskError::GridTooFine { .. })) => 1,
            Error::Corpus(CorpusError::Backend { .. }) => 2,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
