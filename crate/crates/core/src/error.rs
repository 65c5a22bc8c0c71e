use thiserror::Error;

use crate::audit::AuditError;
use crate::backends::BackendError;
use crate::corpus::CorpusError;
use crate::embed::EmbedError;
use crate::metrics::MetricError;
use crate::probe::ProbeError;
use crate::simulate::SimulationError;

/// Top-level error for callers that drive several modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
