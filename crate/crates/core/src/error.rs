use std::io;

use thiserror::Error;

use crate::model::{ServerId, WorkloadId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("workload {id}: request and file size must be at least one byte (rs={request_size}, fs={file_size})")]
    NonPositiveSize {
        id: WorkloadId,
        request_size: u64,
        file_size: u64,
    },

    #[error("workload {id}: request size {request_size} exceeds file size {file_size}")]
    RequestLargerThanFile {
        id: WorkloadId,
        request_size: u64,
        file_size: u64,
    },

    #[error("workload {id}: (rs={request_size}, fs={file_size}) is not on the profiling grid and snapping is disabled")]
    OffGridValue {
        id: WorkloadId,
        request_size: u64,
        file_size: u64,
    },

    #[error("running time must be strictly positive, got {0}")]
    NonPositiveRuntime(f64),

    #[error("overhead must be non-negative, got {0}")]
    NegativeOverhead(f64),

    #[error("degradation {0} outside [0, 1)")]
    DegradationOutOfRange(f64),

    #[error("observed degradation point must be positive, got {0} bytes")]
    NonPositiveObservation(f64),

    #[error("server {server}: {reason}")]
    InvalidProfile { server: ServerId, reason: String },

    #[error("workload {0} cannot degrade itself")]
    SelfDegradation(WorkloadId),

    #[error("workload {0} is already resident or queued")]
    DuplicateWorkload(WorkloadId),

    #[error("workload {0} is not resident on any server")]
    UnknownWorkload(WorkloadId),

    #[error("exhaustive search over {arrivals} arrivals exceeds the limit of {limit}")]
    SearchSpaceTooLarge { arrivals: usize, limit: usize },

    #[error("malformed degradation table: {0}")]
    MalformedTable(String),

    #[error("degradation table grid mismatch: {0}")]
    GridMismatch(String),

    #[error("initial state of server {server} is infeasible: {reason}")]
    InconsistentInitialState { server: ServerId, reason: String },

    #[error("unknown sequence {0:?}")]
    UnknownSequence(String),

    #[error("invalid size {0:?}")]
    InvalidSize(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the request was well-formed but too large or infeasible to serve,
    /// as opposed to invalid input.
    pub fn is_capacity_error(&self) -> bool {
        matches!(self, Error::SearchSpaceTooLarge { .. })
    }
}
