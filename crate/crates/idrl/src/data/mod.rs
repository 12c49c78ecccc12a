//! Replay records, the expert trajectory format, and the conversion from
//! delayed trajectories to augmented training records.

mod expert;
mod records;
mod replay;

pub use expert::{
    load_expert, save_expert, summary_csv, ExpertDataset, ExpertHeader, ExpertTrajectory,
};
pub use records::{augment_expert, records_from_trace, RewardFn, TransitionRecord};
pub use replay::ReplayBuffer;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {found:?}, expected \"IDRLEXP1\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported expert file version {0}")]
    BadVersion(u32),
    #[error("expert file truncated while reading {context}")]
    Truncated { context: String },
    #[error("{field} mismatch: dataset has {got}, expected {expected}")]
    DimMismatch {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("dataset delay {dataset} does not match configured delay {config}")]
    DeltaMismatch { dataset: usize, config: usize },
    #[error("dataset env id {dataset:?} does not match configured env {config:?}")]
    EnvMismatch { dataset: String, config: String },
    #[error("dataset contains no trajectories")]
    Empty,
    #[error("invalid trajectory: {0}")]
    Invalid(String),
}
