use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum Error {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("validation fraction {0} is outside [0, 1)")]
    InvalidValidationFraction(f64),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },
    #[error("{what} {id} is out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        id: usize,
        limit: usize,
    },
    #[error("embeddings changed since the last forward pass (e0 version {e0}, propagated {propagated:?})")]
    StaleEmbeddings { e0: u64, propagated: Option<u64> },
    #[error("invalid layer weights: {0}")]
    InvalidLayerWeights(String),
    #[error("teleport probability {0} must lie strictly between 0 and 1")]
    InvalidTeleport(f64),
    #[error("empty batch")]
    EmptyBatch,
    #[error("propagation operator has no transpose; gradients through it are not implemented")]
    MissingTranspose,
    #[error("non-finite gradient at row {row}, column {col}: {value}")]
    NonFiniteGradient { row: usize, col: usize, value: f64 },
    #[error("training diverged at epoch {epoch} (loss {loss}); best checkpoint from epoch {best_epoch:?} restored")]
    Diverged {
        epoch: usize,
        loss: f64,
        best_epoch: Option<usize>,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
