use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("empty class: mask selects no rows")]
    EmptyClass,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("evaluation produced a non-finite value at coordinate {coordinate}")]
    Evaluation { coordinate: usize },

    #[error("insufficient negatives: need at least 2 entries, got {0}")]
    InsufficientNegatives(usize),

    #[error("empty batch: no labeled rows")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("invalid camera: {0}")]
    Camera(String),

    #[error("invalid class catalog: {0}")]
    Catalog(String),

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("pairing error: {points} points vs {labels} labels")]
    Pairing { points: usize, labels: usize },

    #[error("unsupported {container} version {found} (expected {expected})")]
    UnsupportedVersion {
        container: &'static str,
        found: u16,
        expected: u16,
    },

    #[error("corrupt {container} section '{section}': {reason}")]
    Corruption {
        container: &'static str,
        section: &'static str,
        reason: String,
    },

    #[error("non-finite value detected in {0}")]
    NumericFailure(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
