use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("objective must be a single value, got shape {0:?}")]
    NonScalarObjective(Vec<usize>),

    #[error("variable {0} is not on this tape")]
    NotOnTape(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("parameter set mismatch: {0}")]
    ParamMismatch(String),

    #[error("matrix is rank deficient (smallest/largest singular value ratio {ratio:e})")]
    RankDeficient { ratio: f64 },

    #[error("head column {0} has zero norm")]
    ZeroColumn(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("cannot sample from an empty pool")]
    EmptyPool,

    #[error("audit failed: {0}")]
    Audit(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("{method} run holding out {domain} with seed {seed} failed: {source}")]
    Run {
        method: String,
        domain: String,
        seed: u64,
        source: Box<Error>,
    },
}

impl Error {
    /// The innermost error, looking through run context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Run { source, .. } => source.root(),
            e => e,
        }
    }
}
