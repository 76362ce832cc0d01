use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{0}")]
    DegenerateInput(String),

    #[error("zero-norm vector{}", .id.map(|i| format!(" in record {i}")).unwrap_or_default())]
    ZeroNorm { id: Option<u64> },

    #[error("input row {row} is not unit-norm (norm {norm})")]
    NotUnitNorm { row: usize, norm: f64 },

    #[error("invalid probability {0}: must satisfy 0 <= p < 1")]
    InvalidProbability(f64),

    #[error("finite-difference oracle failed at coordinate {coordinate}: f is not finite")]
    OracleFailure { coordinate: usize },

    #[error("numeric fault in {stage}{}", .layer.map(|l| format!(" (layer {l})")).unwrap_or_default())]
    NumericFault {
        stage: &'static str,
        layer: Option<usize>,
    },

    #[error("stale trace: {0}")]
    StaleTrace(String),

    #[error("target index {index} out of range for {classes} classes")]
    TargetOutOfRange { index: usize, classes: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("degenerate batch: size {0}, need at least 2")]
    DegenerateBatch(usize),

    #[error("schedule exhausted: step {step} > total {total}")]
    ScheduleExhausted { step: u64, total: u64 },

    #[error("corrupt cache at byte {offset}: {reason}")]
    CorruptCache { offset: u64, reason: String },

    #[error("corrupt checkpoint at byte {offset}: {reason}")]
    CorruptCheckpoint { offset: u64, reason: String },

    #[error("heterogeneous records: {0}")]
    Heterogeneous(String),

    #[error("duplicate record id {0}")]
    DuplicateId(u64),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("unknown ablation axis {0:?}")]
    UnknownAxis(String),

    #[error("empty data")]
    EmptyData,

    #[error("batch size {batch} exceeds record count {records}")]
    BatchTooLarge { batch: usize, records: usize },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numeric blow-up rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NumericFault { .. } | Error::NonFiniteLoss { .. } | Error::OracleFailure { .. }
        )
    }
}
