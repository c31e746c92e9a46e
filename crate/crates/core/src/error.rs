use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {shape:?} for {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("numeric instability in {op}: non-finite value produced")]
    NumericInstability { op: &'static str },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this tape")]
    TapeConsumed,

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("optimizer state does not match parameter `{0}`")]
    OptimizerMismatch(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("parameter structure mismatch: {0}")]
    StructureMismatch(String),

    #[error("total aggregation weight must be positive")]
    ZeroWeight,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty subset: {0}")]
    EmptySubset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("cannot parse `{value}` at row {row}, column `{column}`")]
    ParseCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("empty file: {0}")]
    EmptyFile(PathBuf),

    #[error("need at least {needed} rows, got {rows}")]
    TooFewRows { rows: usize, needed: usize },

    #[error("strategy `{strategy}` cannot be used with this head: {reason}")]
    StrategyMismatch {
        strategy: &'static str,
        reason: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
