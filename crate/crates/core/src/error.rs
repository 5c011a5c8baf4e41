use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unknown outcome label `{label}` in row {row}")]
    UnknownOutcome { label: String, row: usize },
    #[error("negative count {value} in row {row}")]
    NegativeCount { value: f64, row: usize },
    #[error("non-integer count {value} in row {row}")]
    NonIntegerCount { value: f64, row: usize },
    #[error("non-numeric value `{value}` in column `{column}`, row {row}")]
    NonNumeric {
        column: String,
        value: String,
        row: usize,
    },
    #[error("non-binary value {value} in flag column `{column}`")]
    NonBinaryFlag { column: String, value: f64 },
    #[error("spec error (line {line}): {message}")]
    SpecParse { line: usize, message: String },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("model has no terms")]
    EmptyModel,
    #[error("no observations to fit")]
    EmptyData,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("objective is not finite: {0}")]
    NonFinite(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("variable `{0}` is not part of the fitted model")]
    VariableNotInModel(String),
    #[error("variable `{variable}` is {problem}")]
    VariableKind { variable: String, problem: String },
    #[error("too few simulation draws: {0} (minimum 25)")]
    TooFewDraws(usize),
    #[error("fit did not converge: {0}")]
    NotConverged(String),
    #[error("{failed} of {total} Monte-Carlo replicates failed (limit 20%)")]
    ReplicateFailures { failed: usize, total: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
