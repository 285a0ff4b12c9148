//! Aggregate/delete query representation, parsing, exact evaluation, and
//! workload generation.

mod ast;
mod generate;
mod oracle;
mod parser;

pub use ast::{render, AggKind, Filter, FilterOp, QuerySpec};
pub use generate::{gen_workload_aqp, gen_workload_se, Workload, WorkloadLabel};
pub use oracle::{evaluate_exact, matching_rows, AggValue};
pub use parser::parse;

use crate::data::DataError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("type mismatch on column '{column}': {message}")]
    TypeMismatch { column: String, message: String },
    #[error("invalid range: {lo} > {hi}")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("not an aggregate query")]
    NotAnAggregate,
    #[error("no rows to anchor {0} queries on")]
    EmptyAnchorSet(&'static str),
    #[error("workload generation stalled for label {0}")]
    GenerationStalled(&'static str),
    #[error(transparent)]
    Data(#[from] DataError),
}
