//! Dataset loading, fixed-domain encoding, delete partitions, and table
//! meta-data.

mod delete;
mod encode;
mod schema;
pub mod synthetic;

pub use delete::{
    apply_delete, insert_rows, split_train_val_test, update_metadata, DatasetSplits, DeleteMode,
    DeletePredicate, DeleteSpec, FrequencyTable, SplitState,
};
pub use encode::{freeze_encoding, EncodedColumn, EncodedDataset, EncodedValue};
pub use schema::{
    infer_schema, load_csv, numerical_domain, write_csv, Cell, ColumnKind, ColumnSchema, Domain,
    Table, SMALL_DOMAIN,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {0}: {1}")]
    Io(String, String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: expected {expected} fields, got {got}")]
    RaggedRow { line: usize, expected: usize, got: usize },
    #[error("no rows")]
    NoRows,
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("column '{column}' expected {expected}")]
    TypeMismatch { column: String, expected: &'static str },
    #[error("value '{value}' outside the frozen domain of column '{column}'")]
    OutOfDomain { column: String, value: String },
    #[error("invalid range: lo {lo} > hi {hi}")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("selective delete requires modulus > 0 and residues < modulus")]
    InvalidSelective,
    #[error("split fractions must sum to 1")]
    BadFractions,
    #[error("table too small to split: {0} rows")]
    TooFewRows(usize),
}
