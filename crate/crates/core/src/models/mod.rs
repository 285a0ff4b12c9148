//! Learned DB models: MDN for AQP, masked autoregressive network for
//! selectivity estimation, residual classifier for tabular classification.
//!
//! All three expose the same training surface (a loss graph plus input
//! binding) so the unlearning methods apply uniformly.

pub mod checkpoint;
mod classifier;
mod darn;
mod gauss;
mod mdn;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader, Role};
pub use classifier::{
    accuracy, ensure_multiclass, per_example_signals, ClassifierConfig, ClassifierModel,
    RowSignals,
};
pub use darn::{DarnConfig, DarnModel, Discretizer};
pub use gauss::{normal_cdf, normal_pdf, truncated_mass, TruncatedMoments};
pub use mdn::{MdnConfig, MdnModel, MixtureOutput, SigmaMode};

use crate::autodiff::{Graph, GraphError, Matrix, OptimError};
use crate::data::{DataError, EncodedDataset};
use crate::query::QueryError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("empty row set")]
    EmptyRows,
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("{0}")]
    Invalid(String),
    #[error("checkpoint io: {0}")]
    CheckpointIo(String),
    #[error("enumeration domain too large: {0} cells")]
    DomainTooLarge(u64),
}

/// Uniform training/unlearning surface over the three model families.
///
/// A model owns its architecture (graphs), its flat parameter vector, and
/// the column bindings it was built against; the generic SGD loop and every
/// unlearning method only go through this trait.
pub trait GradientModel: Clone + Send {
    fn family(&self) -> &'static str;

    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut Vec<f64>;

    fn role(&self) -> Role;
    fn set_role(&mut self, role: Role);
    fn seed(&self) -> u64;

    /// Same architecture, freshly initialized weights.
    fn reinit(&self, seed: u64) -> Self;

    /// Scalar task-loss graph (mean over the bound batch).
    fn loss_graph(&self) -> &Graph;
    fn loss_inputs(&self, data: &EncodedDataset, rows: &[usize]) -> Result<Vec<Matrix>, ModelError>;

    /// Scalar teacher-student distance graph (mean over the bound batch).
    fn scrub_graph(&self) -> &Graph;
    fn scrub_inputs(
        &self,
        teacher: &Self,
        data: &EncodedDataset,
        rows: &[usize],
    ) -> Result<Vec<Matrix>, ModelError>;

    /// Per-row model likelihood (mixture density, joint probability, or
    /// true-label probability depending on the family).
    fn row_likelihood(&self, data: &EncodedDataset, rows: &[usize]) -> Result<Vec<f64>, ModelError>;
}

/// Mean loss of a model over a row set (no gradient).
pub fn mean_loss<M: GradientModel>(
    model: &M,
    data: &EncodedDataset,
    rows: &[usize],
) -> Result<f64, ModelError> {
    if rows.is_empty() {
        return Err(ModelError::EmptyRows);
    }
    let inputs = model.loss_inputs(data, rows)?;
    let eval = model.loss_graph().forward(&inputs, model.params())?;
    Ok(eval.loss())
}

/// Mean teacher-student distance over a row set (no gradient).
pub fn mean_distance<M: GradientModel>(
    student: &M,
    teacher: &M,
    data: &EncodedDataset,
    rows: &[usize],
) -> Result<f64, ModelError> {
    if rows.is_empty() {
        return Err(ModelError::EmptyRows);
    }
    let inputs = student.scrub_inputs(teacher, data, rows)?;
    let eval = student.scrub_graph().forward(&inputs, student.params())?;
    Ok(eval.loss())
}
