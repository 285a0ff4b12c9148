//! Config-driven experiment orchestration and result persistence.

mod config;
mod pipeline;
mod record;

pub use config::{
    ConfigError, DatasetSection, DeleteSection, ExperimentConfig, MethodSection, MiaSection, Mode,
    ModelSection, SequentialSection, Task, TrainSection, WorkloadSection,
};
pub use pipeline::{
    emit_plots, load_dataset, run, run_dc, run_insert_delete, run_one_go, run_sequential,
    split_delete_spec,
};
pub use record::{
    emit_plot_data, write_raw_csv, write_workload, DcAccuracies, MethodRecord, RawQueryOutcome,
    RunRecord, StepRecord,
};

use crate::data::DataError;
use crate::metrics::MetricsError;
use crate::models::ModelError;
use crate::query::QueryError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
