//! Learned-database components with machine unlearning.
//!
//! The crate bundles three small learned DB models — a mixture density
//! network for approximate query processing, a masked autoregressive
//! network for selectivity estimation, and a residual classifier — with
//! the unlearning methods used to delete data from them (retrain, stale,
//! fine-tune, NegGrad, NegGrad+, SCRUB, SISA), the evaluation metrics to
//! judge the deletion (workload errors, likelihoods, histogram divergence,
//! membership inference), and config-driven experiment pipelines.

pub mod autodiff;
pub mod data;
pub mod query;
pub mod models;
pub mod unlearn;
pub mod metrics;
pub mod bench;
