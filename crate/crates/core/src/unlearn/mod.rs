//! Unlearning methods: retrain, stale, fine-tune, NegGrad, NegGrad+,
//! SCRUB, and the SISA ensemble.
//!
//! Every method maps an original checkpoint plus a retain/delete partition
//! to a new checkpoint, never mutating its input. Gradient ascent on the
//! delete set and descent on the retain set share one SGD loop, so the
//! interpolated objective recovers fine-tuning at beta = 1 and pure
//! negated-gradient unlearning at beta = 0 bit-exactly: the retain and
//! delete batch schedules draw from separate seeded streams, and a zero
//! interpolation weight skips the corresponding gradient entirely.

pub mod sisa;

use crate::autodiff::{clip_l2_norm, streams, Direction, OptimConfig, OptimState, SeededRng};
use crate::data::EncodedDataset;
use crate::models::{GradientModel, ModelError, Role};
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Retrain,
    Stale,
    FineTune,
    NegGrad,
    NegGradPlus,
    Scrub,
    Sisa,
}

impl Method {
    pub fn id(&self) -> &'static str {
        match self {
            Method::Retrain => "retrain",
            Method::Stale => "stale",
            Method::FineTune => "finetune",
            Method::NegGrad => "neggrad",
            Method::NegGradPlus => "neggrad_plus",
            Method::Scrub => "scrub",
            Method::Sisa => "sisa",
        }
    }

    pub fn from_id(id: &str) -> Option<Method> {
        Some(match id {
            "retrain" => Method::Retrain,
            "stale" => Method::Stale,
            "finetune" => Method::FineTune,
            "neggrad" => Method::NegGrad,
            "neggrad_plus" => Method::NegGradPlus,
            "scrub" => Method::Scrub,
            "sisa" => Method::Sisa,
            _ => return None,
        })
    }
}

/// Settings for one training or unlearning run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimConfig,
    /// L2 gradient-norm cap. Off by default; negated-gradient runs enable
    /// it because maximizing a likelihood loss explodes otherwise.
    #[serde(default)]
    pub clip: Option<f64>,
    /// Seed for the batch-shuffle streams.
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, optimizer: OptimConfig, seed: u64) -> Self {
        TrainConfig { epochs, batch_size, optimizer, clip: None, seed }
    }

    pub fn with_clip(mut self, cap: f64) -> Self {
        self.clip = Some(cap);
        self
    }
}

/// Unlearning hyperparameters on top of the base training settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UnlearnConfig {
    pub train: TrainConfig,
    /// Interpolation weight: retain-descent at 1, delete-ascent at 0.
    pub beta: f64,
    /// Add the plain task loss on the retain set to SCRUB's min step.
    pub scrub_task_loss: bool,
    pub scrub_task_weight: f64,
    /// Epochs that start with a max step on the delete set; defaults to
    /// the first half of the run.
    pub scrub_max_step_epochs: Option<usize>,
}

impl UnlearnConfig {
    pub fn new(train: TrainConfig) -> Self {
        UnlearnConfig {
            train,
            beta: 0.9,
            scrub_task_loss: true,
            scrub_task_weight: 1.0,
            scrub_max_step_epochs: None,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Mean objective value per epoch.
    pub epoch_losses: Vec<f64>,
    pub seconds: f64,
}

/// Canonical batch order: ascending row ids, then a seeded shuffle. The
/// caller's index ordering never influences training, which is what makes
/// ensemble constituents comparable with plain runs.
fn epoch_batches(rows: &[usize], batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = rows.to_vec();
    order.sort_unstable();
    rng.shuffle(&mut order);
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

fn add_scaled(acc: &mut [f64], grad: &[f64], k: f64) {
    for (a, &g) in acc.iter_mut().zip(grad.iter()) {
        *a += k * g;
    }
}

/// One pass of plain task training (descent on the task loss over `rows`).
/// Used for original training, retraining, and SISA constituents.
pub fn train_task<M: GradientModel>(
    model: &mut M,
    data: &EncodedDataset,
    rows: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainTrace, ModelError> {
    if rows.is_empty() {
        return Err(ModelError::EmptyRows);
    }
    let start = Instant::now();
    let mut opt = OptimState::new(&cfg.optimizer, model.params().len())?;
    let mut rng = SeededRng::new(cfg.seed, streams::RETAIN_BATCH);
    let mut trace = TrainTrace::default();
    for epoch in 0..cfg.epochs {
        opt.lr_decay(epoch);
        let mut epoch_loss = 0.0;
        let batches = epoch_batches(rows, cfg.batch_size, &mut rng);
        let n_batches = batches.len();
        for batch in batches {
            let inputs = model.loss_inputs(data, &batch)?;
            let eval = model.loss_graph().forward(&inputs, model.params()).map_err(|e| {
                ModelError::Diverged(format!("epoch {epoch}: {e}"))
            })?;
            epoch_loss += eval.loss();
            let mut grads = model.loss_graph().backward(&eval)?;
            if let Some(cap) = cfg.clip {
                clip_l2_norm(&mut grads, cap);
            }
            opt.step(model.params_mut(), &grads, Direction::Descent)?;
        }
        trace.epoch_losses.push(epoch_loss / n_batches as f64);
    }
    trace.seconds = start.elapsed().as_secs_f64();
    Ok(trace)
}

/// Descent on `beta * retain loss - (1 - beta) * delete loss`.
///
/// Retain batches come from one stream and delete batches from another, so
/// beta = 1 is bit-identical to fine-tuning (delete stream untouched) and
/// beta = 0 to pure gradient ascent on the delete set.
fn interpolated_unlearn<M: GradientModel>(
    original: &M,
    data: &EncodedDataset,
    retain: &[usize],
    delete: &[usize],
    cfg: &UnlearnConfig,
) -> Result<(M, TrainTrace), ModelError> {
    let beta = cfg.beta;
    if !(0.0..=1.0).contains(&beta) {
        return Err(ModelError::Invalid(format!("beta must lie in [0,1], got {beta}")));
    }
    if beta > 0.0 && retain.is_empty() {
        return Err(ModelError::EmptyRows);
    }
    if beta < 1.0 && delete.is_empty() {
        return Err(ModelError::EmptyRows);
    }
    let start = Instant::now();
    let mut model = original.clone();
    model.set_role(Role::Unlearned);
    let t = &cfg.train;
    let mut opt = OptimState::new(&t.optimizer, model.params().len())?;
    let mut retain_rng = SeededRng::new(t.seed, streams::RETAIN_BATCH);
    let mut delete_rng = SeededRng::new(t.seed, streams::DELETE_BATCH);
    let mut trace = TrainTrace::default();

    for epoch in 0..t.epochs {
        opt.lr_decay(epoch);
        let retain_batches: Vec<Vec<usize>> = if beta > 0.0 {
            epoch_batches(retain, t.batch_size, &mut retain_rng)
        } else {
            Vec::new()
        };
        let delete_batches: Vec<Vec<usize>> = if beta < 1.0 {
            epoch_batches(delete, t.batch_size, &mut delete_rng)
        } else {
            Vec::new()
        };
        let steps = retain_batches.len().max(delete_batches.len());
        let mut epoch_obj = 0.0;
        for step in 0..steps {
            let mut grads = vec![0.0; model.params().len()];
            let mut objective = 0.0;
            if beta > 0.0 {
                let batch = &retain_batches[step % retain_batches.len()];
                let inputs = model.loss_inputs(data, batch)?;
                let eval = model
                    .loss_graph()
                    .forward(&inputs, model.params())
                    .map_err(|e| ModelError::Diverged(format!("retain epoch {epoch}: {e}")))?;
                objective += beta * eval.loss();
                let g = model.loss_graph().backward(&eval)?;
                add_scaled(&mut grads, &g, beta);
            }
            if beta < 1.0 {
                let batch = &delete_batches[step % delete_batches.len()];
                let inputs = model.loss_inputs(data, batch)?;
                let eval = model
                    .loss_graph()
                    .forward(&inputs, model.params())
                    .map_err(|e| ModelError::Diverged(format!("delete epoch {epoch}: {e}")))?;
                objective -= (1.0 - beta) * eval.loss();
                let g = model.loss_graph().backward(&eval)?;
                add_scaled(&mut grads, &g, -(1.0 - beta));
            }
            if let Some(cap) = t.clip {
                clip_l2_norm(&mut grads, cap);
            }
            opt.step(model.params_mut(), &grads, Direction::Descent)?;
            epoch_obj += objective;
        }
        trace.epoch_losses.push(epoch_obj / steps.max(1) as f64);
    }
    trace.seconds = start.elapsed().as_secs_f64();
    Ok((model, trace))
}

/// The oracle: fresh weights, trained on the retain set only.
pub fn retrain<M: GradientModel>(
    original: &M,
    data: &EncodedDataset,
    retain: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(M, TrainTrace), ModelError> {
    let mut model = original.reinit(seed);
    let trace = train_task(&mut model, data, retain, cfg)?;
    model.set_role(Role::Oracle);
    Ok((model, trace))
}

/// Keep the network untouched; only the table meta-data (updated by the
/// caller) reflects the deletion.
pub fn stale<M: GradientModel>(original: &M) -> M {
    let mut model = original.clone();
    model.set_role(Role::Unlearned);
    model
}

/// Continue training on the retain set.
pub fn fine_tune<M: GradientModel>(
    original: &M,
    data: &EncodedDataset,
    retain: &[usize],
    cfg: &TrainConfig,
) -> Result<(M, TrainTrace), ModelError> {
    let unlearn_cfg = UnlearnConfig::new(cfg.clone()).with_beta(1.0);
    interpolated_unlearn(original, data, retain, &[], &unlearn_cfg)
}

/// Gradient ascent on the delete set only.
pub fn neg_grad<M: GradientModel>(
    original: &M,
    data: &EncodedDataset,
    delete: &[usize],
    cfg: &TrainConfig,
) -> Result<(M, TrainTrace), ModelError> {
    let unlearn_cfg = UnlearnConfig::new(cfg.clone()).with_beta(0.0);
    interpolated_unlearn(original, data, &[], delete, &unlearn_cfg)
}

/// Simultaneous retain-descent and delete-ascent, weighted by beta.
pub fn neg_grad_plus<M: GradientModel>(
    original: &M,
    data: &EncodedDataset,
    retain: &[usize],
    delete: &[usize],
    cfg: &UnlearnConfig,
) -> Result<(M, TrainTrace), ModelError> {
    interpolated_unlearn(original, data, retain, delete, cfg)
}

/// Teacher-student unlearning: the student starts from the teacher, then
/// alternates max steps (push the teacher-student distance up on the
/// delete set, first half of the epochs only) with min steps (pull it down
/// on the retain set, optionally with the plain task loss mixed in).
pub fn scrub<M: GradientModel>(
    teacher: &M,
    data: &EncodedDataset,
    retain: &[usize],
    delete: &[usize],
    cfg: &UnlearnConfig,
) -> Result<(M, TrainTrace), ModelError> {
    if retain.is_empty() || delete.is_empty() {
        return Err(ModelError::EmptyRows);
    }
    let beta = cfg.beta;
    if !(0.0..=1.0).contains(&beta) {
        return Err(ModelError::Invalid(format!("beta must lie in [0,1], got {beta}")));
    }
    let start = Instant::now();
    let mut student = teacher.clone();
    student.set_role(Role::Unlearned);
    let t = &cfg.train;
    let mut opt = OptimState::new(&t.optimizer, student.params().len())?;
    let mut retain_rng = SeededRng::new(t.seed, streams::RETAIN_BATCH);
    let mut delete_rng = SeededRng::new(t.seed, streams::DELETE_BATCH);
    let max_epochs = cfg.scrub_max_step_epochs.unwrap_or(t.epochs.div_ceil(2));
    let mut trace = TrainTrace::default();

    for epoch in 0..t.epochs {
        opt.lr_decay(epoch);
        let mut epoch_obj = 0.0;
        let mut epoch_steps = 0usize;

        if epoch < max_epochs {
            // max step: ascend the distance on the delete set
            for batch in epoch_batches(delete, t.batch_size, &mut delete_rng) {
                let inputs = student.scrub_inputs(teacher, data, &batch)?;
                let eval = student
                    .scrub_graph()
                    .forward(&inputs, student.params())
                    .map_err(|e| ModelError::Diverged(format!("max step epoch {epoch}: {e}")))?;
                epoch_obj -= (1.0 - beta) * eval.loss();
                let g = student.scrub_graph().backward(&eval)?;
                let mut grads = vec![0.0; student.params().len()];
                add_scaled(&mut grads, &g, -(1.0 - beta));
                if let Some(cap) = t.clip {
                    clip_l2_norm(&mut grads, cap);
                }
                opt.step(student.params_mut(), &grads, Direction::Descent)?;
                epoch_steps += 1;
            }
        }

        // min step: descend the distance (plus task loss) on the retain set
        for batch in epoch_batches(retain, t.batch_size, &mut retain_rng) {
            let mut grads = vec![0.0; student.params().len()];
            let inputs = student.scrub_inputs(teacher, data, &batch)?;
            let eval = student
                .scrub_graph()
                .forward(&inputs, student.params())
                .map_err(|e| ModelError::Diverged(format!("min step epoch {epoch}: {e}")))?;
            epoch_obj += beta * eval.loss();
            let g = student.scrub_graph().backward(&eval)?;
            add_scaled(&mut grads, &g, beta);
            if cfg.scrub_task_loss {
                let task_inputs = student.loss_inputs(data, &batch)?;
                let task_eval = student
                    .loss_graph()
                    .forward(&task_inputs, student.params())
                    .map_err(|e| ModelError::Diverged(format!("task loss epoch {epoch}: {e}")))?;
                epoch_obj += cfg.scrub_task_weight * task_eval.loss();
                let tg = student.loss_graph().backward(&task_eval)?;
                add_scaled(&mut grads, &tg, cfg.scrub_task_weight);
            }
            if let Some(cap) = t.clip {
                clip_l2_norm(&mut grads, cap);
            }
            opt.step(student.params_mut(), &grads, Direction::Descent)?;
            epoch_steps += 1;
        }
        trace.epoch_losses.push(epoch_obj / epoch_steps.max(1) as f64);
    }
    trace.seconds = start.elapsed().as_secs_f64();
    Ok((student, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{apply_delete, freeze_encoding, synthetic, DeleteSpec};
    use crate::models::{mean_distance, mean_loss, MdnConfig, MdnModel};

    fn setup() -> (EncodedDataset, Vec<usize>, Vec<usize>, MdnModel) {
        let table = synthetic::census_like(600, 7);
        let data = freeze_encoding(&table).unwrap();
        let spec = DeleteSpec::full_range("age", 30.0, 35.0);
        let split = apply_delete(&data, &spec, None).unwrap();
        let cfg = MdnConfig { hidden: 16, layers: 2, components: 5, ..MdnConfig::new("country", "age") };
        let mut model = MdnModel::build(&data, cfg, 42).unwrap();
        let tcfg = TrainConfig::new(6, 64, OptimConfig::adam(0.003), 42);
        train_task(&mut model, &data, split.retain(), &tcfg).unwrap();
        // deliberately train on everything afterwards so the delete rows
        // are known to the model
        train_task(&mut model, &data, &(0..data.len()).collect::<Vec<_>>(), &tcfg).unwrap();
        model.set_role(Role::Original);
        (data, split.retain().to_vec(), split.delete().to_vec(), model)
    }

    fn unlearn_cfg(seed: u64) -> UnlearnConfig {
        UnlearnConfig::new(TrainConfig::new(3, 64, OptimConfig::adam(0.002), seed))
    }

    #[test]
    fn training_reduces_loss() {
        let table = synthetic::census_like(400, 3);
        let data = freeze_encoding(&table).unwrap();
        for seed in [0u64, 1, 2] {
            let cfg = MdnConfig { hidden: 16, layers: 2, components: 5, ..MdnConfig::new("country", "age") };
            let mut model = MdnModel::build(&data, cfg, seed).unwrap();
            let rows: Vec<usize> = (0..data.len()).collect();
            let tcfg = TrainConfig::new(5, 64, OptimConfig::adam(0.003), seed);
            let trace = train_task(&mut model, &data, &rows, &tcfg).unwrap();
            assert!(
                trace.epoch_losses.last().unwrap() < trace.epoch_losses.first().unwrap(),
                "seed {seed}: loss did not decrease: {:?}",
                trace.epoch_losses
            );
        }
    }

    #[test]
    fn stale_keeps_parameters_bit_identical() {
        let (_, _, _, model) = setup();
        let s = stale(&model);
        assert_eq!(s.role(), Role::Unlearned);
        let a: Vec<u64> = model.params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = s.params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn beta_one_recovers_fine_tune_bit_exactly() {
        let (data, retain, delete, model) = setup();
        let cfg = unlearn_cfg(9);
        let (ft, _) = fine_tune(&model, &data, &retain, &cfg.train).unwrap();
        let (ngp, _) = neg_grad_plus(&model, &data, &retain, &delete, &cfg.clone().with_beta(1.0)).unwrap();
        let a: Vec<u64> = ft.params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = ngp.params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn beta_zero_recovers_neg_grad_bit_exactly() {
        let (data, retain, delete, model) = setup();
        let cfg = unlearn_cfg(9);
        let mut clipped = cfg.train.clone();
        clipped.clip = Some(5.0);
        let (ng, _) = neg_grad(&model, &data, &delete, &clipped).unwrap();
        let cfg0 = UnlearnConfig::new(clipped).with_beta(0.0);
        let (ngp, _) = neg_grad_plus(&model, &data, &retain, &delete, &cfg0).unwrap();
        let a: Vec<u64> = ng.params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = ngp.params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn neg_grad_raises_delete_loss() {
        let (data, _, delete, model) = setup();
        let before = mean_loss(&model, &data, &delete).unwrap();
        let cfg = TrainConfig::new(2, 64, OptimConfig::adam(0.002), 5).with_clip(5.0);
        let (ng, _) = neg_grad(&model, &data, &delete, &cfg).unwrap();
        let after = mean_loss(&ng, &data, &delete).unwrap();
        assert!(after > before, "delete-set loss should rise: {before} -> {after}");
    }

    #[test]
    fn fine_tune_does_not_hurt_retain_loss() {
        let (data, retain, _, model) = setup();
        for seed in [1u64, 2, 3] {
            let cfg = TrainConfig::new(3, 64, OptimConfig::adam(0.001), seed);
            let (ft, _) = fine_tune(&model, &data, &retain, &cfg).unwrap();
            let before = mean_loss(&model, &data, &retain).unwrap();
            let after = mean_loss(&ft, &data, &retain).unwrap();
            assert!(
                after <= before + 0.02,
                "seed {seed}: retain loss regressed: {before} -> {after}"
            );
        }
    }

    #[test]
    fn combined_objective_decreases() {
        let (data, retain, delete, model) = setup();
        for seed in [1u64, 2, 3] {
            let cfg = unlearn_cfg(seed).with_beta(0.9);
            let (_, trace) = neg_grad_plus(&model, &data, &retain, &delete, &cfg).unwrap();
            assert!(
                trace.epoch_losses.last().unwrap() <= trace.epoch_losses.first().unwrap(),
                "seed {seed}: objective did not decrease: {:?}",
                trace.epoch_losses
            );
        }
    }

    #[test]
    fn scrub_zero_epochs_is_identity() {
        let (data, retain, delete, model) = setup();
        let cfg = UnlearnConfig::new(TrainConfig::new(0, 64, OptimConfig::adam(0.001), 3));
        let (student, _) = scrub(&model, &data, &retain, &delete, &cfg).unwrap();
        assert_eq!(student.params(), model.params());
        let d = mean_distance(&student, &model, &data, &retain).unwrap();
        assert!(d.abs() < 1e-9);
    }

    #[test]
    fn scrub_separates_retain_and_delete_distances() {
        let (data, retain, delete, model) = setup();
        for seed in [5u64, 6, 7] {
            let cfg = UnlearnConfig::new(TrainConfig::new(4, 64, OptimConfig::adam(0.002), seed))
                .with_beta(0.9);
            let (student, _) = scrub(&model, &data, &retain, &delete, &cfg).unwrap();
            let d_retain = mean_distance(&student, &model, &data, &retain).unwrap();
            let d_delete = mean_distance(&student, &model, &data, &delete).unwrap();
            assert!(d_retain >= 0.0 && d_delete >= 0.0, "KL terms are nonnegative");
            assert!(
                d_retain < d_delete,
                "seed {seed}: retain distance {d_retain} should stay below delete distance {d_delete}"
            );
        }
    }

    #[test]
    fn retrain_tags_oracle_and_times_itself() {
        let (data, retain, _, model) = setup();
        let cfg = TrainConfig::new(2, 64, OptimConfig::adam(0.003), 11);
        let (oracle, trace) = retrain(&model, &data, &retain, &cfg, 11).unwrap();
        assert_eq!(oracle.role(), Role::Oracle);
        assert!(trace.seconds > 0.0);
        assert_ne!(oracle.params(), model.params());
    }

    #[test]
    fn invalid_beta_rejected() {
        let (data, retain, delete, model) = setup();
        let cfg = unlearn_cfg(1).with_beta(1.5);
        assert!(neg_grad_plus(&model, &data, &retain, &delete, &cfg).is_err());
    }
}
