//! Experiment pipelines: one-go deletion, sequential deletion,
//! insert+delete, and the classification task, all config-driven.
//!
//! Every pipeline follows the same skeleton: load and freeze-encode the
//! dataset, train the original model, apply the delete and update the
//! table meta-data, produce one checkpoint per unlearning method (failures
//! are recorded per method, never aborting the others), evaluate shared
//! workloads against exact oracle truths, and persist a run record plus
//! raw per-query CSVs and checkpoints.

use super::config::{ExperimentConfig, Mode, Task};
use super::record::{
    write_raw_csv, DcAccuracies, MethodRecord, RawQueryOutcome, RunRecord, StepRecord,
};
use super::BenchError;
use crate::autodiff::{derive_seed, streams, SeededRng};
use crate::data::{
    apply_delete, freeze_encoding, insert_rows, load_csv, split_train_val_test, synthetic,
    update_metadata, Cell, DeletePredicate, DeleteSpec, EncodedDataset,
    FrequencyTable, SplitState,
};
use crate::metrics::{
    absolute_error, avg_likelihood, build_histogram, histogram_edges, js_divergence, mia_attack,
    relative_error, scalar_attack, speedup, summarize, AttackKind, Histogram,
};
use crate::models::{
    accuracy, ensure_multiclass, write_checkpoint, ClassifierConfig,
    ClassifierModel, DarnConfig, DarnModel, GradientModel, MdnConfig, MdnModel, ModelError,
};
use crate::query::{
    gen_workload_aqp, gen_workload_se, QuerySpec, Workload, WorkloadLabel,
};
use crate::unlearn::sisa::{
    aggregate_aqp, aggregate_se, vote_accuracy, Aggregation, SisaConfig, SisaEnsemble,
};
use crate::unlearn::{
    fine_tune, neg_grad, neg_grad_plus, retrain, scrub, stale, train_task, Method, TrainConfig,
};
use std::collections::BTreeMap;
use std::path::Path;

/// Seed streams private to the pipelines.
mod bench_streams {
    pub const WORKLOAD_QR: u64 = 100;
    pub const WORKLOAD_QD: u64 = 101;
    pub const JS_SAMPLER: u64 = 102;
    pub const SE_ANSWER: u64 = 103;
}

/// Load the configured dataset and freeze its encoding.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<EncodedDataset, BenchError> {
    let table = match (&cfg.dataset.path, &cfg.dataset.builtin) {
        (Some(path), _) => load_csv(path, &cfg.dataset.kind_hints()?)?,
        (None, Some(builtin)) => match builtin.as_str() {
            "census" => synthetic::census_like(cfg.dataset.builtin_rows, cfg.dataset.builtin_seed),
            "blobs" => synthetic::class_blobs(
                cfg.dataset.builtin_rows,
                4,
                cfg.dataset.builtin_spread,
                cfg.dataset.builtin_seed,
            ),
            other => {
                return Err(BenchError::Config(super::ConfigError::Invalid(format!(
                    "unknown builtin dataset '{other}'"
                ))))
            }
        },
        (None, None) => unreachable!("validated"),
    };
    Ok(freeze_encoding(&table)?)
}

/// A produced checkpoint: either a single model or a SISA ensemble.
enum Trained<M: GradientModel> {
    Single(M),
    Ensemble(SisaEnsemble<M>),
}

/// Everything shared by the per-method evaluation of one seed.
struct SeedScope<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    seed_index: usize,
}

impl<'a> SeedScope<'a> {
    fn out_raw(&self, method: &str, label: &str) -> std::path::PathBuf {
        self.cfg
            .experiment
            .output_dir
            .join("raw")
            .join(format!("seed{}", self.seed))
            .join(format!("{method}_{label}.csv"))
    }
}

/// Accumulates one method's measurements across seeds.
#[derive(Default)]
struct Pooled {
    errors: BTreeMap<String, Vec<f64>>,
    lik_retain: Vec<f64>,
    lik_delete: Vec<f64>,
    js: Vec<f64>,
    histogram: Option<Histogram>,
    accuracies: Vec<DcAccuracies>,
    mia: Vec<crate::metrics::MiaResult>,
    seconds: Vec<f64>,
    /// step -> (metric -> pooled errors, js values)
    steps: BTreeMap<usize, (String, BTreeMap<String, Vec<f64>>, Vec<f64>)>,
    failures: Vec<String>,
}

impl Pooled {
    fn push_errors(&mut self, by_key: BTreeMap<String, Vec<f64>>) {
        for (k, mut v) in by_key {
            self.errors.entry(k).or_default().append(&mut v);
        }
    }

    fn push_step(
        &mut self,
        step: usize,
        operation: &str,
        by_key: BTreeMap<String, Vec<f64>>,
        js: Option<f64>,
    ) {
        let entry = self
            .steps
            .entry(step)
            .or_insert_with(|| (operation.to_string(), BTreeMap::new(), Vec::new()));
        for (k, mut v) in by_key {
            entry.1.entry(k).or_default().append(&mut v);
        }
        if let Some(j) = js {
            entry.2.push(j);
        }
    }

    fn mean(values: &[f64]) -> Option<f64> {
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }

    fn into_record(self) -> MethodRecord {
        if !self.failures.is_empty() {
            return MethodRecord::failed(self.failures.join("; "));
        }
        let mut rec = MethodRecord { status: "ok".into(), ..Default::default() };
        for (k, v) in &self.errors {
            if let Ok(stats) = summarize(v) {
                rec.workload_stats.insert(k.clone(), stats);
            }
        }
        rec.likelihood_retain = Self::mean(&self.lik_retain);
        rec.likelihood_delete = Self::mean(&self.lik_delete);
        rec.js = Self::mean(&self.js);
        rec.histogram = self.histogram;
        if !self.accuracies.is_empty() {
            let n = self.accuracies.len() as f64;
            rec.accuracies = Some(DcAccuracies {
                test: self.accuracies.iter().map(|a| a.test).sum::<f64>() / n,
                retain: self.accuracies.iter().map(|a| a.retain).sum::<f64>() / n,
                forget: self.accuracies.iter().map(|a| a.forget).sum::<f64>() / n,
            });
        }
        rec.mia = self.mia;
        rec.unlearn_seconds = Self::mean(&self.seconds).unwrap_or(0.0);
        for (step, (operation, by_key, js)) in self.steps {
            let mut sr = StepRecord { step, operation, ..Default::default() };
            for (k, v) in &by_key {
                if let Ok(stats) = summarize(v) {
                    sr.workload_stats.insert(k.clone(), stats);
                }
            }
            sr.js = Self::mean(&js);
            rec.steps.push(sr);
        }
        rec
    }
}

/// Error of one estimate given its ground truth: relative when the truth
/// is positive, absolute otherwise (the deleted-data path).
fn query_error(estimate: f64, truth: f64) -> f64 {
    if truth > 0.0 {
        relative_error(estimate, truth).expect("positive truth")
    } else {
        absolute_error(estimate, truth)
    }
}

/// Score one workload with the given estimator; returns errors grouped by
/// `<label>_<agg>` plus the raw rows for persistence.
fn score_workload(
    workload: &Workload,
    mut estimate: impl FnMut(usize, &QuerySpec) -> Result<f64, ModelError>,
) -> Result<(BTreeMap<String, Vec<f64>>, Vec<RawQueryOutcome>), ModelError> {
    let mut by_key: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut raw = Vec::with_capacity(workload.queries.len());
    for (i, q) in workload.queries.iter().enumerate() {
        let est = estimate(i, q)?;
        let truth = workload.truths[i];
        let error = query_error(est, truth);
        let agg = q.agg_kind().expect("workloads hold aggregates").name();
        by_key.entry(format!("{}_{agg}", workload.label.name())).or_default().push(error);
        raw.push(RawQueryOutcome { query_id: i, estimate: est, truth, error });
    }
    Ok((by_key, raw))
}

// ---------------------------------------------------------------------
// AQP task
// ---------------------------------------------------------------------

fn mdn_config(cfg: &ExperimentConfig) -> MdnConfig {
    MdnConfig {
        cat_col: cfg.model.cat_col.clone().expect("validated"),
        num_col: cfg.model.num_col.clone().expect("validated"),
        hidden: cfg.model.hidden,
        layers: cfg.model.layers,
        components: cfg.model.components,
        sigma_mode: Default::default(),
    }
}

/// Reduced constituent architecture for SISA ensembles.
fn mdn_reduced(cfg: &ExperimentConfig, section: &super::config::MethodSection) -> MdnConfig {
    let mut m = mdn_config(cfg);
    m.hidden = section.hidden.unwrap_or(m.hidden / 2);
    m.components = section.components.unwrap_or((m.components / 2).max(1));
    m
}

/// Per-category sampling weights from a frequency table.
fn category_weights(ft: &FrequencyTable) -> Vec<f64> {
    ft.counts().iter().map(|&c| c as f64).collect()
}

/// Histogram of MDN samples, categories drawn from the frequency table.
fn mdn_sample_histogram(
    model: &MdnModel,
    ft: &FrequencyTable,
    edges: &[f64],
    n: usize,
    rng: &mut SeededRng,
) -> Result<Histogram, ModelError> {
    let weights = category_weights(ft);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let cat = rng.weighted(&weights) as u32;
        values.push(model.sample(cat, 1, rng)?[0]);
    }
    Ok(build_histogram(&values, edges).expect("nonempty samples"))
}

fn sisa_sample_histogram(
    ens: &SisaEnsemble<MdnModel>,
    partition_fts: &[FrequencyTable],
    edges: &[f64],
    n: usize,
    rng: &mut SeededRng,
) -> Result<Histogram, ModelError> {
    let part_weights: Vec<f64> = partition_fts.iter().map(|ft| ft.total() as f64).collect();
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.weighted(&part_weights);
        let weights = category_weights(&partition_fts[k]);
        let cat = rng.weighted(&weights) as u32;
        values.push(ens.constituents()[k].sample(cat, 1, rng)?[0]);
    }
    Ok(build_histogram(&values, edges).expect("nonempty samples"))
}

/// Mean per-row likelihood of an ensemble: each row is scored by the
/// constituent that owns its partition.
fn sisa_likelihood<M: GradientModel>(
    ens: &SisaEnsemble<M>,
    data: &EncodedDataset,
    rows: &[usize],
) -> Result<f64, ModelError> {
    let mut owner = vec![usize::MAX; data.len()];
    for (k, part) in ens.partition_rows().iter().enumerate() {
        for &r in part {
            owner[r] = k;
        }
    }
    let mut per_partition: Vec<Vec<usize>> = vec![Vec::new(); ens.partition_rows().len()];
    for &r in rows {
        if owner[r] != usize::MAX {
            per_partition[owner[r]].push(r);
        }
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (k, part_rows) in per_partition.iter().enumerate() {
        if part_rows.is_empty() {
            continue;
        }
        let lik = ens.constituents()[k].row_likelihood(data, part_rows)?;
        total += lik.iter().sum::<f64>();
        count += lik.len();
    }
    if count == 0 {
        return Err(ModelError::EmptyRows);
    }
    Ok(total / count as f64)
}

// ---------------------------------------------------------------------
// Method production
// ---------------------------------------------------------------------

/// One unlearning step for one method. `prior` is the original model at
/// the first step, or the previous step's checkpoint when chaining.
#[allow(clippy::too_many_arguments)]
fn produce_method<M: GradientModel>(
    method: Method,
    section: &super::config::MethodSection,
    cfg: &ExperimentConfig,
    prior: &Trained<M>,
    reduced_proto: Option<&M>,
    data: &EncodedDataset,
    retain: &[usize],
    delete_new: &[usize],
    sort_col: &str,
    seed: u64,
) -> Result<(Trained<M>, f64), BenchError> {
    let ucfg = section.unlearn_config(&cfg.train, seed)?;
    let out = match (method, prior) {
        (Method::Retrain, Trained::Single(m)) => {
            // the oracle retrains with the full original schedule
            let base = cfg.train.train_config(seed)?;
            let (model, trace) = retrain(m, data, retain, &base, seed)?;
            (Trained::Single(model), trace.seconds)
        }
        (Method::Stale, Trained::Single(m)) => (Trained::Single(stale(m)), 0.0),
        (Method::FineTune, Trained::Single(m)) => {
            let (model, trace) = fine_tune(m, data, retain, &ucfg.train)?;
            (Trained::Single(model), trace.seconds)
        }
        (Method::NegGrad, Trained::Single(m)) => {
            let (model, trace) = neg_grad(m, data, delete_new, &ucfg.train)?;
            (Trained::Single(model), trace.seconds)
        }
        (Method::NegGradPlus, Trained::Single(m)) => {
            let (model, trace) = neg_grad_plus(m, data, retain, delete_new, &ucfg)?;
            (Trained::Single(model), trace.seconds)
        }
        (Method::Scrub, Trained::Single(m)) => {
            let (model, trace) = scrub(m, data, retain, delete_new, &ucfg)?;
            (Trained::Single(model), trace.seconds)
        }
        (Method::Sisa, Trained::Ensemble(ens)) => {
            let proto = reduced_proto.expect("sisa runs carry a reduced prototype");
            let (unlearned, trace) = ens.unlearn(proto, data, delete_new)?;
            (Trained::Ensemble(unlearned), trace.seconds)
        }
        _ => {
            return Err(BenchError::Config(super::ConfigError::Invalid(format!(
                "method {} cannot run against this checkpoint kind",
                method.id()
            ))))
        }
    };
    let _ = sort_col;
    Ok(out)
}

/// Initial checkpoint per method: the shared original model, or a freshly
/// trained ensemble for SISA.
#[allow(clippy::too_many_arguments)]
fn initial_state<M: GradientModel>(
    method: Method,
    section: &super::config::MethodSection,
    cfg: &ExperimentConfig,
    original: &M,
    reduced_proto: Option<&M>,
    data: &EncodedDataset,
    train_rows: &[usize],
    sort_col: &str,
    seed: u64,
) -> Result<Trained<M>, BenchError> {
    if method != Method::Sisa {
        return Ok(Trained::Single(original.clone()));
    }
    let proto = reduced_proto.expect("sisa runs carry a reduced prototype");
    let partitions = section.partitions.unwrap_or(5);
    let slices = section.slices.unwrap_or(5);
    let total_epochs = section.epochs.unwrap_or(cfg.train.epochs);
    let epochs_per_slice =
        section.epochs_per_slice.unwrap_or_else(|| total_epochs.div_ceil(slices));
    let mut train = cfg.train.train_config(seed)?;
    train.epochs = epochs_per_slice;
    let sisa_cfg = SisaConfig {
        partitions,
        slices,
        sort_column: sort_col.to_string(),
        train,
        aggregation: if cfg.experiment.task == Task::Dc {
            Aggregation::Majority
        } else {
            Aggregation::Sum
        },
    };
    let (ens, _) = SisaEnsemble::train(proto, data, train_rows, sisa_cfg, seed)?;
    Ok(Trained::Ensemble(ens))
}

fn method_list(cfg: &ExperimentConfig) -> Vec<super::config::MethodSection> {
    let mut methods = cfg.methods.clone();
    // the retrain oracle is the likelihood reference and speedup
    // denominator, so it always runs
    if !methods.iter().any(|m| m.id == "retrain") {
        methods.insert(
            0,
            super::config::MethodSection {
                id: "retrain".into(),
                epochs: None,
                lr: None,
                batch_size: None,
                beta: None,
                clip: None,
                decay: None,
                scrub_task_loss: None,
                partitions: None,
                slices: None,
                epochs_per_slice: None,
                hidden: None,
                components: None,
            },
        );
    }
    methods
}

fn save_single_checkpoint<M: GradientModel>(
    scope: &SeedScope,
    method_id: &str,
    trained: &Trained<M>,
    header_of: impl Fn(&M) -> crate::models::CheckpointHeader,
) {
    let dir = scope
        .cfg
        .experiment
        .output_dir
        .join("checkpoints")
        .join(format!("seed{}", scope.seed));
    if std::fs::create_dir_all(&dir).is_err() {
        return;
    }
    match trained {
        Trained::Single(m) => {
            let _ = write_checkpoint(&dir.join(format!("{method_id}.ckpt")), &header_of(m), m.params());
        }
        Trained::Ensemble(ens) => {
            for (k, m) in ens.constituents().iter().enumerate() {
                let _ = write_checkpoint(
                    &dir.join(format!("{method_id}_p{k}.ckpt")),
                    &header_of(m),
                    m.params(),
                );
            }
        }
    }
}

// ---------------------------------------------------------------------
// One-go pipelines
// ---------------------------------------------------------------------

/// Full one-go run for the configured task. Also the Step-1/2 engine for
/// the other modes.
pub fn run_one_go(cfg: &ExperimentConfig) -> Result<RunRecord, BenchError> {
    cfg.validate()?;
    match cfg.experiment.task {
        Task::Aqp => run_one_go_aqp(cfg),
        Task::Se => run_one_go_se(cfg),
        Task::Dc => run_dc(cfg),
    }
}

fn run_one_go_aqp(cfg: &ExperimentConfig) -> Result<RunRecord, BenchError> {
    let data = load_dataset(cfg)?;
    let spec = cfg.delete.to_spec()?;
    let methods = method_list(cfg);
    let mut pooled: BTreeMap<String, Pooled> = BTreeMap::new();
    let mcfg = mdn_config(cfg);
    let num_idx = data.column_index(&mcfg.num_col)?;
    let edges = histogram_edges(&data.schema()[num_idx])?;

    for (seed_index, &seed) in cfg.experiment.seeds.iter().enumerate() {
        let scope = SeedScope { cfg, seed, seed_index };
        let all_rows: Vec<usize> = (0..data.len()).collect();

        // original model on the full table
        let mut original = MdnModel::build(&data, mcfg.clone(), seed)?;
        let tcfg = cfg.train.train_config(seed)?;
        train_task(&mut original, &data, &all_rows, &tcfg)?;
        original.set_role(crate::models::Role::Original);

        // delete + meta-data update
        let split = apply_delete(&data, &spec, None)?;
        let ft_full = FrequencyTable::build(&data, &mcfg.cat_col, &all_rows)?;
        let ft = update_metadata(&ft_full, &split)?;

        // shared workloads
        let qr = gen_workload_aqp(
            &split,
            Some(&spec),
            WorkloadLabel::QueryRetain,
            (&mcfg.cat_col, &mcfg.num_col),
            cfg.workload.size,
            derive_seed(seed, bench_streams::WORKLOAD_QR),
            &cfg.dataset.table_name,
        )?;
        let qd = gen_workload_aqp(
            &split,
            Some(&spec),
            WorkloadLabel::QueryDelete,
            (&mcfg.cat_col, &mcfg.num_col),
            cfg.workload.size,
            derive_seed(seed, bench_streams::WORKLOAD_QD),
            &cfg.dataset.table_name,
        )?;

        let wl_dir = cfg.experiment.output_dir.join("workloads");
        let _ = super::record::write_workload(&wl_dir, &format!("seed{seed}_qr", seed = seed), &qr);
        let _ = super::record::write_workload(&wl_dir, &format!("seed{seed}_qd", seed = seed), &qd);

        // retained ground-truth histogram for the divergence metric
        let truth_values: Vec<f64> =
            split.retain().iter().map(|&r| data.raw_num(num_idx, r).expect("numeric")).collect();
        let truth_hist = build_histogram(&truth_values, &edges).expect("retain rows nonempty");

        for section in &methods {
            let method = section.method()?;
            let entry = pooled.entry(section.id.clone()).or_default();
            let reduced = if method == Method::Sisa {
                Some(MdnModel::build(&data, mdn_reduced(cfg, section), seed)?)
            } else {
                None
            };
            let produced = initial_state(
                method,
                section,
                cfg,
                &original,
                reduced.as_ref(),
                &data,
                &all_rows,
                &spec.column,
                seed,
            )
            .and_then(|state| {
                produce_method(
                    method,
                    section,
                    cfg,
                    &state,
                    reduced.as_ref(),
                    &data,
                    split.retain(),
                    split.delete(),
                    &spec.column,
                    seed,
                )
            });
            let (trained, seconds) = match produced {
                Ok(v) => v,
                Err(e) => {
                    entry.failures.push(format!("seed {seed}: {e}"));
                    continue;
                }
            };
            entry.seconds.push(seconds);
            save_single_checkpoint(&scope, &section.id, &trained, |m: &MdnModel| {
                m.checkpoint_header()
            });

            // per-partition meta-data for the ensemble
            let partition_fts: Vec<FrequencyTable> = match &trained {
                Trained::Ensemble(ens) => {
                    let retain_set: std::collections::BTreeSet<usize> =
                        split.retain().iter().copied().collect();
                    ens.partition_rows()
                        .iter()
                        .map(|p| {
                            let rows: Vec<usize> =
                                p.iter().copied().filter(|r| retain_set.contains(r)).collect();
                            FrequencyTable::build(&data, &mcfg.cat_col, &rows)
                        })
                        .collect::<Result<_, _>>()?
                }
                Trained::Single(_) => Vec::new(),
            };

            let eval = |workload: &Workload| -> Result<BTreeMap<String, Vec<f64>>, ModelError> {
                let (by_key, raw) = score_workload(workload, |_i, q| match &trained {
                    Trained::Single(m) => m.aqp_answer(&ft, q),
                    Trained::Ensemble(ens) => aggregate_aqp(ens, &partition_fts, q),
                })?;
                let _ = write_raw_csv(
                    &scope.out_raw(&section.id, workload.label.name()),
                    &raw,
                );
                Ok(by_key)
            };
            match (eval(&qr), eval(&qd)) {
                (Ok(a), Ok(b)) => {
                    entry.push_errors(a);
                    entry.push_errors(b);
                }
                (Err(e), _) | (_, Err(e)) => {
                    entry.failures.push(format!("seed {seed} evaluation: {e}"));
                    continue;
                }
            }

            // model-internal metrics
            let (lik_r, lik_d) = match &trained {
                Trained::Single(m) => (
                    avg_likelihood(m, &data, split.retain())?,
                    avg_likelihood(m, &data, split.delete())?,
                ),
                Trained::Ensemble(ens) => (
                    sisa_likelihood(ens, &data, split.retain())?,
                    sisa_likelihood(ens, &data, split.delete())?,
                ),
            };
            entry.lik_retain.push(lik_r);
            entry.lik_delete.push(lik_d);

            let mut js_rng =
                SeededRng::new(derive_seed(seed, bench_streams::JS_SAMPLER), streams::SAMPLER);
            let sample_hist = match &trained {
                Trained::Single(m) => {
                    mdn_sample_histogram(m, &ft, &edges, cfg.workload.js_samples, &mut js_rng)?
                }
                Trained::Ensemble(ens) => sisa_sample_histogram(
                    ens,
                    &partition_fts,
                    &edges,
                    cfg.workload.js_samples,
                    &mut js_rng,
                )?,
            };
            entry.js.push(js_divergence(&truth_hist, &sample_hist)?);
            if scope.seed_index == 0 {
                entry.histogram = Some(sample_hist);
            }
        }
    }

    let mut record = RunRecord::new(
        &cfg.experiment.name,
        cfg.experiment.task.name(),
        Mode::OneGo.name(),
        &cfg.digest(),
        &cfg.experiment.seeds,
    );
    finish_record(&mut record, pooled);
    record.save(&cfg.experiment.output_dir)?;
    Ok(record)
}

fn darn_config(cfg: &ExperimentConfig) -> DarnConfig {
    DarnConfig { hidden: cfg.model.hidden, layers: cfg.model.layers, max_bins: cfg.model.max_bins }
}

fn run_one_go_se(cfg: &ExperimentConfig) -> Result<RunRecord, BenchError> {
    let data = load_dataset(cfg)?;
    let spec = cfg.delete.to_spec()?;
    let methods = method_list(cfg);
    let mut pooled: BTreeMap<String, Pooled> = BTreeMap::new();
    let dcfg = darn_config(cfg);

    for (seed_index, &seed) in cfg.experiment.seeds.iter().enumerate() {
        let scope = SeedScope { cfg, seed, seed_index };
        let all_rows: Vec<usize> = (0..data.len()).collect();
        let mut original = DarnModel::build(&data, dcfg.clone(), seed)?;
        let tcfg = cfg.train.train_config(seed)?;
        train_task(&mut original, &data, &all_rows, &tcfg)?;
        original.set_role(crate::models::Role::Original);

        let split = apply_delete(&data, &spec, None)?;
        let retained_cardinality = split.retain().len() as f64;

        let qr = gen_workload_se(
            &split,
            Some(&spec),
            WorkloadLabel::QueryRetain,
            cfg.workload.size,
            (cfg.workload.filter_count_lo, cfg.workload.filter_count_hi),
            derive_seed(seed, bench_streams::WORKLOAD_QR),
            &cfg.dataset.table_name,
        )?;
        let qd = gen_workload_se(
            &split,
            Some(&spec),
            WorkloadLabel::QueryDelete,
            cfg.workload.size,
            (cfg.workload.filter_count_lo, cfg.workload.filter_count_hi),
            derive_seed(seed, bench_streams::WORKLOAD_QD),
            &cfg.dataset.table_name,
        )?;

        let wl_dir = cfg.experiment.output_dir.join("workloads");
        let _ = super::record::write_workload(&wl_dir, &format!("seed{seed}_qr", seed = seed), &qr);
        let _ = super::record::write_workload(&wl_dir, &format!("seed{seed}_qd", seed = seed), &qd);

        for section in &methods {
            let method = section.method()?;
            let entry = pooled.entry(section.id.clone()).or_default();
            let reduced = if method == Method::Sisa {
                let mut rcfg = dcfg.clone();
                rcfg.hidden = section.hidden.unwrap_or(rcfg.hidden / 2);
                rcfg.layers = rcfg.layers.saturating_sub(1).max(1);
                Some(DarnModel::build(&data, rcfg, seed)?)
            } else {
                None
            };
            let produced = initial_state(
                method,
                section,
                cfg,
                &original,
                reduced.as_ref(),
                &data,
                &all_rows,
                &spec.column,
                seed,
            )
            .and_then(|state| {
                produce_method(
                    method,
                    section,
                    cfg,
                    &state,
                    reduced.as_ref(),
                    &data,
                    split.retain(),
                    split.delete(),
                    &spec.column,
                    seed,
                )
            });
            let (trained, seconds) = match produced {
                Ok(v) => v,
                Err(e) => {
                    entry.failures.push(format!("seed {seed}: {e}"));
                    continue;
                }
            };
            entry.seconds.push(seconds);
            save_single_checkpoint(&scope, &section.id, &trained, |m: &DarnModel| {
                m.checkpoint_header()
            });

            let partition_cards: Vec<f64> = match &trained {
                Trained::Ensemble(ens) => {
                    let retain_set: std::collections::BTreeSet<usize> =
                        split.retain().iter().copied().collect();
                    ens.partition_rows()
                        .iter()
                        .map(|p| p.iter().filter(|r| retain_set.contains(r)).count() as f64)
                        .collect()
                }
                Trained::Single(_) => Vec::new(),
            };

            let eval = |workload: &Workload| -> Result<BTreeMap<String, Vec<f64>>, ModelError> {
                let (by_key, raw) = score_workload(workload, |i, q| {
                    let qseed = derive_seed(derive_seed(seed, bench_streams::SE_ANSWER), i as u64);
                    match &trained {
                        Trained::Single(m) => {
                            let mut rng = SeededRng::new(qseed, streams::SAMPLER);
                            m.answer_count(&data, retained_cardinality, q, cfg.workload.n_samples, &mut rng)
                        }
                        Trained::Ensemble(ens) => aggregate_se(
                            ens,
                            &data,
                            &partition_cards,
                            q,
                            cfg.workload.n_samples,
                            qseed,
                        ),
                    }
                })?;
                let _ = write_raw_csv(&scope.out_raw(&section.id, workload.label.name()), &raw);
                Ok(by_key)
            };
            match (eval(&qr), eval(&qd)) {
                (Ok(a), Ok(b)) => {
                    entry.push_errors(a);
                    entry.push_errors(b);
                }
                (Err(e), _) | (_, Err(e)) => {
                    entry.failures.push(format!("seed {seed} evaluation: {e}"));
                    continue;
                }
            }

            let (lik_r, lik_d) = match &trained {
                Trained::Single(m) => (
                    avg_likelihood(m, &data, split.retain())?,
                    avg_likelihood(m, &data, split.delete())?,
                ),
                Trained::Ensemble(ens) => (
                    sisa_likelihood(ens, &data, split.retain())?,
                    sisa_likelihood(ens, &data, split.delete())?,
                ),
            };
            entry.lik_retain.push(lik_r);
            entry.lik_delete.push(lik_d);
        }
    }

    let mut record = RunRecord::new(
        &cfg.experiment.name,
        cfg.experiment.task.name(),
        Mode::OneGo.name(),
        &cfg.digest(),
        &cfg.experiment.seeds,
    );
    record.notes.push("selectivity estimation reports count queries only".into());
    finish_record(&mut record, pooled);
    record.save(&cfg.experiment.output_dir)?;
    Ok(record)
}

/// Attach speedups and pooled records to the final run record.
fn finish_record(record: &mut RunRecord, pooled: BTreeMap<String, Pooled>) {
    let mut methods: BTreeMap<String, MethodRecord> =
        pooled.into_iter().map(|(k, p)| (k, p.into_record())).collect();
    let retrain_seconds = methods.get("retrain").map(|m| m.unlearn_seconds);
    if let Some(rt) = retrain_seconds {
        for (id, m) in methods.iter_mut() {
            if !m.is_ok() || id == "stale" {
                continue;
            }
            if m.unlearn_seconds > 0.0 {
                m.speedup_vs_retrain = speedup(rt, m.unlearn_seconds).ok();
            }
        }
    }
    record.methods = methods;
    record.finalize();
}

// ---------------------------------------------------------------------
// Classification task
// ---------------------------------------------------------------------

fn classifier_config(cfg: &ExperimentConfig) -> ClassifierConfig {
    ClassifierConfig {
        label_col: cfg.model.label_col.clone().expect("validated"),
        hidden: cfg.model.hidden,
        blocks: cfg.model.blocks,
    }
}

/// Mean constituent probabilities feed the ensemble's attack signals.
fn sisa_signals(
    ens: &SisaEnsemble<ClassifierModel>,
    data: &EncodedDataset,
    rows: &[usize],
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let n_classes = ens.constituents()[0].n_classes();
    let labels = ens.constituents()[0].label_ids(data);
    let mut mean_probs = vec![vec![0.0f64; n_classes]; rows.len()];
    for m in ens.constituents() {
        let probs = m.predict_probs(data, rows)?;
        for (i, row) in mean_probs.iter_mut().enumerate() {
            for (c, slot) in row.iter_mut().enumerate() {
                *slot += probs.get(i, c) / ens.constituents().len() as f64;
            }
        }
    }
    let mut loss = Vec::with_capacity(rows.len());
    let mut conf = Vec::with_capacity(rows.len());
    for (i, &r) in rows.iter().enumerate() {
        let p = mean_probs[i][labels[r] as usize].max(1e-12);
        loss.push(-p.ln());
        conf.push(mean_probs[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok((loss, conf))
}

pub fn run_dc(cfg: &ExperimentConfig) -> Result<RunRecord, BenchError> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let spec = cfg.delete.to_spec()?;
    let methods = method_list(cfg);
    let ccfg = classifier_config(cfg);
    let folds = cfg.mia.as_ref().map(|m| m.folds).unwrap_or(5);
    let mut pooled: BTreeMap<String, Pooled> = BTreeMap::new();
    let mut original_pool = Pooled::default();

    for (seed_index, &seed) in cfg.experiment.seeds.iter().enumerate() {
        let scope = SeedScope { cfg, seed, seed_index };
        let splits = split_train_val_test(data.len(), (0.8, 0.1, 0.1), seed)?;
        let full_split = apply_delete(&data, &spec, None)?;
        let deleted: std::collections::BTreeSet<usize> =
            full_split.delete().iter().copied().collect();
        let mut forget: Vec<usize> =
            splits.train.iter().copied().filter(|r| deleted.contains(r)).collect();
        let mut retain: Vec<usize> =
            splits.train.iter().copied().filter(|r| !deleted.contains(r)).collect();
        forget.sort_unstable();
        retain.sort_unstable();
        if forget.is_empty() {
            return Err(BenchError::Config(super::ConfigError::Invalid(
                "delete spec removes no training rows".into(),
            )));
        }
        // the validation pool matches the forget rows' data predicate; a
        // selective delete's row-index clause is not a data property, so it
        // does not restrict the pool
        let predicate_split = apply_delete(
            &data,
            &DeleteSpec {
                column: spec.column.clone(),
                predicate: spec.predicate.clone(),
                mode: crate::data::DeleteMode::Full,
            },
            None,
        )?;
        let predicate_match: std::collections::BTreeSet<usize> =
            predicate_split.delete().iter().copied().collect();
        let nonmember_val: Vec<usize> =
            splits.val.iter().copied().filter(|r| predicate_match.contains(r)).collect();

        let mut original = ClassifierModel::build(&data, ccfg.clone(), seed)?;
        ensure_multiclass(&original, &data, &splits.train)?;
        let tcfg = cfg.train.train_config(seed)?;
        train_task(&mut original, &data, &splits.train, &tcfg)?;
        original.set_role(crate::models::Role::Original);

        // the original model is itself a row in the report
        original_pool.accuracies.push(DcAccuracies {
            test: accuracy(&original, &data, &splits.test)?,
            retain: accuracy(&original, &data, &retain)?,
            forget: accuracy(&original, &data, &forget)?,
        });
        push_mia(
            &mut original_pool,
            &original,
            &data,
            &forget,
            &retain,
            &nonmember_val,
            folds,
            seed,
        )?;

        for section in &methods {
            let method = section.method()?;
            let entry = pooled.entry(section.id.clone()).or_default();
            if method == Method::Retrain || method == Method::FineTune || method == Method::NegGradPlus
            {
                if let Err(e) = ensure_multiclass(&original, &data, &retain) {
                    entry.failures.push(format!("seed {seed}: {e}"));
                    continue;
                }
            }
            let reduced = if method == Method::Sisa {
                let mut rcfg = ccfg.clone();
                rcfg.hidden = section.hidden.unwrap_or(rcfg.hidden / 2);
                rcfg.blocks = 1;
                Some(ClassifierModel::build(&data, rcfg, seed)?)
            } else {
                None
            };
            let produced = initial_state(
                method,
                section,
                cfg,
                &original,
                reduced.as_ref(),
                &data,
                &splits.train,
                &spec.column,
                seed,
            )
            .and_then(|state| {
                produce_method(
                    method,
                    section,
                    cfg,
                    &state,
                    reduced.as_ref(),
                    &data,
                    &retain,
                    &forget,
                    &spec.column,
                    seed,
                )
            });
            let (trained, seconds) = match produced {
                Ok(v) => v,
                Err(e) => {
                    entry.failures.push(format!("seed {seed}: {e}"));
                    continue;
                }
            };
            entry.seconds.push(seconds);
            save_single_checkpoint(&scope, &section.id, &trained, |m: &ClassifierModel| {
                m.checkpoint_header()
            });

            let acc = match &trained {
                Trained::Single(m) => DcAccuracies {
                    test: accuracy(m, &data, &splits.test)?,
                    retain: accuracy(m, &data, &retain)?,
                    forget: accuracy(m, &data, &forget)?,
                },
                Trained::Ensemble(ens) => DcAccuracies {
                    test: vote_accuracy(ens, &data, &splits.test)?,
                    retain: vote_accuracy(ens, &data, &retain)?,
                    forget: vote_accuracy(ens, &data, &forget)?,
                },
            };
            entry.accuracies.push(acc);

            match &trained {
                Trained::Single(m) => {
                    push_mia(entry, m, &data, &forget, &retain, &nonmember_val, folds, seed)?
                }
                Trained::Ensemble(ens) => {
                    push_sisa_mia(entry, ens, &data, &forget, &retain, &nonmember_val, folds, seed)?
                }
            }
        }
    }

    let mut record = RunRecord::new(
        &cfg.experiment.name,
        cfg.experiment.task.name(),
        Mode::OneGo.name(),
        &cfg.digest(),
        &cfg.experiment.seeds,
    );
    record.original = Some(original_pool.into_record());
    finish_record(&mut record, pooled);
    record.save(&cfg.experiment.output_dir)?;
    Ok(record)
}

/// Run both attack kinds and both pairings against a single model.
#[allow(clippy::too_many_arguments)]
fn push_mia(
    pool: &mut Pooled,
    model: &ClassifierModel,
    data: &EncodedDataset,
    forget: &[usize],
    retain: &[usize],
    nonmember_val: &[usize],
    folds: usize,
    seed: u64,
) -> Result<(), BenchError> {
    if nonmember_val.len() < 2 * folds || forget.len() < 2 * folds {
        return Ok(()); // too small to attack; MIA rows simply absent
    }
    for kind in [AttackKind::Loss, AttackKind::Confidence] {
        let mut r = mia_attack(kind, model, data, forget, nonmember_val, folds, seed)?;
        r.pairing = "forget_vs_validation".into();
        pool.mia.push(r);
        let mut r = mia_attack(kind, model, data, retain, nonmember_val, folds, seed)?;
        r.pairing = "retain_vs_validation".into();
        pool.mia.push(r);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn push_sisa_mia(
    pool: &mut Pooled,
    ens: &SisaEnsemble<ClassifierModel>,
    data: &EncodedDataset,
    forget: &[usize],
    retain: &[usize],
    nonmember_val: &[usize],
    folds: usize,
    seed: u64,
) -> Result<(), BenchError> {
    if nonmember_val.len() < 2 * folds || forget.len() < 2 * folds {
        return Ok(());
    }
    let (f_loss, f_conf) = sisa_signals(ens, data, forget)?;
    let (r_loss, r_conf) = sisa_signals(ens, data, retain)?;
    let (v_loss, v_conf) = sisa_signals(ens, data, nonmember_val)?;
    for (kind, members, nonmembers, pairing) in [
        (AttackKind::Loss, &f_loss, &v_loss, "forget_vs_validation"),
        (AttackKind::Confidence, &f_conf, &v_conf, "forget_vs_validation"),
        (AttackKind::Loss, &r_loss, &v_loss, "retain_vs_validation"),
        (AttackKind::Confidence, &r_conf, &v_conf, "retain_vs_validation"),
    ] {
        let mut r = scalar_attack(kind, members, nonmembers, folds, seed);
        r.pairing = pairing.into();
        pool.mia.push(r);
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Sequential deletion
// ---------------------------------------------------------------------

/// Split a full-range delete into k contiguous sub-ranges that exactly
/// partition [lo, hi].
pub fn split_delete_spec(spec: &DeleteSpec, k: usize) -> Result<Vec<DeleteSpec>, BenchError> {
    let DeletePredicate::NumericRange { lo, hi } = spec.predicate else {
        return Err(BenchError::Config(super::ConfigError::Invalid(
            "sequential mode needs a numeric range delete".into(),
        )));
    };
    if k < 2 {
        return Err(BenchError::Config(super::ConfigError::Invalid(
            "sequential mode needs at least 2 steps".into(),
        )));
    }
    let width = (hi - lo) / k as f64;
    Ok((0..k)
        .map(|i| {
            let a = lo + width * i as f64;
            let b = if i + 1 == k { hi } else { f64::next_down(lo + width * (i + 1) as f64) };
            DeleteSpec {
                column: spec.column.clone(),
                predicate: DeletePredicate::NumericRange { lo: a, hi: b },
                mode: spec.mode.clone(),
            }
        })
        .collect())
}

pub fn run_sequential(cfg: &ExperimentConfig) -> Result<RunRecord, BenchError> {
    cfg.validate()?;
    if cfg.experiment.task != Task::Aqp {
        return Err(BenchError::Config(super::ConfigError::Invalid(
            "sequential mode is implemented for the aqp task".into(),
        )));
    }
    let steps = cfg.sequential.as_ref().map(|s| s.steps).unwrap_or(5);
    let data = load_dataset(cfg)?;
    let spec = cfg.delete.to_spec()?;
    let sub_specs = split_delete_spec(&spec, steps)?;
    let methods = method_list(cfg);
    let mcfg = mdn_config(cfg);
    let mut pooled: BTreeMap<String, Pooled> = BTreeMap::new();

    for &seed in &cfg.experiment.seeds {
        let all_rows: Vec<usize> = (0..data.len()).collect();
        let mut original = MdnModel::build(&data, mcfg.clone(), seed)?;
        let tcfg = cfg.train.train_config(seed)?;
        train_task(&mut original, &data, &all_rows, &tcfg)?;
        original.set_role(crate::models::Role::Original);
        let ft_full = FrequencyTable::build(&data, &mcfg.cat_col, &all_rows)?;

        // chained state per method
        let mut states: BTreeMap<String, Trained<MdnModel>> = BTreeMap::new();
        let mut reduced_protos: BTreeMap<String, MdnModel> = BTreeMap::new();
        for section in &methods {
            let method = section.method()?;
            let reduced = if method == Method::Sisa {
                let proto = MdnModel::build(&data, mdn_reduced(cfg, section), seed)?;
                reduced_protos.insert(section.id.clone(), proto);
                reduced_protos.get(&section.id)
            } else {
                None
            };
            let state = initial_state(
                method, section, cfg, &original, reduced, &data, &all_rows, &spec.column, seed,
            )?;
            states.insert(section.id.clone(), state);
        }

        let mut prior_split: Option<SplitState> = None;
        for (step_idx, sub) in sub_specs.iter().enumerate() {
            let split = apply_delete(&data, sub, prior_split.as_ref())?;
            // workloads clamp against everything deleted so far, so the
            // deleted-data ground truth stays exactly zero at every step
            let cumulative_spec = DeleteSpec {
                column: spec.column.clone(),
                predicate: match (&spec.predicate, &sub.predicate) {
                    (
                        DeletePredicate::NumericRange { lo, .. },
                        DeletePredicate::NumericRange { hi, .. },
                    ) => DeletePredicate::NumericRange { lo: *lo, hi: *hi },
                    _ => spec.predicate.clone(),
                },
                mode: spec.mode.clone(),
            };
            let new_deleted: Vec<usize> = match &prior_split {
                Some(p) => {
                    let old: std::collections::BTreeSet<usize> =
                        p.delete().iter().copied().collect();
                    split.delete().iter().copied().filter(|r| !old.contains(r)).collect()
                }
                None => split.delete().to_vec(),
            };
            let ft = update_metadata(&ft_full, &split)?;

            let qr = gen_workload_aqp(
                &split,
                Some(&cumulative_spec),
                WorkloadLabel::QueryRetain,
                (&mcfg.cat_col, &mcfg.num_col),
                cfg.workload.size,
                derive_seed(derive_seed(seed, bench_streams::WORKLOAD_QR), step_idx as u64),
                &cfg.dataset.table_name,
            )?;
            let qd = gen_workload_aqp(
                &split,
                Some(&cumulative_spec),
                WorkloadLabel::QueryDelete,
                (&mcfg.cat_col, &mcfg.num_col),
                cfg.workload.size,
                derive_seed(derive_seed(seed, bench_streams::WORKLOAD_QD), step_idx as u64),
                &cfg.dataset.table_name,
            )?;

            for section in &methods {
                let method = section.method()?;
                let entry = pooled.entry(section.id.clone()).or_default();
                let Some(state) = states.get(&section.id) else { continue };
                let produced = produce_method(
                    method,
                    section,
                    cfg,
                    state,
                    reduced_protos.get(&section.id),
                    &data,
                    split.retain(),
                    &new_deleted,
                    &spec.column,
                    derive_seed(seed, step_idx as u64 + 7000),
                );
                let (trained, seconds) = match produced {
                    Ok(v) => v,
                    Err(e) => {
                        entry.failures.push(format!("seed {seed} step {step_idx}: {e}"));
                        states.remove(&section.id);
                        continue;
                    }
                };
                entry.seconds.push(seconds);

                let partition_fts: Vec<FrequencyTable> = match &trained {
                    Trained::Ensemble(ens) => {
                        let retain_set: std::collections::BTreeSet<usize> =
                            split.retain().iter().copied().collect();
                        ens.partition_rows()
                            .iter()
                            .map(|p| {
                                let rows: Vec<usize> =
                                    p.iter().copied().filter(|r| retain_set.contains(r)).collect();
                                FrequencyTable::build(&data, &mcfg.cat_col, &rows)
                            })
                            .collect::<Result<_, _>>()?
                    }
                    Trained::Single(_) => Vec::new(),
                };
                let eval =
                    |workload: &Workload| -> Result<BTreeMap<String, Vec<f64>>, ModelError> {
                        let (by_key, _raw) = score_workload(workload, |_i, q| match &trained {
                            Trained::Single(m) => m.aqp_answer(&ft, q),
                            Trained::Ensemble(ens) => aggregate_aqp(ens, &partition_fts, q),
                        })?;
                        Ok(by_key)
                    };
                match (eval(&qr), eval(&qd)) {
                    (Ok(a), Ok(b)) => {
                        entry.push_step(step_idx + 1, "delete", a, None);
                        entry.push_step(step_idx + 1, "delete", b, None);
                    }
                    (Err(e), _) | (_, Err(e)) => {
                        entry.failures.push(format!("seed {seed} step {step_idx}: {e}"));
                        states.remove(&section.id);
                        continue;
                    }
                }
                states.insert(section.id.clone(), trained);
            }
            prior_split = Some(split);
        }
    }

    let mut record = RunRecord::new(
        &cfg.experiment.name,
        cfg.experiment.task.name(),
        Mode::Sequential.name(),
        &cfg.digest(),
        &cfg.experiment.seeds,
    );
    finish_record(&mut record, pooled);

    // one-go reference run for the final ratios
    let mut one_go_cfg = cfg.clone();
    one_go_cfg.experiment.mode = Mode::OneGo;
    one_go_cfg.experiment.output_dir = cfg.experiment.output_dir.join("one_go_reference");
    let one_go = run_one_go_aqp(&one_go_cfg)?;
    for (id, m) in record.methods.iter_mut() {
        let Some(reference) = one_go.methods.get(id) else { continue };
        let Some(last) = m.steps.last().map(|s| s.workload_stats.clone()) else { continue };
        for (metric, stats) in &last {
            if let Some(ref_stats) = reference.workload_stats.get(metric) {
                if stats.mean > 0.0 {
                    m.one_go_over_sequential.insert(metric.clone(), ref_stats.mean / stats.mean);
                }
            }
        }
    }
    record.finalize();
    record.save(&cfg.experiment.output_dir)?;
    Ok(record)
}

// ---------------------------------------------------------------------
// Insert + delete
// ---------------------------------------------------------------------

pub fn run_insert_delete(cfg: &ExperimentConfig) -> Result<RunRecord, BenchError> {
    cfg.validate()?;
    let task = cfg.experiment.task;
    if task == Task::Dc {
        return Err(BenchError::Config(super::ConfigError::Invalid(
            "insert_delete mode applies to aqp and se tasks".into(),
        )));
    }
    let data = load_dataset(cfg)?;
    let spec = cfg.delete.to_spec()?;
    let mut pooled: BTreeMap<String, Pooled> = BTreeMap::new();
    let entry_id = "finetune".to_string();

    for &seed in &cfg.experiment.seeds {
        match task {
            Task::Aqp => insert_delete_aqp_seed(cfg, &data, &spec, seed, pooled.entry(entry_id.clone()).or_default())?,
            Task::Se => insert_delete_se_seed(cfg, &data, &spec, seed, pooled.entry(entry_id.clone()).or_default())?,
            Task::Dc => unreachable!(),
        }
    }

    let mut record = RunRecord::new(
        &cfg.experiment.name,
        task.name(),
        Mode::InsertDelete.name(),
        &cfg.digest(),
        &cfg.experiment.seeds,
    );
    record.notes.push(
        "step 3 reinserts the deleted rows and fine-tunes over the full updated table; the \
         original external insertion method is not reimplemented"
            .into(),
    );
    if task == Task::Se {
        record.notes.push("selectivity estimation does not support sum queries (NA)".into());
    }
    finish_record(&mut record, pooled);
    record.save(&cfg.experiment.output_dir)?;
    Ok(record)
}

fn insert_delete_aqp_seed(
    cfg: &ExperimentConfig,
    data: &EncodedDataset,
    spec: &DeleteSpec,
    seed: u64,
    pool: &mut Pooled,
) -> Result<(), BenchError> {
    let mcfg = mdn_config(cfg);
    let num_idx = data.column_index(&mcfg.num_col)?;
    let edges = histogram_edges(&data.schema()[num_idx])?;
    let all_rows: Vec<usize> = (0..data.len()).collect();
    let full_values: Vec<f64> =
        all_rows.iter().map(|&r| data.raw_num(num_idx, r).expect("numeric")).collect();
    let full_hist = build_histogram(&full_values, &edges).expect("rows nonempty");

    // Step 1: train
    let mut model = MdnModel::build(data, mcfg.clone(), seed)?;
    let tcfg = cfg.train.train_config(seed)?;
    train_task(&mut model, data, &all_rows, &tcfg)?;
    model.set_role(crate::models::Role::Original);
    let ft_full = FrequencyTable::build(data, &mcfg.cat_col, &all_rows)?;

    let fresh = SplitState::fresh(data.clone());
    let step1 = eval_aqp_step(cfg, &fresh, None, &model, &ft_full, &full_hist, &edges, seed, 0)?;
    pool.push_step(1, "train", step1.0, Some(step1.1));

    // Step 2: delete via fine-tuning on the retain set
    let split = apply_delete(data, spec, None)?;
    let ft_r = update_metadata(&ft_full, &split)?;
    let ft_section = cfg.methods.iter().find(|m| m.id == "finetune").cloned().unwrap_or(
        super::config::MethodSection {
            id: "finetune".into(),
            epochs: None,
            lr: None,
            batch_size: None,
            beta: None,
            clip: None,
            decay: None,
            scrub_task_loss: None,
            partitions: None,
            slices: None,
            epochs_per_slice: None,
            hidden: None,
            components: None,
        },
    );
    let ucfg = ft_section.unlearn_config(&cfg.train, seed)?;
    let (model2, _) = fine_tune(&model, data, split.retain(), &ucfg.train)?;
    let step2 = eval_aqp_step(cfg, &split, Some(spec), &model2, &ft_r, &full_hist, &edges, seed, 1)?;
    pool.push_step(2, "delete", step2.0, Some(step2.1));

    // Step 3: reinsert the deleted rows, then fine-tune on them mixed with
    // a same-sized uniform sample of retained rows
    let deleted_rows: Vec<Vec<Cell>> =
        split.delete().iter().map(|&r| data.decode_row(r)).collect();
    let restored = insert_rows(&split, &deleted_rows)?;
    let data3 = restored.data().clone();
    // fine-tune over the full updated table: the reinserted rows plus all
    // retained rows, so the learned marginal keeps its true proportions
    let mix: Vec<usize> = restored.retain().to_vec();
    let mut ucfg3 = ucfg.clone();
    ucfg3.train.seed = derive_seed(seed, 3);
    let (model3, _) = fine_tune(&model2, &data3, &mix, &ucfg3.train)?;
    let ft3 = FrequencyTable::build(&data3, &mcfg.cat_col, restored.retain())?;
    let step3 =
        eval_aqp_step(cfg, &restored, None, &model3, &ft3, &full_hist, &edges, seed, 2)?;
    pool.push_step(3, "insert", step3.0, Some(step3.1));
    pool.seconds.push(0.0);
    Ok(())
}

/// QR workload + divergence against the pre-deletion histogram for one
/// insert/delete step.
#[allow(clippy::too_many_arguments)]
fn eval_aqp_step(
    cfg: &ExperimentConfig,
    split: &SplitState,
    delete_ctx: Option<&DeleteSpec>,
    model: &MdnModel,
    ft: &FrequencyTable,
    reference_hist: &Histogram,
    edges: &[f64],
    seed: u64,
    step: u64,
) -> Result<(BTreeMap<String, Vec<f64>>, f64), BenchError> {
    let mcfg = mdn_config(cfg);
    let qr = gen_workload_aqp(
        split,
        delete_ctx,
        WorkloadLabel::QueryRetain,
        (&mcfg.cat_col, &mcfg.num_col),
        cfg.workload.size,
        derive_seed(derive_seed(seed, bench_streams::WORKLOAD_QR), step),
        &cfg.dataset.table_name,
    )?;
    let (by_key, _raw) = score_workload(&qr, |_i, q| model.aqp_answer(ft, q))?;
    let mut js_rng = SeededRng::new(
        derive_seed(derive_seed(seed, bench_streams::JS_SAMPLER), step),
        streams::SAMPLER,
    );
    let sample_hist = mdn_sample_histogram(model, ft, edges, cfg.workload.js_samples, &mut js_rng)?;
    let js = js_divergence(reference_hist, &sample_hist)?;
    Ok((by_key, js))
}

fn insert_delete_se_seed(
    cfg: &ExperimentConfig,
    data: &EncodedDataset,
    spec: &DeleteSpec,
    seed: u64,
    pool: &mut Pooled,
) -> Result<(), BenchError> {
    let dcfg = darn_config(cfg);
    let del_idx = data.column_index(&spec.column)?;
    let edges = histogram_edges(&data.schema()[del_idx])?;
    let all_rows: Vec<usize> = (0..data.len()).collect();
    let full_values: Vec<f64> =
        all_rows.iter().map(|&r| data.raw_num(del_idx, r).expect("numeric")).collect();
    let full_hist = build_histogram(&full_values, &edges).expect("rows nonempty");

    let mut model = DarnModel::build(data, dcfg.clone(), seed)?;
    let tcfg = cfg.train.train_config(seed)?;
    train_task(&mut model, data, &all_rows, &tcfg)?;
    let fresh = SplitState::fresh(data.clone());
    let s1 = eval_se_step(cfg, data, &fresh, None, &model, data.len() as f64, &full_hist, del_idx, &edges, seed, 0)?;
    pool.push_step(1, "train", s1.0, Some(s1.1));

    let split = apply_delete(data, spec, None)?;
    let ft_section = cfg.methods.iter().find(|m| m.id == "finetune").cloned();
    let ucfg = match ft_section {
        Some(s) => s.unlearn_config(&cfg.train, seed)?,
        None => crate::unlearn::UnlearnConfig::new(TrainConfig::new(
            5,
            cfg.train.batch_size,
            cfg.train.optim_config()?,
            seed,
        )),
    };
    let (model2, _) = fine_tune(&model, data, split.retain(), &ucfg.train)?;
    let s2 = eval_se_step(
        cfg,
        data,
        &split,
        Some(spec),
        &model2,
        split.retain().len() as f64,
        &full_hist,
        del_idx,
        &edges,
        seed,
        1,
    )?;
    pool.push_step(2, "delete", s2.0, Some(s2.1));

    let deleted_rows: Vec<Vec<Cell>> =
        split.delete().iter().map(|&r| data.decode_row(r)).collect();
    let restored = insert_rows(&split, &deleted_rows)?;
    let data3 = restored.data().clone();
    let mix: Vec<usize> = restored.retain().to_vec();
    let mut ucfg3 = ucfg.clone();
    ucfg3.train.seed = derive_seed(seed, 3);
    let (model3, _) = fine_tune(&model2, &data3, &mix, &ucfg3.train)?;
    let s3 = eval_se_step(
        cfg,
        &data3,
        &restored,
        None,
        &model3,
        restored.retain().len() as f64,
        &full_hist,
        del_idx,
        &edges,
        seed,
        2,
    )?;
    pool.push_step(3, "insert", s3.0, Some(s3.1));
    pool.seconds.push(0.0);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval_se_step(
    cfg: &ExperimentConfig,
    data: &EncodedDataset,
    split: &SplitState,
    delete_ctx: Option<&DeleteSpec>,
    model: &DarnModel,
    cardinality: f64,
    reference_hist: &Histogram,
    del_idx: usize,
    edges: &[f64],
    seed: u64,
    step: u64,
) -> Result<(BTreeMap<String, Vec<f64>>, f64), BenchError> {
    let qr = gen_workload_se(
        split,
        delete_ctx,
        WorkloadLabel::QueryRetain,
        cfg.workload.size,
        (cfg.workload.filter_count_lo, cfg.workload.filter_count_hi),
        derive_seed(derive_seed(seed, bench_streams::WORKLOAD_QR), step),
        &cfg.dataset.table_name,
    )?;
    let (by_key, _raw) = score_workload(&qr, |i, q| {
        let qseed = derive_seed(
            derive_seed(derive_seed(seed, bench_streams::SE_ANSWER), step),
            i as u64,
        );
        let mut rng = SeededRng::new(qseed, streams::SAMPLER);
        model.answer_count(data, cardinality, q, cfg.workload.n_samples, &mut rng)
    })?;

    let mut js_rng = SeededRng::new(
        derive_seed(derive_seed(seed, bench_streams::JS_SAMPLER), step),
        streams::SAMPLER,
    );
    let samples = model.sample_rows(cfg.workload.js_samples.min(5000), &mut js_rng)?;
    let values: Vec<f64> = samples.iter().map(|row| model.bin_value(del_idx, row[del_idx])).collect();
    let sample_hist = build_histogram(&values, edges).expect("nonempty samples");
    let js = js_divergence(reference_hist, &sample_hist)?;
    Ok((by_key, js))
}

/// Dispatch helper for the CLI: run whatever mode the config declares.
pub fn run(cfg: &ExperimentConfig) -> Result<RunRecord, BenchError> {
    match cfg.experiment.mode {
        Mode::OneGo => run_one_go(cfg),
        Mode::Sequential => run_sequential(cfg),
        Mode::InsertDelete => run_insert_delete(cfg),
    }
}

/// Re-emit plot CSVs for a persisted record directory.
pub fn emit_plots(dir: &Path) -> Result<Vec<std::path::PathBuf>, BenchError> {
    let record = RunRecord::load(dir)?;
    Ok(super::record::emit_plot_data(&record, dir)?)
}
