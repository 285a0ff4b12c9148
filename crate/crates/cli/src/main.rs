//! Command-line front end for the unlearning benchmark.
//!
//! `run`, `sequential`, and `insert-delete` execute full config-driven
//! pipelines. `train`, `delete`, `unlearn`, and `eval` are the staged
//! variants of the same flow: they persist checkpoints, the retain/delete
//! partition, and metric summaries under the config's output directory so
//! each stage can be inspected or rerun in isolation (single-model methods
//! only; the SISA ensemble needs the slice provenance that only the full
//! `run` pipeline carries).
//!
//! Environment overrides: `LETHE_OUTPUT_DIR` redirects all outputs,
//! `LETHE_SEED` replaces the config's seed list with a single seed.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use lethe_core::autodiff::{derive_seed, streams, SeededRng};
use lethe_core::bench::{self, ExperimentConfig, Task};
use lethe_core::data::{
    apply_delete, update_metadata, DeleteSpec, EncodedDataset, FrequencyTable, SplitState,
};
use lethe_core::metrics::{avg_likelihood, summarize};
use lethe_core::models::{
    accuracy, read_checkpoint, write_checkpoint, ClassifierConfig, ClassifierModel, DarnConfig,
    DarnModel, GradientModel, MdnConfig, MdnModel, Role,
};
use lethe_core::query::{gen_workload_aqp, gen_workload_se, Workload, WorkloadLabel};
use lethe_core::unlearn::{
    fine_tune, neg_grad, neg_grad_plus, retrain, scrub, stale, train_task, Method,
};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "lethe",
    about = "Machine unlearning benchmark for learned database components",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the original model and persist its checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Apply the configured delete and update the table meta-data.
    Delete {
        #[arg(long)]
        config: PathBuf,
    },
    /// Produce one unlearned checkpoint from the trained original.
    Unlearn {
        #[arg(long)]
        config: PathBuf,
        /// retrain | stale | finetune | neggrad | neggrad_plus | scrub
        #[arg(long)]
        method: String,
    },
    /// Evaluate all persisted checkpoints on fresh workloads.
    Eval {
        #[arg(long)]
        config: PathBuf,
    },
    /// Full pipeline for the config's mode (one-go by default).
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sequential deletion in k steps.
    Sequential {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Delete then reinsert the same rows, measuring each step.
    InsertDelete {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-emit plot CSVs from a persisted run record.
    EmitPlots {
        /// Run directory containing record.json.
        #[arg(long)]
        dir: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path)
        .with_context(|| format!("loading config {}", path.display()))?;
    if let Ok(dir) = std::env::var("LETHE_OUTPUT_DIR") {
        cfg.experiment.output_dir = PathBuf::from(dir);
    }
    if let Ok(seed) = std::env::var("LETHE_SEED") {
        let seed: u64 = seed.parse().context("LETHE_SEED must be an integer")?;
        cfg.experiment.seeds = vec![seed];
    }
    Ok(cfg)
}

/// A single model of whichever family the task calls for.
enum TaskModel {
    Mdn(MdnModel),
    Darn(DarnModel),
    Classifier(ClassifierModel),
}

impl TaskModel {
    fn build(cfg: &ExperimentConfig, data: &EncodedDataset, seed: u64) -> Result<Self> {
        Ok(match cfg.experiment.task {
            Task::Aqp => TaskModel::Mdn(MdnModel::build(
                data,
                MdnConfig {
                    cat_col: cfg.model.cat_col.clone().ok_or_else(|| anyhow!("aqp needs cat_col"))?,
                    num_col: cfg.model.num_col.clone().ok_or_else(|| anyhow!("aqp needs num_col"))?,
                    hidden: cfg.model.hidden,
                    layers: cfg.model.layers,
                    components: cfg.model.components,
                    sigma_mode: Default::default(),
                },
                seed,
            )?),
            Task::Se => TaskModel::Darn(DarnModel::build(
                data,
                DarnConfig {
                    hidden: cfg.model.hidden,
                    layers: cfg.model.layers,
                    max_bins: cfg.model.max_bins,
                },
                seed,
            )?),
            Task::Dc => TaskModel::Classifier(ClassifierModel::build(
                data,
                ClassifierConfig {
                    label_col: cfg
                        .model
                        .label_col
                        .clone()
                        .ok_or_else(|| anyhow!("dc needs label_col"))?,
                    hidden: cfg.model.hidden,
                    blocks: cfg.model.blocks,
                },
                seed,
            )?),
        })
    }

    fn params(&self) -> &[f64] {
        match self {
            TaskModel::Mdn(m) => m.params(),
            TaskModel::Darn(m) => m.params(),
            TaskModel::Classifier(m) => m.params(),
        }
    }

    fn set_params(&mut self, params: Vec<f64>, role: Role) {
        match self {
            TaskModel::Mdn(m) => {
                *m.params_mut() = params;
                m.set_role(role);
            }
            TaskModel::Darn(m) => {
                *m.params_mut() = params;
                m.set_role(role);
            }
            TaskModel::Classifier(m) => {
                *m.params_mut() = params;
                m.set_role(role);
            }
        }
    }

    fn header(&self) -> lethe_core::models::CheckpointHeader {
        match self {
            TaskModel::Mdn(m) => m.checkpoint_header(),
            TaskModel::Darn(m) => m.checkpoint_header(),
            TaskModel::Classifier(m) => m.checkpoint_header(),
        }
    }
}

struct Stage {
    cfg: ExperimentConfig,
    data: EncodedDataset,
    seed: u64,
}

impl Stage {
    fn open(config_path: &Path) -> Result<Self> {
        let cfg = load_config(config_path)?;
        let data = bench::load_dataset(&cfg)?;
        let seed = cfg.experiment.seeds[0];
        Ok(Stage { cfg, data, seed })
    }

    fn state_dir(&self) -> PathBuf {
        self.cfg.experiment.output_dir.join("state")
    }

    fn ckpt_dir(&self) -> PathBuf {
        self.cfg.experiment.output_dir.join("checkpoints").join(format!("seed{}", self.seed))
    }

    fn train_rows(&self) -> Result<Vec<usize>> {
        Ok(match self.cfg.experiment.task {
            Task::Dc => {
                lethe_core::data::split_train_val_test(self.data.len(), (0.8, 0.1, 0.1), self.seed)?
                    .train
            }
            _ => (0..self.data.len()).collect(),
        })
    }

    fn load_split(&self) -> Result<(SplitState, DeleteSpec)> {
        let path = self.state_dir().join("split.json");
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("{} (run `lethe delete` first)", path.display()))?;
        let saved: SavedSplit = serde_json::from_str(&text)?;
        let spec = saved.spec.clone();
        let split = apply_delete(&self.data, &spec, None)?;
        // sanity: the persisted partition must match the recomputed one
        if split.delete() != saved.delete.as_slice() {
            bail!("persisted split is stale; rerun `lethe delete`");
        }
        Ok((split, spec))
    }

    fn load_model(&self, name: &str) -> Result<TaskModel> {
        let path = self.ckpt_dir().join(format!("{name}.ckpt"));
        let (header, params) = read_checkpoint(&path)
            .with_context(|| format!("{} (run earlier stages first)", path.display()))?;
        let mut model = TaskModel::build(&self.cfg, &self.data, header.seed)?;
        if model.params().len() != params.len() {
            bail!("checkpoint {} does not fit the configured architecture", path.display());
        }
        model.set_params(params, header.role);
        Ok(model)
    }

    fn save_model(&self, name: &str, model: &TaskModel) -> Result<()> {
        std::fs::create_dir_all(self.ckpt_dir())?;
        let path = self.ckpt_dir().join(format!("{name}.ckpt"));
        write_checkpoint(&path, &model.header(), model.params())?;
        println!("wrote {}", path.display());
        Ok(())
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct SavedSplit {
    spec: DeleteSpec,
    retain: Vec<usize>,
    delete: Vec<usize>,
    retained_cardinality: usize,
}

fn cmd_train(config: &Path) -> Result<()> {
    let stage = Stage::open(config)?;
    let rows = stage.train_rows()?;
    let mut model = TaskModel::build(&stage.cfg, &stage.data, stage.seed)?;
    let tcfg = stage.cfg.train.train_config(stage.seed)?;
    let trace = match &mut model {
        TaskModel::Mdn(m) => train_task(m, &stage.data, &rows, &tcfg)?,
        TaskModel::Darn(m) => train_task(m, &stage.data, &rows, &tcfg)?,
        TaskModel::Classifier(m) => {
            lethe_core::models::ensure_multiclass(m, &stage.data, &rows)?;
            train_task(m, &stage.data, &rows, &tcfg)?
        }
    };
    match &mut model {
        TaskModel::Mdn(m) => m.set_role(Role::Original),
        TaskModel::Darn(m) => m.set_role(Role::Original),
        TaskModel::Classifier(m) => m.set_role(Role::Original),
    }
    println!(
        "trained original: {} epochs, final loss {:.6}, {:.2}s",
        trace.epoch_losses.len(),
        trace.epoch_losses.last().copied().unwrap_or(f64::NAN),
        trace.seconds
    );
    stage.save_model("original", &model)
}

fn cmd_delete(config: &Path) -> Result<()> {
    let stage = Stage::open(config)?;
    let spec = stage.cfg.delete.to_spec()?;
    let split = apply_delete(&stage.data, &spec, None)?;
    std::fs::create_dir_all(stage.state_dir())?;
    let saved = SavedSplit {
        spec: spec.clone(),
        retain: split.retain().to_vec(),
        delete: split.delete().to_vec(),
        retained_cardinality: split.retain().len(),
    };
    std::fs::write(stage.state_dir().join("split.json"), serde_json::to_string_pretty(&saved)?)?;
    if let Some(cat_col) = &stage.cfg.model.cat_col {
        let all: Vec<usize> = (0..stage.data.len()).collect();
        let full = FrequencyTable::build(&stage.data, cat_col, &all)?;
        let updated = update_metadata(&full, &split)?;
        std::fs::write(
            stage.state_dir().join("freq.json"),
            serde_json::to_string_pretty(&updated)?,
        )?;
    }
    println!(
        "delete applied: {} rows deleted, {} retained",
        split.delete().len(),
        split.retain().len()
    );
    Ok(())
}

fn cmd_unlearn(config: &Path, method_id: &str) -> Result<()> {
    let stage = Stage::open(config)?;
    let method =
        Method::from_id(method_id).ok_or_else(|| anyhow!("unknown method '{method_id}'"))?;
    if method == Method::Sisa {
        bail!("the SISA ensemble runs through `lethe run`; staged unlearning covers single models");
    }
    let (split, _) = stage.load_split()?;
    let original = stage.load_model("original")?;
    let section = stage
        .cfg
        .methods
        .iter()
        .find(|m| m.id == method_id)
        .cloned()
        .unwrap_or_else(|| default_section(method_id));
    let ucfg = section.unlearn_config(&stage.cfg.train, stage.seed)?;
    let (retain, delete) = match stage.cfg.experiment.task {
        Task::Dc => {
            let train = stage.train_rows()?;
            let deleted: std::collections::BTreeSet<usize> =
                split.delete().iter().copied().collect();
            let forget: Vec<usize> =
                train.iter().copied().filter(|r| deleted.contains(r)).collect();
            let keep: Vec<usize> =
                train.iter().copied().filter(|r| !deleted.contains(r)).collect();
            (keep, forget)
        }
        _ => (split.retain().to_vec(), split.delete().to_vec()),
    };

    macro_rules! dispatch {
        ($m:expr, $wrap:path) => {{
            let unlearned = match method {
                Method::Retrain => {
                    let base = stage.cfg.train.train_config(stage.seed)?;
                    retrain($m, &stage.data, &retain, &base, stage.seed)?.0
                }
                Method::Stale => stale($m),
                Method::FineTune => fine_tune($m, &stage.data, &retain, &ucfg.train)?.0,
                Method::NegGrad => neg_grad($m, &stage.data, &delete, &ucfg.train)?.0,
                Method::NegGradPlus => neg_grad_plus($m, &stage.data, &retain, &delete, &ucfg)?.0,
                Method::Scrub => scrub($m, &stage.data, &retain, &delete, &ucfg)?.0,
                Method::Sisa => unreachable!(),
            };
            $wrap(unlearned)
        }};
    }
    let unlearned = match &original {
        TaskModel::Mdn(m) => dispatch!(m, TaskModel::Mdn),
        TaskModel::Darn(m) => dispatch!(m, TaskModel::Darn),
        TaskModel::Classifier(m) => dispatch!(m, TaskModel::Classifier),
    };
    stage.save_model(method_id, &unlearned)
}

fn default_section(id: &str) -> bench::MethodSection {
    bench::MethodSection {
        id: id.to_string(),
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
    }
}

fn cmd_eval(config: &Path) -> Result<()> {
    let stage = Stage::open(config)?;
    let (split, spec) = stage.load_split()?;
    let mut summary: BTreeMap<String, BTreeMap<String, serde_json::Value>> = BTreeMap::new();

    let mut checkpoint_names: Vec<String> = Vec::new();
    for entry in
        std::fs::read_dir(stage.ckpt_dir()).context("no checkpoints; run `lethe train`")?
    {
        let name = entry?.path();
        if name.extension().map(|e| e == "ckpt").unwrap_or(false) {
            checkpoint_names.push(name.file_stem().unwrap().to_string_lossy().to_string());
        }
    }
    checkpoint_names.sort();

    match stage.cfg.experiment.task {
        Task::Aqp => {
            let cat_col = stage.cfg.model.cat_col.clone().unwrap();
            let num_col = stage.cfg.model.num_col.clone().unwrap();
            let all: Vec<usize> = (0..stage.data.len()).collect();
            let full = FrequencyTable::build(&stage.data, &cat_col, &all)?;
            let ft = update_metadata(&full, &split)?;
            let workloads = [
                gen_workload_aqp(
                    &split,
                    Some(&spec),
                    WorkloadLabel::QueryRetain,
                    (&cat_col, &num_col),
                    stage.cfg.workload.size,
                    derive_seed(stage.seed, 100),
                    &stage.cfg.dataset.table_name,
                )?,
                gen_workload_aqp(
                    &split,
                    Some(&spec),
                    WorkloadLabel::QueryDelete,
                    (&cat_col, &num_col),
                    stage.cfg.workload.size,
                    derive_seed(stage.seed, 101),
                    &stage.cfg.dataset.table_name,
                )?,
            ];
            for name in &checkpoint_names {
                let TaskModel::Mdn(model) = stage.load_model(name)? else { continue };
                let entry = summary.entry(name.clone()).or_default();
                score_into(entry, &workloads, |q| Ok(model.aqp_answer(&ft, q)?))?;
                entry.insert(
                    "likelihood_retain".into(),
                    avg_likelihood(&model, &stage.data, split.retain())?.into(),
                );
                entry.insert(
                    "likelihood_delete".into(),
                    avg_likelihood(&model, &stage.data, split.delete())?.into(),
                );
            }
        }
        Task::Se => {
            let workloads = [
                gen_workload_se(
                    &split,
                    Some(&spec),
                    WorkloadLabel::QueryRetain,
                    stage.cfg.workload.size,
                    (stage.cfg.workload.filter_count_lo, stage.cfg.workload.filter_count_hi),
                    derive_seed(stage.seed, 100),
                    &stage.cfg.dataset.table_name,
                )?,
                gen_workload_se(
                    &split,
                    Some(&spec),
                    WorkloadLabel::QueryDelete,
                    stage.cfg.workload.size,
                    (stage.cfg.workload.filter_count_lo, stage.cfg.workload.filter_count_hi),
                    derive_seed(stage.seed, 101),
                    &stage.cfg.dataset.table_name,
                )?,
            ];
            let cardinality = split.retain().len() as f64;
            for name in &checkpoint_names {
                let TaskModel::Darn(model) = stage.load_model(name)? else { continue };
                let entry = summary.entry(name.clone()).or_default();
                let n_samples = stage.cfg.workload.n_samples;
                let seed = stage.seed;
                score_into(entry, &workloads, |q| {
                    let mut rng = SeededRng::new(derive_seed(seed, 7), streams::SAMPLER);
                    Ok(model.answer_count(&stage.data, cardinality, q, n_samples, &mut rng)?)
                })?;
            }
        }
        Task::Dc => {
            let splits = lethe_core::data::split_train_val_test(
                stage.data.len(),
                (0.8, 0.1, 0.1),
                stage.seed,
            )?;
            let deleted: std::collections::BTreeSet<usize> =
                split.delete().iter().copied().collect();
            let forget: Vec<usize> =
                splits.train.iter().copied().filter(|r| deleted.contains(r)).collect();
            let keep: Vec<usize> =
                splits.train.iter().copied().filter(|r| !deleted.contains(r)).collect();
            for name in &checkpoint_names {
                let TaskModel::Classifier(model) = stage.load_model(name)? else { continue };
                let entry = summary.entry(name.clone()).or_default();
                entry.insert(
                    "test_accuracy".into(),
                    accuracy(&model, &stage.data, &splits.test)?.into(),
                );
                entry.insert(
                    "retain_accuracy".into(),
                    accuracy(&model, &stage.data, &keep)?.into(),
                );
                entry.insert(
                    "forget_accuracy".into(),
                    accuracy(&model, &stage.data, &forget)?.into(),
                );
            }
        }
    }

    let path = stage.cfg.experiment.output_dir.join("eval.json");
    std::fs::create_dir_all(&stage.cfg.experiment.output_dir)?;
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn score_into(
    entry: &mut BTreeMap<String, serde_json::Value>,
    workloads: &[Workload],
    mut estimate: impl FnMut(&lethe_core::query::QuerySpec) -> Result<f64>,
) -> Result<()> {
    for w in workloads {
        let mut by_key: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (q, &truth) in w.queries.iter().zip(w.truths.iter()) {
            let est = estimate(q)?;
            let err = if truth > 0.0 {
                lethe_core::metrics::relative_error(est, truth)?
            } else {
                lethe_core::metrics::absolute_error(est, truth)
            };
            let agg = q.agg_kind().expect("aggregate").name();
            by_key.entry(format!("{}_{agg}", w.label.name())).or_default().push(err);
        }
        for (key, errors) in by_key {
            let stats = summarize(&errors)?;
            entry.insert(key, serde_json::to_value(stats)?);
        }
    }
    Ok(())
}

fn print_record_summary(record: &bench::RunRecord) {
    println!(
        "experiment {} [{} / {}] digest {}",
        record.experiment, record.task, record.mode, record.metrics_digest
    );
    for (id, m) in &record.methods {
        if !m.is_ok() {
            println!("  {id}: FAILED ({})", m.status);
            continue;
        }
        let mut parts = Vec::new();
        for (k, s) in &m.workload_stats {
            parts.push(format!("{k} {:.2}±{:.2}", s.mean, s.ci_half_width));
        }
        if let (Some(lr), Some(ld)) = (m.likelihood_retain, m.likelihood_delete) {
            parts.push(format!("lik {lr:.3}/{ld:.3}"));
        }
        if let Some(js) = m.js {
            parts.push(format!("js {js:.4}"));
        }
        if let Some(acc) = &m.accuracies {
            parts.push(format!(
                "acc test {:.2} retain {:.2} forget {:.2}",
                acc.test, acc.retain, acc.forget
            ));
        }
        if let Some(sp) = m.speedup_vs_retrain {
            parts.push(format!("speedup {sp:.1}x"));
        }
        println!("  {id}: {}", parts.join(" | "));
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { config } => cmd_train(&config),
        Command::Delete { config } => cmd_delete(&config),
        Command::Unlearn { config, method } => cmd_unlearn(&config, &method),
        Command::Eval { config } => cmd_eval(&config),
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let record = bench::run(&cfg)?;
            print_record_summary(&record);
            Ok(())
        }
        Command::Sequential { config, steps } => {
            let mut cfg = load_config(&config)?;
            cfg.experiment.mode = bench::Mode::Sequential;
            if let Some(k) = steps {
                cfg.sequential = Some(bench::SequentialSection { steps: k });
            }
            let record = bench::run_sequential(&cfg)?;
            print_record_summary(&record);
            Ok(())
        }
        Command::InsertDelete { config } => {
            let mut cfg = load_config(&config)?;
            cfg.experiment.mode = bench::Mode::InsertDelete;
            let record = bench::run_insert_delete(&cfg)?;
            print_record_summary(&record);
            Ok(())
        }
        Command::EmitPlots { dir } => {
            let written = bench::emit_plots(&dir)?;
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}
