//! Config-file driven experiment definitions (TOML).

use crate::autodiff::{OptMethod, OptimConfig};
use crate::data::{ColumnKind, DeleteMode, DeletePredicate, DeleteSpec};
use crate::unlearn::{Method, TrainConfig, UnlearnConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {0}: {1}")]
    Io(String, String),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Aqp,
    Se,
    Dc,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Aqp => "aqp",
            Task::Se => "se",
            Task::Dc => "dc",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OneGo,
    Sequential,
    InsertDelete,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::OneGo => "one_go",
            Mode::Sequential => "sequential",
            Mode::InsertDelete => "insert_delete",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSection {
    pub name: String,
    pub task: Task,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

fn default_mode() -> Mode {
    Mode::OneGo
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSection {
    /// CSV path; alternatively a builtin synthetic fixture.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// "census" or "blobs" with builtin_rows rows.
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default = "default_rows")]
    pub builtin_rows: usize,
    #[serde(default = "default_builtin_seed")]
    pub builtin_seed: u64,
    /// Blob overlap for the "blobs" builtin.
    #[serde(default = "default_spread")]
    pub builtin_spread: f64,
    #[serde(default = "default_table")]
    pub table_name: String,
    /// Column-kind overrides: [["zip", "categorical"]].
    #[serde(default)]
    pub hints: Vec<(String, String)>,
}

fn default_rows() -> usize {
    10_000
}

fn default_builtin_seed() -> u64 {
    0
}

fn default_spread() -> f64 {
    0.6
}

fn default_table() -> String {
    "census".into()
}

impl DatasetSection {
    pub fn kind_hints(&self) -> Result<Vec<(String, ColumnKind)>, ConfigError> {
        self.hints
            .iter()
            .map(|(name, kind)| {
                let k = match kind.as_str() {
                    "categorical" => ColumnKind::Categorical,
                    "numerical" => ColumnKind::Numerical,
                    other => {
                        return Err(ConfigError::Invalid(format!("unknown column kind '{other}'")))
                    }
                };
                Ok((name.clone(), k))
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeleteSection {
    pub column: String,
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
    /// Categorical equality delete (class unlearning).
    #[serde(default)]
    pub value: Option<String>,
    #[serde(default = "default_delete_mode")]
    pub mode: String,
    #[serde(default = "default_modulus")]
    pub selective_modulus: u64,
    #[serde(default = "default_residues")]
    pub selective_residues: Vec<u64>,
}

fn default_delete_mode() -> String {
    "full".into()
}

fn default_modulus() -> u64 {
    2
}

fn default_residues() -> Vec<u64> {
    vec![0]
}

impl DeleteSection {
    pub fn to_spec(&self) -> Result<DeleteSpec, ConfigError> {
        let predicate = match (&self.value, self.lo, self.hi) {
            (Some(v), None, None) => DeletePredicate::CategoryEquals { value: v.clone() },
            (None, Some(lo), Some(hi)) => DeletePredicate::NumericRange { lo, hi },
            _ => {
                return Err(ConfigError::Invalid(
                    "delete needs either lo+hi or value".into(),
                ))
            }
        };
        let mode = match self.mode.as_str() {
            "full" => DeleteMode::Full,
            "selective" => DeleteMode::Selective {
                modulus: self.selective_modulus,
                residues: self.selective_residues.clone(),
            },
            other => return Err(ConfigError::Invalid(format!("unknown delete mode '{other}'"))),
        };
        let spec = DeleteSpec { column: self.column.clone(), predicate, mode };
        spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSection {
    // aqp
    #[serde(default)]
    pub cat_col: Option<String>,
    #[serde(default)]
    pub num_col: Option<String>,
    #[serde(default = "default_components")]
    pub components: usize,
    // dc
    #[serde(default)]
    pub label_col: Option<String>,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    // se
    #[serde(default = "default_max_bins")]
    pub max_bins: usize,
    // shared
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
}

fn default_components() -> usize {
    30
}

fn default_blocks() -> usize {
    4
}

fn default_max_bins() -> usize {
    64
}

fn default_hidden() -> usize {
    128
}

fn default_layers() -> usize {
    2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSection {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: String,
    /// (epoch, factor) pairs.
    #[serde(default = "default_decay")]
    pub decay: Vec<(usize, f64)>,
}

fn default_epochs() -> usize {
    50
}

fn default_batch() -> usize {
    128
}

fn default_lr() -> f64 {
    0.001
}

fn default_optimizer() -> String {
    "adam".into()
}

fn default_decay() -> Vec<(usize, f64)> {
    vec![(10, 0.1), (20, 0.1), (30, 0.1)]
}

impl TrainSection {
    pub fn optim_config(&self) -> Result<OptimConfig, ConfigError> {
        let method = match self.optimizer.as_str() {
            "adam" => OptMethod::Adam,
            "sgd" => OptMethod::Sgd,
            other => return Err(ConfigError::Invalid(format!("unknown optimizer '{other}'"))),
        };
        Ok(OptimConfig { method, lr: self.lr, decay: self.decay.clone() })
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig, ConfigError> {
        Ok(TrainConfig::new(self.epochs, self.batch_size, self.optim_config()?, seed))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorkloadSection {
    #[serde(default = "default_workload_size")]
    pub size: usize,
    #[serde(default = "default_filter_lo")]
    pub filter_count_lo: usize,
    #[serde(default = "default_filter_hi")]
    pub filter_count_hi: usize,
    /// Progressive-sampling budget for SE answers.
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    /// Samples drawn per model for histogram comparisons.
    #[serde(default = "default_js_samples")]
    pub js_samples: usize,
}

fn default_workload_size() -> usize {
    2000
}

fn default_filter_lo() -> usize {
    5
}

fn default_filter_hi() -> usize {
    12
}

fn default_n_samples() -> usize {
    2000
}

fn default_js_samples() -> usize {
    20_000
}

/// Per-method overrides of the unlearning hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodSection {
    pub id: String,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub clip: Option<f64>,
    #[serde(default)]
    pub decay: Option<Vec<(usize, f64)>>,
    #[serde(default)]
    pub scrub_task_loss: Option<bool>,
    // sisa
    #[serde(default)]
    pub partitions: Option<usize>,
    #[serde(default)]
    pub slices: Option<usize>,
    #[serde(default)]
    pub epochs_per_slice: Option<usize>,
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub components: Option<usize>,
}

impl MethodSection {
    pub fn method(&self) -> Result<Method, ConfigError> {
        Method::from_id(&self.id)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown method id '{}'", self.id)))
    }

    /// Default unlearning epochs per method: 2 for pure gradient ascent,
    /// 5 otherwise.
    fn default_epochs(method: Method) -> usize {
        match method {
            Method::NegGrad => 2,
            _ => 5,
        }
    }

    pub fn unlearn_config(
        &self,
        base: &TrainSection,
        seed: u64,
    ) -> Result<UnlearnConfig, ConfigError> {
        let method = self.method()?;
        let mut optim = base.optim_config()?;
        if let Some(lr) = self.lr {
            optim.lr = lr;
        }
        // unlearning runs are short; the long-horizon decay schedule does
        // not apply unless explicitly configured
        optim.decay = self.decay.clone().unwrap_or_default();
        let mut train = TrainConfig::new(
            self.epochs.unwrap_or_else(|| Self::default_epochs(method)),
            self.batch_size.unwrap_or(base.batch_size),
            optim,
            seed,
        );
        // ascent explodes without a norm cap
        train.clip = self.clip.or(match method {
            Method::NegGrad => Some(5.0),
            _ => None,
        });
        let mut cfg = UnlearnConfig::new(train);
        if let Some(beta) = self.beta {
            cfg.beta = beta;
        }
        if let Some(flag) = self.scrub_task_loss {
            cfg.scrub_task_loss = flag;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SequentialSection {
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_steps() -> usize {
    5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MiaSection {
    #[serde(default = "default_folds")]
    pub folds: usize,
}

fn default_folds() -> usize {
    5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub dataset: DatasetSection,
    pub delete: DeleteSection,
    pub model: ModelSection,
    pub train: TrainSection,
    #[serde(default = "default_workload_section")]
    pub workload: WorkloadSection,
    #[serde(rename = "method")]
    pub methods: Vec<MethodSection>,
    #[serde(default)]
    pub sequential: Option<SequentialSection>,
    #[serde(default)]
    pub mia: Option<MiaSection>,
}

fn default_workload_section() -> WorkloadSection {
    WorkloadSection {
        size: default_workload_size(),
        filter_count_lo: default_filter_lo(),
        filter_count_hi: default_filter_hi(),
        n_samples: default_n_samples(),
        js_samples: default_js_samples(),
    }
}

impl ExperimentConfig {
    pub fn from_str_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(path.display().to_string(), e.to_string()))?;
        Self::from_str_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.experiment.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must be non-empty".into()));
        }
        if self.methods.is_empty() {
            return Err(ConfigError::Invalid("methods list must be non-empty".into()));
        }
        for m in &self.methods {
            m.method()?;
        }
        if self.dataset.path.is_none() && self.dataset.builtin.is_none() {
            return Err(ConfigError::Invalid("dataset needs a path or a builtin".into()));
        }
        self.delete.to_spec()?;
        match self.experiment.task {
            Task::Aqp => {
                if self.model.cat_col.is_none() || self.model.num_col.is_none() {
                    return Err(ConfigError::Invalid("aqp needs cat_col and num_col".into()));
                }
            }
            Task::Dc => {
                if self.model.label_col.is_none() {
                    return Err(ConfigError::Invalid("dc needs label_col".into()));
                }
            }
            Task::Se => {}
        }
        if self.experiment.mode == Mode::Sequential {
            let steps = self.sequential.as_ref().map(|s| s.steps).unwrap_or(default_steps());
            if steps < 2 {
                return Err(ConfigError::Invalid("sequential mode needs steps >= 2".into()));
            }
        }
        Ok(())
    }

    /// Stable digest of the full configuration.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
