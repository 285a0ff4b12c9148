//! Run records: persisted experiment results, raw per-query outputs, and
//! plot-ready CSV bundles.

use super::ConfigError;
use crate::metrics::{ErrorStats, Histogram, MiaResult};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DcAccuracies {
    pub test: f64,
    pub retain: f64,
    pub forget: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub operation: String,
    pub workload_stats: BTreeMap<String, ErrorStats>,
    #[serde(default)]
    pub js: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MethodRecord {
    /// "ok" or the failure message; failures never abort the other methods.
    pub status: String,
    /// Keyed by `<label>_<agg>`, e.g. "qr_count".
    pub workload_stats: BTreeMap<String, ErrorStats>,
    #[serde(default)]
    pub likelihood_retain: Option<f64>,
    #[serde(default)]
    pub likelihood_delete: Option<f64>,
    #[serde(default)]
    pub js: Option<f64>,
    #[serde(default)]
    pub histogram: Option<Histogram>,
    #[serde(default)]
    pub accuracies: Option<DcAccuracies>,
    #[serde(default)]
    pub mia: Vec<MiaResult>,
    /// Mean wall-clock seconds to produce the method's checkpoint.
    pub unlearn_seconds: f64,
    #[serde(default)]
    pub speedup_vs_retrain: Option<f64>,
    /// Per-step series for sequential and insert/delete modes.
    #[serde(default)]
    pub steps: Vec<StepRecord>,
    /// Final-sequential over one-go error ratios, keyed like workload_stats.
    #[serde(default)]
    pub one_go_over_sequential: BTreeMap<String, f64>,
}

impl MethodRecord {
    pub fn failed(message: String) -> Self {
        MethodRecord { status: message, ..Default::default() }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub task: String,
    pub mode: String,
    pub config_digest: String,
    pub seeds: Vec<u64>,
    /// Documented substitutions and caveats baked into the run.
    #[serde(default)]
    pub notes: Vec<String>,
    /// The trained-on-everything model, where the mode reports it.
    #[serde(default)]
    pub original: Option<MethodRecord>,
    pub methods: BTreeMap<String, MethodRecord>,
    /// Digest over everything except wall-clock times.
    pub metrics_digest: String,
}

impl RunRecord {
    pub fn new(experiment: &str, task: &str, mode: &str, config_digest: &str, seeds: &[u64]) -> Self {
        RunRecord {
            experiment: experiment.into(),
            task: task.into(),
            mode: mode.into(),
            config_digest: config_digest.into(),
            seeds: seeds.to_vec(),
            notes: Vec::new(),
            original: None,
            methods: BTreeMap::new(),
            metrics_digest: String::new(),
        }
    }

    /// Compute the deterministic digest: timings are zeroed first because
    /// wall-clock never replays exactly, and the config digest is dropped
    /// so replays into a different output directory still compare equal.
    pub fn finalize(&mut self) {
        let mut redacted = self.clone();
        redacted.metrics_digest = String::new();
        redacted.config_digest = String::new();
        let scrub = |m: &mut MethodRecord| {
            m.unlearn_seconds = 0.0;
            m.speedup_vs_retrain = None;
        };
        if let Some(o) = redacted.original.as_mut() {
            scrub(o);
        }
        for m in redacted.methods.values_mut() {
            scrub(m);
        }
        let json = serde_json::to_string(&redacted).expect("record serializes");
        let hash = Sha256::digest(json.as_bytes());
        self.metrics_digest = hash.iter().take(16).map(|b| format!("{b:02x}")).collect();
    }

    pub fn save(&self, dir: &Path) -> Result<(), ConfigError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| ConfigError::Io(dir.display().to_string(), e.to_string()))?;
        let path = dir.join("record.json");
        let json = serde_json::to_string_pretty(self).expect("record serializes");
        std::fs::write(&path, json)
            .map_err(|e| ConfigError::Io(path.display().to_string(), e.to_string()))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ConfigError> {
        let path = dir.join("record.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| ConfigError::Io(path.display().to_string(), e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))
    }
}

/// One scored query: id, model estimate, exact truth, error.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RawQueryOutcome {
    pub query_id: usize,
    pub estimate: f64,
    pub truth: f64,
    pub error: f64,
}

/// Persist a workload as text (one rendered query per line) with a
/// ground-truth sidecar CSV.
pub fn write_workload(
    dir: &Path,
    name: &str,
    workload: &crate::query::Workload,
) -> Result<(), ConfigError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| ConfigError::Io(dir.display().to_string(), e.to_string()))?;
    let queries = dir.join(format!("{name}.sql"));
    let io_err = |p: &Path| {
        let p = p.display().to_string();
        move |e: std::io::Error| ConfigError::Io(p.clone(), e.to_string())
    };
    let text: String = workload
        .queries
        .iter()
        .map(crate::query::render)
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(&queries, text + "\n").map_err(io_err(&queries))?;
    let sidecar = dir.join(format!("{name}_truths.csv"));
    let mut f = std::fs::File::create(&sidecar).map_err(io_err(&sidecar))?;
    writeln!(f, "query_id,truth").map_err(io_err(&sidecar))?;
    for (i, t) in workload.truths.iter().enumerate() {
        writeln!(f, "{i},{t}").map_err(io_err(&sidecar))?;
    }
    Ok(())
}

pub fn write_raw_csv(path: &Path, rows: &[RawQueryOutcome]) -> Result<(), ConfigError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| ConfigError::Io(parent.display().to_string(), e.to_string()))?;
    }
    let io_err = |e: std::io::Error| ConfigError::Io(path.display().to_string(), e.to_string());
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    writeln!(f, "query_id,estimate,truth,error").map_err(io_err)?;
    for r in rows {
        writeln!(f, "{},{},{},{}", r.query_id, r.estimate, r.truth, r.error).map_err(io_err)?;
    }
    Ok(())
}

/// Emit plot-ready CSV bundles from a persisted record: per-method
/// histograms, per-step error series, and one-go/sequential ratios.
pub fn emit_plot_data(record: &RunRecord, dir: &Path) -> Result<Vec<std::path::PathBuf>, ConfigError> {
    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots)
        .map_err(|e| ConfigError::Io(plots.display().to_string(), e.to_string()))?;
    let mut written = Vec::new();

    let entries: Vec<(String, &MethodRecord)> = record
        .original
        .iter()
        .map(|m| ("original".to_string(), m))
        .chain(record.methods.iter().map(|(k, v)| (k.clone(), v)))
        .collect();

    for (name, method) in &entries {
        if let Some(h) = &method.histogram {
            let path = plots.join(format!("histogram_{name}.csv"));
            let io_err =
                |e: std::io::Error| ConfigError::Io(path.display().to_string(), e.to_string());
            let mut f = std::fs::File::create(&path).map_err(io_err)?;
            writeln!(f, "bin_lo,bin_hi,mass").map_err(io_err)?;
            for (i, &m) in method.histogram.as_ref().unwrap().mass.iter().enumerate() {
                writeln!(f, "{},{},{}", h.edges[i], h.edges[i + 1], m).map_err(io_err)?;
            }
            written.push(path);
        }
        if !method.steps.is_empty() {
            let path = plots.join(format!("steps_{name}.csv"));
            let io_err =
                |e: std::io::Error| ConfigError::Io(path.display().to_string(), e.to_string());
            let mut f = std::fs::File::create(&path).map_err(io_err)?;
            writeln!(f, "step,operation,metric,mean,median,p95,ci_half_width,n,js").map_err(io_err)?;
            for s in &method.steps {
                for (metric, stats) in &s.workload_stats {
                    writeln!(
                        f,
                        "{},{},{},{},{},{},{},{},{}",
                        s.step,
                        s.operation,
                        metric,
                        stats.mean,
                        stats.median,
                        stats.p95,
                        stats.ci_half_width,
                        stats.n,
                        s.js.map(|v| v.to_string()).unwrap_or_default()
                    )
                    .map_err(io_err)?;
                }
            }
            written.push(path);
        }
        if !method.one_go_over_sequential.is_empty() {
            let path = plots.join(format!("ratio_{name}.csv"));
            let io_err =
                |e: std::io::Error| ConfigError::Io(path.display().to_string(), e.to_string());
            let mut f = std::fs::File::create(&path).map_err(io_err)?;
            writeln!(f, "metric,one_go_over_sequential").map_err(io_err)?;
            for (metric, ratio) in &method.one_go_over_sequential {
                writeln!(f, "{metric},{ratio}").map_err(io_err)?;
            }
            written.push(path);
        }
    }
    Ok(written)
}
