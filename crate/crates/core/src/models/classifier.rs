//! Residual MLP classifier over tabular rows.
//!
//! Features are the one-hot categorical and normalized numerical columns
//! (label excluded); the trunk is a linear projection followed by residual
//! blocks (linear -> relu -> linear + skip); training minimizes softmax
//! cross-entropy. Also the target of the membership-inference attacks,
//! via per-row loss and confidence signals.

use super::{CheckpointHeader, GradientModel, ModelError, Role};
use crate::autodiff::{init_params, streams, Graph, GraphBuilder, Matrix, NodeId, SeededRng};
use crate::data::{Domain, EncodedDataset};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub label_col: String,
    pub hidden: usize,
    pub blocks: usize,
}

impl ClassifierConfig {
    pub fn new(label_col: &str) -> Self {
        ClassifierConfig { label_col: label_col.into(), hidden: 128, blocks: 4 }
    }
}

#[derive(Clone, Copy, Debug)]
struct ClassifierNodes {
    probs: NodeId,
    row_loss: NodeId,
}

#[derive(Clone, Debug)]
pub struct ClassifierModel {
    cfg: ClassifierConfig,
    label_idx: usize,
    /// (column index, one-hot width or 1 for numerical)
    feature_cols: Vec<(usize, usize)>,
    feature_width: usize,
    n_classes: usize,
    domain_digest: String,
    graph: Graph,
    nodes: ClassifierNodes,
    scrub: Graph,
    params: Vec<f64>,
    role: Role,
    seed: u64,
}

fn build_trunk(b: &mut GraphBuilder, x: NodeId, feature_width: usize, cfg: &ClassifierConfig, n_classes: usize) -> NodeId {
    let mut h = b.dense(x, feature_width, cfg.hidden);
    h = b.relu(h);
    for _ in 0..cfg.blocks {
        let inner = b.dense(h, cfg.hidden, cfg.hidden);
        let inner = b.relu(inner);
        let inner = b.dense(inner, cfg.hidden, cfg.hidden);
        h = b.add(h, inner);
    }
    b.dense(h, cfg.hidden, n_classes)
}

impl ClassifierModel {
    pub fn build(data: &EncodedDataset, cfg: ClassifierConfig, seed: u64) -> Result<Self, ModelError> {
        let label_idx = data.column_index(&cfg.label_col)?;
        let n_classes = match &data.schema()[label_idx].domain {
            Domain::Categorical(vals) => vals.len(),
            _ => {
                return Err(ModelError::Invalid(format!(
                    "label column '{}' must be categorical",
                    cfg.label_col
                )))
            }
        };
        let mut feature_cols = Vec::new();
        let mut feature_width = 0;
        for (idx, col) in data.schema().iter().enumerate() {
            if idx == label_idx {
                continue;
            }
            let width = match &col.domain {
                Domain::Categorical(vals) => vals.len(),
                Domain::Numerical { .. } => 1,
            };
            feature_cols.push((idx, width));
            feature_width += width;
        }

        // loss graph
        let mut b = GraphBuilder::new();
        let x = b.input(feature_width);
        let onehot = b.input(n_classes);
        let logits = build_trunk(&mut b, x, feature_width, &cfg, n_classes);
        let log_probs = b.log_softmax(logits);
        let probs = b.softmax(logits);
        let picked = b.mul(log_probs, onehot);
        let picked_sum = b.row_sum(picked);
        let row_loss = b.scale(picked_sum, -1.0);
        let mean = b.mean_all(row_loss);
        let nodes = ClassifierNodes { probs, row_loss };
        let graph = b.finish(mean);

        // scrub graph: KL(teacher probs || student probs)
        let mut sb = GraphBuilder::new();
        let sx = sb.input(feature_width);
        let t_probs = sb.input(n_classes);
        let s_logits = build_trunk(&mut sb, sx, feature_width, &cfg, n_classes);
        let s_log_probs = sb.log_softmax(s_logits);
        let t_ln = sb.ln(t_probs);
        let diff = sb.sub(t_ln, s_log_probs);
        let w = sb.mul(t_probs, diff);
        let kl_row = sb.row_sum(w);
        let d_mean = sb.mean_all(kl_row);
        let scrub = sb.finish(d_mean);
        debug_assert_eq!(graph.param_len(), scrub.param_len());

        let mut rng = SeededRng::new(seed, streams::INIT);
        let params = init_params(&graph, &mut rng);
        Ok(ClassifierModel {
            domain_digest: data.domain_digest(),
            cfg,
            label_idx,
            feature_cols,
            feature_width,
            n_classes,
            graph,
            nodes,
            scrub,
            params,
            role: Role::Random,
            seed,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.cfg
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn label_ids<'a>(&self, data: &'a EncodedDataset) -> &'a [u32] {
        data.cat_ids(self.label_idx).expect("label column is categorical")
    }

    /// Feature matrix for the given rows.
    pub fn features(&self, data: &EncodedDataset, rows: &[usize]) -> Result<Matrix, ModelError> {
        if rows.is_empty() {
            return Err(ModelError::EmptyRows);
        }
        let mut x = Matrix::zeros(rows.len(), self.feature_width);
        for (r, &row) in rows.iter().enumerate() {
            let mut offset = 0;
            for &(col, width) in &self.feature_cols {
                if width == 1 {
                    x.set(r, offset, data.normalized(col).expect("numerical column")[row]);
                } else {
                    let id = data.cat_ids(col).expect("categorical column")[row] as usize;
                    x.set(r, offset + id, 1.0);
                }
                offset += width;
            }
        }
        Ok(x)
    }

    fn label_onehot(&self, data: &EncodedDataset, rows: &[usize]) -> Matrix {
        let labels = self.label_ids(data);
        let mut y = Matrix::zeros(rows.len(), self.n_classes);
        for (r, &row) in rows.iter().enumerate() {
            y.set(r, labels[row] as usize, 1.0);
        }
        y
    }

    /// Class probabilities for the given rows.
    pub fn predict_probs(&self, data: &EncodedDataset, rows: &[usize]) -> Result<Matrix, ModelError> {
        let x = self.features(data, rows)?;
        let y = Matrix::zeros(rows.len(), self.n_classes);
        let eval = self.graph.forward(&[x, y], &self.params)?;
        Ok(eval.value(self.nodes.probs).clone())
    }

    /// Predicted class ids (argmax of the logits).
    pub fn predict(&self, data: &EncodedDataset, rows: &[usize]) -> Result<Vec<u32>, ModelError> {
        let probs = self.predict_probs(data, rows)?;
        Ok((0..probs.rows())
            .map(|r| {
                let row = probs.row(r);
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best as u32
            })
            .collect())
    }

    pub fn checkpoint_header(&self) -> CheckpointHeader {
        CheckpointHeader {
            format_version: 1,
            model_kind: "classifier".into(),
            role: self.role,
            seed: self.seed,
            domain_digest: self.domain_digest.clone(),
            hyper: serde_json::json!({
                "label_col": self.cfg.label_col,
                "hidden": self.cfg.hidden,
                "blocks": self.cfg.blocks,
            }),
        }
    }
}

/// Per-row black-box signals used by membership inference.
#[derive(Clone, Debug)]
pub struct RowSignals {
    pub loss: Vec<f64>,
    pub confidence: Vec<f64>,
}

/// Cross-entropy loss and max-softmax confidence per row.
pub fn per_example_signals(
    model: &ClassifierModel,
    data: &EncodedDataset,
    rows: &[usize],
) -> Result<RowSignals, ModelError> {
    if rows.is_empty() {
        return Err(ModelError::EmptyRows);
    }
    let x = model.features(data, rows)?;
    let y = model.label_onehot(data, rows);
    let eval = model.graph.forward(&[x, y], &model.params)?;
    let row_loss = eval.value(model.nodes.row_loss);
    let probs = eval.value(model.nodes.probs);
    let loss = (0..rows.len()).map(|r| row_loss.get(r, 0)).collect();
    let confidence = (0..rows.len())
        .map(|r| probs.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(RowSignals { loss, confidence })
}

/// Argmax-match rate in percent.
pub fn accuracy(
    model: &ClassifierModel,
    data: &EncodedDataset,
    rows: &[usize],
) -> Result<f64, ModelError> {
    if rows.is_empty() {
        return Err(ModelError::EmptyRows);
    }
    let predictions = model.predict(data, rows)?;
    let labels = model.label_ids(data);
    let hits = predictions
        .iter()
        .zip(rows.iter())
        .filter(|&(&p, &r)| p == labels[r])
        .count();
    Ok(100.0 * hits as f64 / rows.len() as f64)
}

/// Training a classifier needs at least two classes present.
pub fn ensure_multiclass(
    model: &ClassifierModel,
    data: &EncodedDataset,
    rows: &[usize],
) -> Result<(), ModelError> {
    let labels = model.label_ids(data);
    let mut seen = vec![false; model.n_classes()];
    for &r in rows {
        seen[labels[r] as usize] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(ModelError::Invalid("training set contains a single class".into()));
    }
    Ok(())
}

impl GradientModel for ClassifierModel {
    fn family(&self) -> &'static str {
        "classifier"
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut Vec<f64> {
        &mut self.params
    }

    fn role(&self) -> Role {
        self.role
    }

    fn set_role(&mut self, role: Role) {
        self.role = role;
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn reinit(&self, seed: u64) -> Self {
        let mut fresh = self.clone();
        let mut rng = SeededRng::new(seed, streams::INIT);
        fresh.params = init_params(&self.graph, &mut rng);
        fresh.role = Role::Random;
        fresh.seed = seed;
        fresh
    }

    fn loss_graph(&self) -> &Graph {
        &self.graph
    }

    fn loss_inputs(&self, data: &EncodedDataset, rows: &[usize]) -> Result<Vec<Matrix>, ModelError> {
        let x = self.features(data, rows)?;
        let y = self.label_onehot(data, rows);
        Ok(vec![x, y])
    }

    fn scrub_graph(&self) -> &Graph {
        &self.scrub
    }

    fn scrub_inputs(
        &self,
        teacher: &Self,
        data: &EncodedDataset,
        rows: &[usize],
    ) -> Result<Vec<Matrix>, ModelError> {
        let x = self.features(data, rows)?;
        let t_probs = teacher.predict_probs(data, rows)?.map(|p| p.max(1e-12));
        Ok(vec![x, t_probs])
    }

    fn row_likelihood(&self, data: &EncodedDataset, rows: &[usize]) -> Result<Vec<f64>, ModelError> {
        // probability assigned to the true label
        let x = self.features(data, rows)?;
        let y = self.label_onehot(data, rows);
        let eval = self.graph.forward(&[x, y], &self.params)?;
        let row_loss = eval.value(self.nodes.row_loss);
        Ok((0..rows.len()).map(|r| (-row_loss.get(r, 0)).exp()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_grad, max_relative_error};
    use crate::data::{freeze_encoding, synthetic};

    fn blob_dataset(spread: f64) -> EncodedDataset {
        freeze_encoding(&synthetic::class_blobs(200, 4, spread, 3)).unwrap()
    }

    fn tiny_config() -> ClassifierConfig {
        ClassifierConfig { label_col: "label".into(), hidden: 16, blocks: 2 }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let data = blob_dataset(0.5);
        let model = ClassifierModel::build(&data, tiny_config(), 1).unwrap();
        let rows: Vec<usize> = (0..20).collect();
        let probs = model.predict_probs(&data, &rows).unwrap();
        for r in 0..probs.rows() {
            let s: f64 = probs.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_logits_signals() {
        // fresh model with zeroed parameters emits uniform probabilities:
        // loss = ln K, confidence = 1/K
        let data = blob_dataset(0.5);
        let mut model = ClassifierModel::build(&data, tiny_config(), 2).unwrap();
        for p in model.params_mut().iter_mut() {
            *p = 0.0;
        }
        let rows: Vec<usize> = (0..8).collect();
        let s = per_example_signals(&model, &data, &rows).unwrap();
        for (&l, &c) in s.loss.iter().zip(s.confidence.iter()) {
            assert!((l - 4.0f64.ln()).abs() < 1e-12, "loss {l}");
            assert!((c - 0.25).abs() < 1e-12, "confidence {c}");
        }
    }

    #[test]
    fn signals_deterministic() {
        let data = blob_dataset(0.5);
        let model = ClassifierModel::build(&data, tiny_config(), 3).unwrap();
        let rows: Vec<usize> = (0..10).collect();
        let a = per_example_signals(&model, &data, &rows).unwrap();
        let b = per_example_signals(&model, &data, &rows).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.confidence, b.confidence);
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let data = blob_dataset(1.0);
        let model = ClassifierModel::build(&data, ClassifierConfig { hidden: 8, blocks: 1, ..tiny_config() }, 4)
            .unwrap();
        let rows: Vec<usize> = (0..12).collect();
        let inputs = model.loss_inputs(&data, &rows).unwrap();
        let eval = model.loss_graph().forward(&inputs, model.params()).unwrap();
        let analytic = model.loss_graph().backward(&eval).unwrap();
        let numeric = finite_difference_grad(
            |p| model.loss_graph().forward(&inputs, p).unwrap().loss(),
            model.params(),
            1e-5,
        );
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn single_class_rows_rejected() {
        let data = blob_dataset(0.5);
        let model = ClassifierModel::build(&data, tiny_config(), 5).unwrap();
        let labels = model.label_ids(&data);
        let only_zero: Vec<usize> =
            (0..data.len()).filter(|&r| labels[r] == 0).collect();
        assert!(ensure_multiclass(&model, &data, &only_zero).is_err());
        let all: Vec<usize> = (0..data.len()).collect();
        assert!(ensure_multiclass(&model, &data, &all).is_ok());
    }
}
