//! Masked autoregressive network for selectivity estimation.
//!
//! All columns are discretized (categorical ids as-is, numerical columns
//! binned); one shared masked MLP emits, per column, a softmax distribution
//! conditioned only on earlier columns, so the joint factorizes by the
//! product rule. Cardinalities are answered either by exact summation over
//! small filtered domains or by progressive sampling.

use super::{CheckpointHeader, GradientModel, ModelError, Role};
use crate::autodiff::{init_params, streams, Graph, GraphBuilder, Matrix, NodeId, SeededRng};
use crate::data::{Cell, Domain, EncodedDataset};
use crate::query::{Filter, FilterOp, QuerySpec};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DarnConfig {
    pub hidden: usize,
    pub layers: usize,
    /// Upper bound on bins for numerical columns; columns with fewer
    /// distinct values get one bin per value.
    pub max_bins: usize,
}

impl Default for DarnConfig {
    fn default() -> Self {
        DarnConfig { hidden: 128, layers: 2, max_bins: 64 }
    }
}

#[derive(Clone, Debug)]
enum ColBins {
    Cat { n: usize },
    /// One bin per tracked distinct value.
    Values { values: Vec<f64> },
    EquiWidth { min: f64, max: f64, n: usize },
}

/// Per-column discretization derived from the frozen domains.
#[derive(Clone, Debug)]
pub struct Discretizer {
    cols: Vec<ColBins>,
}

impl Discretizer {
    pub fn build(data: &EncodedDataset, max_bins: usize) -> Self {
        let cols = data
            .schema()
            .iter()
            .map(|c| match &c.domain {
                Domain::Categorical(vals) => ColBins::Cat { n: vals.len() },
                Domain::Numerical { min, max, distinct } => match distinct {
                    Some(values) if values.len() <= max_bins => {
                        ColBins::Values { values: values.clone() }
                    }
                    _ => ColBins::EquiWidth { min: *min, max: *max, n: max_bins },
                },
            })
            .collect();
        Discretizer { cols }
    }

    pub fn column_count(&self) -> usize {
        self.cols.len()
    }

    pub fn bin_count(&self, col: usize) -> usize {
        match &self.cols[col] {
            ColBins::Cat { n } => *n,
            ColBins::Values { values } => values.len(),
            ColBins::EquiWidth { n, .. } => *n,
        }
    }

    /// Bin index of a raw cell value.
    pub fn bin_of(&self, col: usize, cell: &Cell) -> usize {
        match (&self.cols[col], cell) {
            (ColBins::Cat { .. }, Cell::Cat(_)) => unreachable!("use encoded ids for categories"),
            (ColBins::Values { values }, Cell::Num(v)) => {
                match values.binary_search_by(|x| x.partial_cmp(v).unwrap()) {
                    Ok(i) => i,
                    Err(i) => i.min(values.len() - 1),
                }
            }
            (ColBins::EquiWidth { min, max, n }, Cell::Num(v)) => {
                if *max <= *min {
                    0
                } else {
                    let w = (max - min) / *n as f64;
                    (((v - min) / w).floor() as usize).min(n - 1)
                }
            }
            _ => unreachable!("cell kind mismatches column bins"),
        }
    }

    /// Allowed-bin mask for a filter, conservatively including bins that
    /// only partially overlap the filter range.
    fn allowed(&self, col: usize, op: &FilterOp, category_of: impl Fn(&str) -> Option<u32>) -> Vec<bool> {
        let n = self.bin_count(col);
        let mut mask = vec![false; n];
        match (&self.cols[col], op) {
            (ColBins::Cat { .. }, FilterOp::EqCat(v)) => {
                if let Some(id) = category_of(v) {
                    mask[id as usize] = true;
                }
            }
            (ColBins::Values { values }, op) => {
                for (i, &v) in values.iter().enumerate() {
                    mask[i] = numeric_op_matches(op, v);
                }
            }
            (ColBins::EquiWidth { min, max, n }, op) => {
                let w = (max - min) / *n as f64;
                for (i, slot) in mask.iter_mut().enumerate() {
                    let b_lo = min + i as f64 * w;
                    let b_hi = if i + 1 == *n { *max } else { min + (i as f64 + 1.0) * w };
                    *slot = numeric_op_overlaps(op, b_lo, b_hi);
                }
            }
            (ColBins::Cat { .. }, _) => {}
        }
        mask
    }
}

fn numeric_op_matches(op: &FilterOp, v: f64) -> bool {
    match op {
        FilterOp::EqNum(x) => v == *x,
        FilterOp::Ge(x) => v >= *x,
        FilterOp::Le(x) => v <= *x,
        FilterOp::Range { lo, hi } => *lo <= v && v <= *hi,
        FilterOp::EqCat(_) => false,
    }
}

fn numeric_op_overlaps(op: &FilterOp, b_lo: f64, b_hi: f64) -> bool {
    match op {
        FilterOp::EqNum(x) => *x >= b_lo && *x <= b_hi,
        FilterOp::Ge(x) => b_hi >= *x,
        FilterOp::Le(x) => b_lo <= *x,
        FilterOp::Range { lo, hi } => b_lo <= *hi && b_hi >= *lo,
        FilterOp::EqCat(_) => false,
    }
}

#[derive(Clone, Debug)]
struct DarnNodes {
    block_softmax: Vec<NodeId>,
    row_loglik: NodeId,
}

#[derive(Clone, Debug)]
pub struct DarnModel {
    cfg: DarnConfig,
    disc: Discretizer,
    col_offsets: Vec<usize>,
    total_width: usize,
    domain_digest: String,
    graph: Graph,
    nodes: DarnNodes,
    scrub: Graph,
    params: Vec<f64>,
    role: Role,
    seed: u64,
}

/// MADE-style masks over the natural column order. Input units carry the
/// 1-based index of their column; hidden units cycle through 1..m-1;
/// an output block for column i may only see hidden degrees < i.
fn build_masked_network(
    b: &mut GraphBuilder,
    x: NodeId,
    disc: &Discretizer,
    total_width: usize,
    cfg: &DarnConfig,
) -> (Vec<NodeId>, Vec<NodeId>) {
    let m = disc.column_count();
    let input_degree: Vec<usize> = (0..m)
        .flat_map(|c| std::iter::repeat_n(c + 1, disc.bin_count(c)))
        .collect();
    debug_assert_eq!(input_degree.len(), total_width);
    let hidden_degree: Vec<usize> =
        (0..cfg.hidden).map(|k| 1 + (k % (m - 1).max(1))).collect();

    // input -> first hidden
    let mut mask = Matrix::zeros(total_width, cfg.hidden);
    for (i, &di) in input_degree.iter().enumerate() {
        for (h, &dh) in hidden_degree.iter().enumerate() {
            if di <= dh {
                mask.set(i, h, 1.0);
            }
        }
    }
    let mut h = b.masked_dense(x, mask);
    h = b.relu(h);

    // hidden -> hidden
    for _ in 1..cfg.layers {
        let mut mask = Matrix::zeros(cfg.hidden, cfg.hidden);
        for (i, &di) in hidden_degree.iter().enumerate() {
            for (j, &dj) in hidden_degree.iter().enumerate() {
                if di <= dj {
                    mask.set(i, j, 1.0);
                }
            }
        }
        h = b.masked_dense(h, mask);
        h = b.relu(h);
    }

    // per-column output blocks
    let mut logsm = Vec::with_capacity(m);
    let mut softmax = Vec::with_capacity(m);
    for c in 0..m {
        let width = disc.bin_count(c);
        let mut mask = Matrix::zeros(cfg.hidden, width);
        for (i, &di) in hidden_degree.iter().enumerate() {
            if di < c + 1 {
                for j in 0..width {
                    mask.set(i, j, 1.0);
                }
            }
        }
        let logits = b.masked_dense(h, mask);
        logsm.push(b.log_softmax(logits));
        softmax.push(b.softmax(logits));
    }
    (logsm, softmax)
}

impl DarnModel {
    pub fn build(data: &EncodedDataset, cfg: DarnConfig, seed: u64) -> Result<Self, ModelError> {
        if data.schema().len() < 2 {
            return Err(ModelError::Invalid("autoregressive model needs at least 2 columns".into()));
        }
        let disc = Discretizer::build(data, cfg.max_bins);
        let m = disc.column_count();
        let mut col_offsets = Vec::with_capacity(m);
        let mut total_width = 0;
        for c in 0..m {
            col_offsets.push(total_width);
            total_width += disc.bin_count(c);
        }

        // loss graph
        let mut b = GraphBuilder::new();
        let x = b.input(total_width);
        let (logsm, softmax) = build_masked_network(&mut b, x, &disc, total_width, &cfg);
        let mut block_lls = Vec::with_capacity(m);
        for c in 0..m {
            let hot = b.slice_cols(x, col_offsets[c], disc.bin_count(c));
            let picked = b.mul(logsm[c], hot);
            block_lls.push(b.row_sum(picked));
        }
        let row_ll = b.add_n(block_lls);
        let mean_ll = b.mean_all(row_ll);
        let loss = b.scale(mean_ll, -1.0);
        let nodes = DarnNodes { block_softmax: softmax, row_loglik: row_ll };
        let graph = b.finish(loss);

        // scrub graph: x plus one teacher distribution per column
        let mut sb = GraphBuilder::new();
        let sx = sb.input(total_width);
        let teacher_inputs: Vec<NodeId> = (0..m).map(|c| sb.input(disc.bin_count(c))).collect();
        let (s_logsm, _) =
            build_masked_network(&mut sb, sx, &disc, total_width, &cfg);
        let mut kl_terms = Vec::with_capacity(m);
        for c in 0..m {
            let t_ln = sb.ln(teacher_inputs[c]);
            let diff = sb.sub(t_ln, s_logsm[c]);
            let w = sb.mul(teacher_inputs[c], diff);
            kl_terms.push(sb.row_sum(w));
        }
        let d_row = sb.add_n(kl_terms);
        let d_mean = sb.mean_all(d_row);
        let scrub = sb.finish(d_mean);
        debug_assert_eq!(graph.param_len(), scrub.param_len());

        let mut rng = SeededRng::new(seed, streams::INIT);
        let params = init_params(&graph, &mut rng);
        Ok(DarnModel {
            domain_digest: data.domain_digest(),
            cfg,
            disc,
            col_offsets,
            total_width,
            graph,
            nodes,
            scrub,
            params,
            role: Role::Random,
            seed,
        })
    }

    pub fn config(&self) -> &DarnConfig {
        &self.cfg
    }

    pub fn discretizer(&self) -> &Discretizer {
        &self.disc
    }

    /// Bin indices of a dataset row.
    pub fn bins_of_row(&self, data: &EncodedDataset, row: usize) -> Vec<usize> {
        (0..self.disc.column_count())
            .map(|c| match data.cat_ids(c) {
                Some(ids) => ids[row] as usize,
                None => self.disc.bin_of(c, &data.raw_cell(c, row)),
            })
            .collect()
    }

    fn onehot_bins(&self, bin_rows: &[Vec<usize>]) -> Matrix {
        let mut x = Matrix::zeros(bin_rows.len(), self.total_width);
        for (r, bins) in bin_rows.iter().enumerate() {
            for (c, &bin) in bins.iter().enumerate() {
                x.set(r, self.col_offsets[c] + bin, 1.0);
            }
        }
        x
    }

    fn batch(&self, data: &EncodedDataset, rows: &[usize]) -> Result<Matrix, ModelError> {
        if rows.is_empty() {
            return Err(ModelError::EmptyRows);
        }
        let bin_rows: Vec<Vec<usize>> = rows.iter().map(|&r| self.bins_of_row(data, r)).collect();
        Ok(self.onehot_bins(&bin_rows))
    }

    /// Per-column conditional distributions for a batch of (possibly
    /// partial) bin rows; block c only depends on columns before c.
    pub fn conditionals(&self, bin_rows: &[Vec<usize>]) -> Result<Vec<Matrix>, ModelError> {
        let x = self.onehot_bins(bin_rows);
        let eval = self.graph.forward(&[x], &self.params)?;
        Ok(self.nodes.block_softmax.iter().map(|&n| eval.value(n).clone()).collect())
    }

    /// Joint probability of full bin rows.
    pub fn joint_prob(&self, bin_rows: &[Vec<usize>]) -> Result<Vec<f64>, ModelError> {
        let x = self.onehot_bins(bin_rows);
        let eval = self.graph.forward(&[x], &self.params)?;
        let ll = eval.value(self.nodes.row_loglik);
        Ok((0..bin_rows.len()).map(|r| ll.get(r, 0).exp()).collect())
    }

    /// Allowed-bin masks per column for an aggregate query's filters.
    pub fn filter_masks(
        &self,
        data: &EncodedDataset,
        filters: &[Filter],
    ) -> Result<Vec<Vec<bool>>, ModelError> {
        let mut masks: Vec<Vec<bool>> =
            (0..self.disc.column_count()).map(|c| vec![true; self.disc.bin_count(c)]).collect();
        for f in filters {
            let col = data.column_index(&f.column)?;
            let allowed = self.disc.allowed(col, &f.op, |v| data.category_id(col, v).ok());
            for (m, a) in masks[col].iter_mut().zip(allowed.iter()) {
                *m &= *a;
            }
        }
        Ok(masks)
    }

    /// Cardinality by exact summation of the joint over the filtered
    /// cross-product (small domains only).
    pub fn estimate_cardinality_exact(
        &self,
        cardinality: f64,
        masks: &[Vec<bool>],
    ) -> Result<f64, ModelError> {
        let mut cells: u64 = 1;
        for mask in masks {
            let n = mask.iter().filter(|&&b| b).count() as u64;
            cells = cells.saturating_mul(n.max(1));
            if cells > 1_000_000 {
                return Err(ModelError::DomainTooLarge(cells));
            }
        }
        let allowed: Vec<Vec<usize>> = masks
            .iter()
            .map(|m| m.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect())
            .collect();
        if allowed.iter().any(|a| a.is_empty()) {
            return Ok(0.0);
        }

        // enumerate combinations in chunks to bound batch size
        let mut total = 0.0;
        let mut combo: Vec<usize> = vec![0; allowed.len()];
        let mut batch: Vec<Vec<usize>> = Vec::with_capacity(2048);
        loop {
            batch.push(combo.iter().zip(allowed.iter()).map(|(&i, a)| a[i]).collect());
            if batch.len() == 2048 {
                total += self.joint_prob(&batch)?.iter().sum::<f64>();
                batch.clear();
            }
            // odometer increment
            let mut c = allowed.len();
            loop {
                if c == 0 {
                    break;
                }
                c -= 1;
                combo[c] += 1;
                if combo[c] < allowed[c].len() {
                    break;
                }
                combo[c] = 0;
                if c == 0 {
                    c = usize::MAX;
                    break;
                }
            }
            if c == usize::MAX {
                break;
            }
        }
        if !batch.is_empty() {
            total += self.joint_prob(&batch)?.iter().sum::<f64>();
        }
        Ok(cardinality * total)
    }

    /// Cardinality by progressive sampling: walk the columns in order,
    /// accumulate the restricted conditional mass, and sample the next
    /// value from the renormalized restriction. Zero restricted mass
    /// zeroes the sample's contribution.
    pub fn estimate_cardinality_sampled(
        &self,
        cardinality: f64,
        masks: &[Vec<bool>],
        n_samples: usize,
        rng: &mut SeededRng,
    ) -> Result<f64, ModelError> {
        assert!(n_samples >= 1);
        let m = self.disc.column_count();
        let mut bin_rows: Vec<Vec<usize>> = vec![vec![0; m]; n_samples];
        let mut weights = vec![1.0f64; n_samples];
        for c in 0..m {
            let conds = self.conditionals(&bin_rows)?;
            let probs = &conds[c];
            for s in 0..n_samples {
                if weights[s] == 0.0 {
                    continue;
                }
                let row = probs.row(s);
                let mass: f64 = row
                    .iter()
                    .zip(masks[c].iter())
                    .filter(|(_, &a)| a)
                    .map(|(&p, _)| p)
                    .sum();
                if mass <= 0.0 {
                    weights[s] = 0.0;
                    continue;
                }
                weights[s] *= mass;
                // sample from the renormalized restriction
                let mut u = rng.uniform() * mass;
                let mut pick = None;
                for (i, (&p, &a)) in row.iter().zip(masks[c].iter()).enumerate() {
                    if !a {
                        continue;
                    }
                    u -= p;
                    if u < 0.0 {
                        pick = Some(i);
                        break;
                    }
                }
                let pick = pick.unwrap_or_else(|| {
                    masks[c].iter().rposition(|&a| a).expect("nonzero mass implies an allowed bin")
                });
                bin_rows[s][c] = pick;
            }
        }
        let mean: f64 = weights.iter().sum::<f64>() / n_samples as f64;
        Ok(cardinality * mean)
    }

    /// Representative raw value of a bin (used when histogramming samples).
    pub fn bin_value(&self, col: usize, bin: usize) -> f64 {
        match &self.disc.cols[col] {
            ColBins::Cat { .. } => bin as f64,
            ColBins::Values { values } => values[bin],
            ColBins::EquiWidth { min, max, n } => {
                let w = (max - min) / *n as f64;
                min + (bin as f64 + 0.5) * w
            }
        }
    }

    /// Draw full rows from the learned joint by ancestral sampling.
    pub fn sample_rows(&self, n: usize, rng: &mut SeededRng) -> Result<Vec<Vec<usize>>, ModelError> {
        assert!(n >= 1);
        let m = self.disc.column_count();
        let mut bin_rows: Vec<Vec<usize>> = vec![vec![0; m]; n];
        for c in 0..m {
            let conds = self.conditionals(&bin_rows)?;
            let probs = &conds[c];
            for (s, row) in bin_rows.iter_mut().enumerate() {
                row[c] = rng.weighted(probs.row(s));
            }
        }
        Ok(bin_rows)
    }

    /// Convenience: estimate a COUNT query end to end.
    pub fn answer_count(
        &self,
        data: &EncodedDataset,
        cardinality: f64,
        q: &QuerySpec,
        n_samples: usize,
        rng: &mut SeededRng,
    ) -> Result<f64, ModelError> {
        let masks = self.filter_masks(data, q.filters())?;
        self.estimate_cardinality_sampled(cardinality, &masks, n_samples, rng)
    }

    pub fn checkpoint_header(&self) -> CheckpointHeader {
        CheckpointHeader {
            format_version: 1,
            model_kind: "darn".into(),
            role: self.role,
            seed: self.seed,
            domain_digest: self.domain_digest.clone(),
            hyper: serde_json::json!({
                "hidden": self.cfg.hidden,
                "layers": self.cfg.layers,
                "max_bins": self.cfg.max_bins,
            }),
        }
    }
}

impl GradientModel for DarnModel {
    fn family(&self) -> &'static str {
        "darn"
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
        Ok(vec![self.batch(data, rows)?])
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
        if rows.is_empty() {
            return Err(ModelError::EmptyRows);
        }
        let bin_rows: Vec<Vec<usize>> = rows.iter().map(|&r| self.bins_of_row(data, r)).collect();
        let x = self.onehot_bins(&bin_rows);
        let teacher_conds = teacher.conditionals(&bin_rows)?;
        let mut inputs = vec![x];
        for cond in teacher_conds {
            inputs.push(cond.map(|p| p.max(1e-12)));
        }
        Ok(inputs)
    }

    fn row_likelihood(&self, data: &EncodedDataset, rows: &[usize]) -> Result<Vec<f64>, ModelError> {
        if rows.is_empty() {
            return Err(ModelError::EmptyRows);
        }
        let bin_rows: Vec<Vec<usize>> = rows.iter().map(|&r| self.bins_of_row(data, r)).collect();
        self.joint_prob(&bin_rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_grad, max_relative_error};
    use crate::data::{freeze_encoding, numerical_domain, ColumnSchema, Table};

    /// 3-column fixture with small domains (3 x 4 x 2 bins).
    fn small_dataset(n: usize, seed: u64) -> EncodedDataset {
        let mut rng = SeededRng::new(seed, 0);
        let mut rows = Vec::with_capacity(n);
        let mut a_vals = Vec::new();
        let mut b_vals = Vec::new();
        for _ in 0..n {
            let a = rng.below(3) as f64;
            // b correlates with a
            let b = if rng.uniform() < 0.7 { a } else { rng.below(4) as f64 };
            let c = if rng.uniform() < 0.5 { "on" } else { "off" };
            a_vals.push(a);
            b_vals.push(b);
            rows.push(vec![Cell::Num(a), Cell::Num(b), Cell::Cat(c.into())]);
        }
        let schema = vec![
            ColumnSchema { name: "a".into(), domain: numerical_domain(&a_vals) },
            ColumnSchema { name: "b".into(), domain: numerical_domain(&b_vals) },
            ColumnSchema {
                name: "c".into(),
                domain: Domain::Categorical(vec!["off".into(), "on".into()]),
            },
        ];
        freeze_encoding(&Table::new(schema, rows).unwrap()).unwrap()
    }

    fn tiny_config() -> DarnConfig {
        DarnConfig { hidden: 16, layers: 2, max_bins: 64 }
    }

    #[test]
    fn first_block_is_unconditional() {
        let data = small_dataset(50, 1);
        let model = DarnModel::build(&data, tiny_config(), 2).unwrap();
        // perturbing any input never changes block 0's distribution
        let base = model.conditionals(&[vec![0, 0, 0]]).unwrap()[0].row(0).to_vec();
        for a in 0..3 {
            for b in 0..4 {
                for c in 0..2 {
                    let got = model.conditionals(&[vec![a, b, c]]).unwrap()[0].row(0).to_vec();
                    assert_eq!(base, got, "block 0 depends on inputs ({a},{b},{c})");
                }
            }
        }
    }

    #[test]
    fn masks_block_forward_leakage() {
        // perturbing column j never changes output block i <= j
        let data = small_dataset(50, 3);
        let model = DarnModel::build(&data, tiny_config(), 4).unwrap();
        let mut rng = SeededRng::new(9, 0);
        for _ in 0..100 {
            let base: Vec<usize> =
                vec![rng.below(3), rng.below(4), rng.below(2)];
            let base_conds = model.conditionals(&[base.clone()]).unwrap();
            for j in 0..3 {
                let mut perturbed = base.clone();
                let n = model.discretizer().bin_count(j);
                perturbed[j] = (perturbed[j] + 1) % n;
                let conds = model.conditionals(&[perturbed]).unwrap();
                for i in 0..=j {
                    assert_eq!(
                        base_conds[i].row(0),
                        conds[i].row(0),
                        "block {i} leaked from column {j}"
                    );
                }
            }
        }
    }

    #[test]
    fn conditionals_sum_to_one() {
        let data = small_dataset(50, 5);
        let model = DarnModel::build(&data, tiny_config(), 6).unwrap();
        let conds = model.conditionals(&[vec![1, 2, 0], vec![2, 0, 1]]).unwrap();
        for block in conds {
            for r in 0..block.rows() {
                let s: f64 = block.row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-9, "conditional sums to {s}");
            }
        }
    }

    #[test]
    fn joint_sums_to_one_over_full_domain() {
        let data = small_dataset(80, 7);
        let model = DarnModel::build(&data, tiny_config(), 8).unwrap();
        let mut combos = Vec::new();
        for a in 0..3 {
            for b in 0..4 {
                for c in 0..2 {
                    combos.push(vec![a, b, c]);
                }
            }
        }
        let total: f64 = model.joint_prob(&combos).unwrap().iter().sum();
        assert!((total - 1.0).abs() < 1e-6, "joint sums to {total}");
    }

    #[test]
    fn joint_equals_product_of_factors() {
        let data = small_dataset(50, 9);
        let model = DarnModel::build(&data, tiny_config(), 10).unwrap();
        let row = vec![2usize, 1, 1];
        let joint = model.joint_prob(&[row.clone()]).unwrap()[0];
        let conds = model.conditionals(&[row.clone()]).unwrap();
        let product: f64 = (0..3).map(|c| conds[c].get(0, row[c])).product();
        assert!((joint - product).abs() < 1e-12);
    }

    #[test]
    fn seed_determinism() {
        let data = small_dataset(30, 11);
        let a = DarnModel::build(&data, tiny_config(), 12).unwrap();
        let b = DarnModel::build(&data, tiny_config(), 12).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let data = small_dataset(40, 13);
        let model = DarnModel::build(&data, DarnConfig { hidden: 8, layers: 2, max_bins: 64 }, 14).unwrap();
        let rows: Vec<usize> = (0..16).collect();
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
    fn scrub_gradient_matches_finite_differences() {
        let data = small_dataset(40, 15);
        let teacher = DarnModel::build(&data, DarnConfig { hidden: 8, layers: 2, max_bins: 64 }, 16).unwrap();
        let student = teacher.reinit(17);
        let rows: Vec<usize> = (0..10).collect();
        let inputs = student.scrub_inputs(&teacher, &data, &rows).unwrap();
        let eval = student.scrub_graph().forward(&inputs, student.params()).unwrap();
        let analytic = student.scrub_graph().backward(&eval).unwrap();
        let numeric = finite_difference_grad(
            |p| student.scrub_graph().forward(&inputs, p).unwrap().loss(),
            student.params(),
            1e-5,
        );
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn unfiltered_estimate_recovers_cardinality() {
        let data = small_dataset(60, 19);
        let model = DarnModel::build(&data, tiny_config(), 20).unwrap();
        let masks = model.filter_masks(&data, &[]).unwrap();
        let est = model.estimate_cardinality_exact(60.0, &masks).unwrap();
        assert!((est - 60.0).abs() < 60.0 * 1e-6, "estimate {est}");
    }

    #[test]
    fn disjoint_ranges_sum_to_total() {
        let data = small_dataset(60, 21);
        let model = DarnModel::build(&data, tiny_config(), 22).unwrap();
        let all = model.filter_masks(&data, &[]).unwrap();
        let left = model
            .filter_masks(&data, &[Filter { column: "b".into(), op: FilterOp::Le(1.0) }])
            .unwrap();
        let right = model
            .filter_masks(&data, &[Filter { column: "b".into(), op: FilterOp::Ge(2.0) }])
            .unwrap();
        let t = model.estimate_cardinality_exact(100.0, &all).unwrap();
        let l = model.estimate_cardinality_exact(100.0, &left).unwrap();
        let r = model.estimate_cardinality_exact(100.0, &right).unwrap();
        assert!((l + r - t).abs() < 1e-6, "{l} + {r} != {t}");
    }

    #[test]
    fn sampler_matches_exact_within_three_standard_errors() {
        let data = small_dataset(200, 23);
        let model = DarnModel::build(&data, tiny_config(), 24).unwrap();
        let masks = model
            .filter_masks(
                &data,
                &[
                    Filter { column: "a".into(), op: FilterOp::Ge(1.0) },
                    Filter { column: "b".into(), op: FilterOp::Range { lo: 1.0, hi: 3.0 } },
                ],
            )
            .unwrap();
        let exact = model.estimate_cardinality_exact(200.0, &masks).unwrap();
        let n = 2000;
        let mut rng = SeededRng::new(25, streams::SAMPLER);
        let est = model.estimate_cardinality_sampled(200.0, &masks, n, &mut rng).unwrap();
        // bound the deviation with a crude SE estimate from repeated runs
        let runs: Vec<f64> = (0..20)
            .map(|i| {
                let mut r = SeededRng::new(100 + i, streams::SAMPLER);
                model.estimate_cardinality_sampled(200.0, &masks, n, &mut r).unwrap()
            })
            .collect();
        let mean: f64 = runs.iter().sum::<f64>() / runs.len() as f64;
        let var: f64 =
            runs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (runs.len() - 1) as f64;
        let se = var.sqrt().max(1e-9);
        assert!(
            (est - exact).abs() <= 3.0 * se + 1e-6,
            "sampled {est} vs exact {exact}, se {se}"
        );
    }

    #[test]
    fn zero_mass_region_estimates_zero() {
        let data = small_dataset(60, 27);
        let model = DarnModel::build(&data, tiny_config(), 28).unwrap();
        // empty allowed set on column b
        let masks = model
            .filter_masks(&data, &[Filter { column: "b".into(), op: FilterOp::Range { lo: 9.0, hi: 10.0 } }])
            .unwrap();
        let mut rng = SeededRng::new(1, streams::SAMPLER);
        let est = model.estimate_cardinality_sampled(60.0, &masks, 500, &mut rng).unwrap();
        assert_eq!(est, 0.0);
    }
}
