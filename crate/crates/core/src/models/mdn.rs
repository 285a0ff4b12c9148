//! Mixture density network for approximate query processing.
//!
//! A small MLP trunk maps the one-hot encoded categorical input to a
//! feature vector; three heads emit mixing weights (softmax), means (ReLU),
//! and standard deviations for a Gaussian mixture over the normalized
//! dependent column. Training minimizes the negative log likelihood of the
//! mixture. COUNT/SUM/AVG answers combine the mixture's truncated moments
//! with the frequency table of the categorical column.

use super::gauss::truncated_mass;
use super::{CheckpointHeader, GradientModel, ModelError, Role};
use crate::autodiff::{init_params, streams, Graph, GraphBuilder, Matrix, NodeId, SeededRng};
use crate::data::{Domain, EncodedDataset, FrequencyTable};
use crate::query::{AggKind, FilterOp, QuerySpec};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// softplus(x) + 1e-3: keeps every component's likelihood finite.
    SoftplusFloor,
    /// Plain ReLU on the head output. Can emit zero sigmas, in which case
    /// the likelihood is unbounded; kept for fidelity with the mixture
    /// head's original activation choice.
    Relu,
}

impl Default for SigmaMode {
    fn default() -> Self {
        SigmaMode::SoftplusFloor
    }
}

const SIGMA_FLOOR: f64 = 1e-3;
/// Initial sigma of roughly 0.25 in normalized units.
const SIGMA_INIT: f64 = 0.25;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdnConfig {
    pub cat_col: String,
    pub num_col: String,
    pub hidden: usize,
    pub layers: usize,
    pub components: usize,
    #[serde(default)]
    pub sigma_mode: SigmaMode,
}

impl MdnConfig {
    pub fn new(cat_col: &str, num_col: &str) -> Self {
        MdnConfig {
            cat_col: cat_col.into(),
            num_col: num_col.into(),
            hidden: 128,
            layers: 2,
            components: 30,
            sigma_mode: SigmaMode::SoftplusFloor,
        }
    }
}

/// Mixture parameters for one input.
#[derive(Clone, Debug)]
pub struct MixtureOutput {
    pub omega: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl MixtureOutput {
    /// Mixture density at normalized y.
    pub fn density(&self, y: f64) -> f64 {
        self.omega
            .iter()
            .zip(self.mu.iter().zip(self.sigma.iter()))
            .map(|(&w, (&m, &s))| w * super::gauss::normal_pdf((y - m) / s) / s)
            .sum()
    }
}

#[derive(Clone, Copy, Debug)]
struct MdnNodes {
    omega: NodeId,
    omega_log: NodeId,
    mu: NodeId,
    sigma: NodeId,
    row_loglik: NodeId,
}

#[derive(Clone, Debug)]
pub struct MdnModel {
    cfg: MdnConfig,
    cat_idx: usize,
    num_idx: usize,
    input_width: usize,
    cat_values: Vec<String>,
    y_min: f64,
    y_max: f64,
    domain_digest: String,
    graph: Graph,
    nodes: MdnNodes,
    scrub: Graph,
    params: Vec<f64>,
    role: Role,
    seed: u64,
}

/// Append trunk + heads to a builder; returns head node ids. The parameter
/// allocation order here defines the flat layout shared by the loss and
/// scrub graphs, and by the checkpoint format.
fn build_network(
    b: &mut GraphBuilder,
    x: NodeId,
    input_width: usize,
    cfg: &MdnConfig,
) -> (MdnNodes, usize, usize) {
    let mut h = x;
    let mut width = input_width;
    for _ in 0..cfg.layers {
        h = b.dense(h, width, cfg.hidden);
        h = b.relu(h);
        width = cfg.hidden;
    }
    let m = cfg.components;
    let omega_logits = b.dense(h, width, m);
    let mu_raw = b.dense(h, width, m);
    let mu_bias_block = 2 * (cfg.layers + 2) - 1; // bias of the mu head, see layout below
    let mu = b.relu(mu_raw);
    let sigma_raw = b.dense(h, width, m);
    let sigma_bias_block = 2 * (cfg.layers + 3) - 1;
    let sigma = match cfg.sigma_mode {
        SigmaMode::SoftplusFloor => {
            let sp = b.softplus(sigma_raw);
            b.offset(sp, SIGMA_FLOOR)
        }
        SigmaMode::Relu => b.relu(sigma_raw),
    };
    let omega_log = b.log_softmax(omega_logits);
    let omega = b.softmax(omega_logits);
    (
        MdnNodes { omega, omega_log, mu, sigma, row_loglik: 0 },
        mu_bias_block,
        sigma_bias_block,
    )
}

/// Spread the mean-head biases across the normalized range and start the
/// sigma heads near SIGMA_INIT.
fn apply_head_init(
    params: &mut [f64],
    graph: &Graph,
    cfg: &MdnConfig,
    mu_bias_block: usize,
    sigma_bias_block: usize,
) {
    let m = cfg.components;
    let mu_block = graph.param_blocks()[mu_bias_block];
    for (i, slot) in params[mu_block.offset..mu_block.offset + m].iter_mut().enumerate() {
        *slot = if m == 1 { 0.5 } else { 0.05 + 0.9 * i as f64 / (m - 1) as f64 };
    }
    let sigma_block = graph.param_blocks()[sigma_bias_block];
    let sigma_bias = match cfg.sigma_mode {
        SigmaMode::SoftplusFloor => ((SIGMA_INIT - SIGMA_FLOOR).exp() - 1.0f64).ln(),
        SigmaMode::Relu => SIGMA_INIT,
    };
    for slot in params[sigma_block.offset..sigma_block.offset + m].iter_mut() {
        *slot = sigma_bias;
    }
}

impl MdnModel {
    /// Freshly initialized model bound to the dataset's frozen domains.
    pub fn build(data: &EncodedDataset, cfg: MdnConfig, seed: u64) -> Result<Self, ModelError> {
        if cfg.components == 0 {
            return Err(ModelError::Invalid("mixture needs at least one component".into()));
        }
        let cat_idx = data.column_index(&cfg.cat_col)?;
        let num_idx = data.column_index(&cfg.num_col)?;
        let cat_values = match &data.schema()[cat_idx].domain {
            Domain::Categorical(v) => v.clone(),
            _ => {
                return Err(ModelError::Invalid(format!(
                    "column '{}' must be categorical",
                    cfg.cat_col
                )))
            }
        };
        let (y_min, y_max) = match &data.schema()[num_idx].domain {
            Domain::Numerical { min, max, .. } => (*min, *max),
            _ => {
                return Err(ModelError::Invalid(format!(
                    "column '{}' must be numerical",
                    cfg.num_col
                )))
            }
        };
        let input_width = cat_values.len();

        // loss graph
        let mut b = GraphBuilder::new();
        let x = b.input(input_width);
        let y = b.input(1);
        let (mut nodes, mu_bias_block, sigma_bias_block) = build_network(&mut b, x, input_width, &cfg);
        let lp = b.gauss_log_pdf(y, nodes.mu, nodes.sigma);
        let comp = b.add(nodes.omega_log, lp);
        let row_ll = b.log_sum_exp(comp);
        nodes.row_loglik = row_ll;
        let mean_ll = b.mean_all(row_ll);
        let loss = b.scale(mean_ll, -1.0);
        let graph = b.finish(loss);

        // scrub graph: same parameter layout, teacher mixture as inputs
        let mut sb = GraphBuilder::new();
        let sx = sb.input(input_width);
        let t_omega = sb.input(cfg.components);
        let t_mu = sb.input(cfg.components);
        let t_sigma = sb.input(cfg.components);
        let (snodes, _, _) = build_network(&mut sb, sx, input_width, &cfg);
        let inv_m = 1.0 / cfg.components as f64;
        let dmu = sb.sub(t_mu, snodes.mu);
        let dmu2 = sb.mul(dmu, dmu);
        let mse_mu = sb.row_sum(dmu2);
        let mse_mu = sb.scale(mse_mu, inv_m);
        let dsg = sb.sub(t_sigma, snodes.sigma);
        let dsg2 = sb.mul(dsg, dsg);
        let mse_sg = sb.row_sum(dsg2);
        let mse_sg = sb.scale(mse_sg, inv_m);
        let t_ln = sb.ln(t_omega);
        let diff_ln = sb.sub(t_ln, snodes.omega_log);
        let klw = sb.mul(t_omega, diff_ln);
        let kl = sb.row_sum(klw);
        let d1 = sb.add(mse_mu, mse_sg);
        let d_row = sb.add(d1, kl);
        let d_mean = sb.mean_all(d_row);
        let scrub = sb.finish(d_mean);
        debug_assert_eq!(graph.param_len(), scrub.param_len());

        let mut rng = SeededRng::new(seed, streams::INIT);
        let mut params = init_params(&graph, &mut rng);
        apply_head_init(&mut params, &graph, &cfg, mu_bias_block, sigma_bias_block);

        Ok(MdnModel {
            domain_digest: data.domain_digest(),
            cfg,
            cat_idx,
            num_idx,
            input_width,
            cat_values,
            y_min,
            y_max,
            graph,
            nodes,
            scrub,
            params,
            role: Role::Random,
            seed,
        })
    }

    pub fn config(&self) -> &MdnConfig {
        &self.cfg
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    fn onehot(&self, ids: &[u32]) -> Matrix {
        let mut x = Matrix::zeros(ids.len(), self.input_width);
        for (r, &id) in ids.iter().enumerate() {
            x.set(r, id as usize, 1.0);
        }
        x
    }

    fn batch(&self, data: &EncodedDataset, rows: &[usize]) -> Result<(Matrix, Matrix), ModelError> {
        if rows.is_empty() {
            return Err(ModelError::EmptyRows);
        }
        let ids = data.cat_ids(self.cat_idx).ok_or_else(|| {
            ModelError::Invalid(format!("column '{}' is not categorical", self.cfg.cat_col))
        })?;
        let ys = data.normalized(self.num_idx).ok_or_else(|| {
            ModelError::Invalid(format!("column '{}' is not numerical", self.cfg.num_col))
        })?;
        let picked: Vec<u32> = rows.iter().map(|&r| ids[r]).collect();
        let x = self.onehot(&picked);
        let y = Matrix::column(&rows.iter().map(|&r| ys[r]).collect::<Vec<_>>());
        Ok((x, y))
    }

    /// Mixture parameters for a batch of category ids.
    pub fn mixture_for_categories(&self, ids: &[u32]) -> Result<Vec<MixtureOutput>, ModelError> {
        for &id in ids {
            if id as usize >= self.input_width {
                return Err(ModelError::Invalid(format!("category id {id} outside frozen domain")));
            }
        }
        let x = self.onehot(ids);
        let y = Matrix::zeros(ids.len(), 1);
        let eval = self.graph.forward(&[x, y], &self.params)?;
        let (omega, mu, sigma) =
            (eval.value(self.nodes.omega), eval.value(self.nodes.mu), eval.value(self.nodes.sigma));
        Ok((0..ids.len())
            .map(|r| MixtureOutput {
                omega: omega.row(r).to_vec(),
                mu: mu.row(r).to_vec(),
                sigma: sigma.row(r).to_vec(),
            })
            .collect())
    }

    pub fn mixture_for_category(&self, id: u32) -> Result<MixtureOutput, ModelError> {
        Ok(self.mixture_for_categories(&[id])?.pop().expect("one output"))
    }

    /// Mixture density at a normalized y for one category.
    pub fn likelihood(&self, cat_id: u32, y_normalized: f64) -> Result<f64, ModelError> {
        Ok(self.mixture_for_category(cat_id)?.density(y_normalized))
    }

    /// Draw n dependent-column samples (raw units) for one category.
    pub fn sample(&self, cat_id: u32, n: usize, rng: &mut SeededRng) -> Result<Vec<f64>, ModelError> {
        let mix = self.mixture_for_category(cat_id)?;
        Ok((0..n)
            .map(|_| {
                let k = rng.weighted(&mix.omega);
                let y = mix.mu[k] + mix.sigma[k] * rng.normal();
                self.denormalize(y)
            })
            .collect())
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        if self.y_max > self.y_min {
            (raw - self.y_min) / (self.y_max - self.y_min)
        } else {
            0.0
        }
    }

    pub fn denormalize(&self, norm: f64) -> f64 {
        if self.y_max > self.y_min {
            norm * (self.y_max - self.y_min) + self.y_min
        } else {
            self.y_min
        }
    }

    pub fn category_id(&self, value: &str) -> Option<u32> {
        self.cat_values.binary_search_by(|v| v.as_str().cmp(value)).ok().map(|i| i as u32)
    }

    /// Answer a COUNT/SUM/AVG query from the mixture and the frequency
    /// table. The query must filter this model's column pair (an equality
    /// on the categorical column is optional: without it, every category
    /// contributes weighted by its frequency).
    pub fn aqp_answer(
        &self,
        ft: &FrequencyTable,
        q: &QuerySpec,
    ) -> Result<f64, ModelError> {
        let QuerySpec::Aggregate { agg, filters, .. } = q else {
            return Err(ModelError::Invalid("aqp_answer requires an aggregate query".into()));
        };
        let mut categories: Option<Vec<u32>> = None;
        let (mut lo, mut hi) = (self.y_min, self.y_max);
        for f in filters {
            if f.column == self.cfg.cat_col {
                match &f.op {
                    FilterOp::EqCat(v) => {
                        let id = self.category_id(v).ok_or_else(|| {
                            ModelError::Invalid(format!("category '{v}' absent from frequency table"))
                        })?;
                        categories = Some(vec![id]);
                    }
                    other => {
                        return Err(ModelError::Invalid(format!(
                            "unsupported filter on categorical column: {other:?}"
                        )))
                    }
                }
            } else if f.column == self.cfg.num_col {
                match f.op {
                    FilterOp::Range { lo: l, hi: h } => {
                        lo = lo.max(l);
                        hi = hi.min(h);
                    }
                    FilterOp::Ge(v) => lo = lo.max(v),
                    FilterOp::Le(v) => hi = hi.min(v),
                    FilterOp::EqNum(v) => {
                        lo = lo.max(v);
                        hi = hi.min(v);
                    }
                    FilterOp::EqCat(_) => {
                        return Err(ModelError::Invalid(
                            "string equality on the numerical column".into(),
                        ))
                    }
                }
            } else {
                return Err(ModelError::Invalid(format!(
                    "filter on column '{}' outside the model's pair",
                    f.column
                )));
            }
        }
        if hi < lo {
            return Ok(0.0);
        }
        let ids =
            categories.unwrap_or_else(|| (0..self.input_width as u32).collect::<Vec<u32>>());

        let span = self.y_max - self.y_min;
        let n_lo = self.normalize(lo);
        let n_hi = self.normalize(hi);
        let mixtures = self.mixture_for_categories(&ids)?;
        let mut count = 0.0;
        let mut sum = 0.0;
        for (&id, mix) in ids.iter().zip(mixtures.iter()) {
            let freq = ft.count(id) as f64;
            if freq == 0.0 {
                // meta-data gate: fully deleted categories answer zero no
                // matter what the network believes
                continue;
            }
            let mut mass = 0.0;
            let mut moment = 0.0;
            for ((&w, &m), &s) in mix.omega.iter().zip(mix.mu.iter()).zip(mix.sigma.iter()) {
                let t = truncated_mass(m, s, n_lo, n_hi)?;
                mass += w * t.mass;
                moment += w * t.moment;
            }
            count += freq * mass;
            // E[raw y · 1(range)] = span * E[norm y · 1] + min * mass
            sum += freq * (span * moment + self.y_min * mass);
        }
        Ok(match agg {
            AggKind::Count => count,
            AggKind::Sum => sum,
            AggKind::Avg => {
                if count <= 0.0 {
                    0.0
                } else {
                    sum / count
                }
            }
        })
    }

    pub fn checkpoint_header(&self) -> CheckpointHeader {
        CheckpointHeader {
            format_version: 1,
            model_kind: "mdn".into(),
            role: self.role,
            seed: self.seed,
            domain_digest: self.domain_digest.clone(),
            hyper: serde_json::json!({
                "cat_col": self.cfg.cat_col,
                "num_col": self.cfg.num_col,
                "hidden": self.cfg.hidden,
                "layers": self.cfg.layers,
                "components": self.cfg.components,
            }),
        }
    }
}

impl GradientModel for MdnModel {
    fn family(&self) -> &'static str {
        "mdn"
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
        let mu_bias_block = 2 * (self.cfg.layers + 2) - 1;
        let sigma_bias_block = 2 * (self.cfg.layers + 3) - 1;
        apply_head_init(&mut fresh.params, &self.graph, &self.cfg, mu_bias_block, sigma_bias_block);
        fresh.role = Role::Random;
        fresh.seed = seed;
        fresh
    }

    fn loss_graph(&self) -> &Graph {
        &self.graph
    }

    fn loss_inputs(&self, data: &EncodedDataset, rows: &[usize]) -> Result<Vec<Matrix>, ModelError> {
        let (x, y) = self.batch(data, rows)?;
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
        let (x, _) = self.batch(data, rows)?;
        let ids = data.cat_ids(self.cat_idx).expect("categorical column");
        let picked: Vec<u32> = rows.iter().map(|&r| ids[r]).collect();
        let mixtures = teacher.mixture_for_categories(&picked)?;
        let m = self.cfg.components;
        let mut t_omega = Matrix::zeros(rows.len(), m);
        let mut t_mu = Matrix::zeros(rows.len(), m);
        let mut t_sigma = Matrix::zeros(rows.len(), m);
        for (r, mix) in mixtures.iter().enumerate() {
            for i in 0..m {
                // floor keeps ln(teacher omega) finite
                t_omega.set(r, i, mix.omega[i].max(1e-12));
                t_mu.set(r, i, mix.mu[i]);
                t_sigma.set(r, i, mix.sigma[i]);
            }
        }
        Ok(vec![x, t_omega, t_mu, t_sigma])
    }

    fn row_likelihood(&self, data: &EncodedDataset, rows: &[usize]) -> Result<Vec<f64>, ModelError> {
        let (x, y) = self.batch(data, rows)?;
        let eval = self.graph.forward(&[x, y], &self.params)?;
        let ll = eval.value(self.nodes.row_loglik);
        Ok((0..rows.len()).map(|r| ll.get(r, 0).exp()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_grad, max_relative_error};
    use crate::data::{freeze_encoding, synthetic};

    fn tiny_dataset() -> EncodedDataset {
        freeze_encoding(&synthetic::census_like(300, 5)).unwrap()
    }

    fn tiny_config() -> MdnConfig {
        MdnConfig { hidden: 16, layers: 2, components: 4, ..MdnConfig::new("country", "age") }
    }

    #[test]
    fn census_scale_config_builds() {
        let data = tiny_dataset();
        let cfg = MdnConfig::new("country", "age");
        assert_eq!(cfg.components, 30);
        assert_eq!(cfg.hidden, 128);
        let model = MdnModel::build(&data, cfg, 1).unwrap();
        assert_eq!(model.role(), Role::Random);
        assert_eq!(model.input_width(), 8);
    }

    #[test]
    fn single_component_mixture_allowed() {
        let data = tiny_dataset();
        let cfg = MdnConfig { components: 1, hidden: 8, layers: 1, ..tiny_config() };
        let model = MdnModel::build(&data, cfg, 2).unwrap();
        let mix = model.mixture_for_category(0).unwrap();
        assert_eq!(mix.omega.len(), 1);
        assert!((mix.omega[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_parameters() {
        let data = tiny_dataset();
        let a = MdnModel::build(&data, tiny_config(), 9).unwrap();
        let b = MdnModel::build(&data, tiny_config(), 9).unwrap();
        assert_eq!(a.params(), b.params());
        let c = a.reinit(9);
        assert_eq!(a.params(), c.params());
    }

    #[test]
    fn mixture_invariants_hold() {
        let data = tiny_dataset();
        let model = MdnModel::build(&data, tiny_config(), 3).unwrap();
        for cat in 0..model.input_width() as u32 {
            let mix = model.mixture_for_category(cat).unwrap();
            let total: f64 = mix.omega.iter().sum();
            assert!((total - 1.0).abs() < 1e-9, "omega sums to {total}");
            assert!(mix.sigma.iter().all(|&s| s > 0.0));
        }
    }

    #[test]
    fn out_of_domain_category_rejected() {
        let data = tiny_dataset();
        let model = MdnModel::build(&data, tiny_config(), 3).unwrap();
        assert!(model.mixture_for_category(99).is_err());
    }

    #[test]
    fn forced_single_standard_normal_density() {
        let mix = MixtureOutput { omega: vec![1.0], mu: vec![0.0], sigma: vec![1.0] };
        let expected = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((mix.density(0.0) - expected).abs() < 1e-9);
    }

    #[test]
    fn forced_two_component_density() {
        let mix = MixtureOutput {
            omega: vec![0.5, 0.5],
            mu: vec![-1.0, 1.0],
            sigma: vec![1.0, 1.0],
        };
        // 2 * 0.5 * N(0; ±1, 1) = exp(-0.5)/sqrt(2 pi)
        let expected = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((mix.density(0.0) - expected).abs() < 1e-6, "{}", mix.density(0.0));
    }

    #[test]
    fn density_integrates_to_mass_in_unit_interval() {
        let data = tiny_dataset();
        let model = MdnModel::build(&data, tiny_config(), 7).unwrap();
        let mix = model.mixture_for_category(0).unwrap();
        // trapezoid over [0,1] vs closed-form truncated mass
        let n = 10_000;
        let mut acc = 0.0;
        for i in 0..=n {
            let y = i as f64 / n as f64;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * mix.density(y);
        }
        acc /= n as f64;
        let mut mass = 0.0;
        for ((&w, &m), &s) in mix.omega.iter().zip(mix.mu.iter()).zip(mix.sigma.iter()) {
            mass += w * truncated_mass(m, s, 0.0, 1.0).unwrap().mass;
        }
        assert!((acc - mass).abs() < 1e-4, "quadrature {acc} vs closed form {mass}");
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let data = tiny_dataset();
        let model = MdnModel::build(&data, tiny_config(), 11).unwrap();
        let rows: Vec<usize> = (0..24).collect();
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
    fn scrub_distance_zero_against_itself() {
        let data = tiny_dataset();
        let model = MdnModel::build(&data, tiny_config(), 13).unwrap();
        let rows: Vec<usize> = (0..16).collect();
        let d = super::super::mean_distance(&model, &model, &data, &rows).unwrap();
        assert!(d.abs() < 1e-9, "self distance {d}");
    }

    #[test]
    fn scrub_distance_gradient_matches_finite_differences() {
        let data = tiny_dataset();
        let teacher = MdnModel::build(&data, tiny_config(), 17).unwrap();
        let student = teacher.reinit(18);
        let rows: Vec<usize> = (0..12).collect();
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
    fn sampling_is_seeded_and_centered() {
        let data = tiny_dataset();
        let model = MdnModel::build(&data, tiny_config(), 19).unwrap();
        let mut r1 = SeededRng::new(5, streams::SAMPLER);
        let mut r2 = SeededRng::new(5, streams::SAMPLER);
        let a = model.sample(0, 100, &mut r1).unwrap();
        let b = model.sample(0, 100, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn count_bounded_by_frequency() {
        let data = tiny_dataset();
        let model = MdnModel::build(&data, tiny_config(), 23).unwrap();
        let split = crate::data::SplitState::fresh(data.clone());
        let ft = FrequencyTable::build(&data, "country", split.retain()).unwrap();
        let q = crate::query::parse(
            "SELECT COUNT(*) FROM census WHERE country = 'US' AND 20 <= age <= 80",
            data.schema(),
        )
        .unwrap();
        let us = model.category_id("US").unwrap();
        let est = model.aqp_answer(&ft, &q).unwrap();
        assert!(est >= 0.0);
        assert!(est <= ft.count(us) as f64 + 1e-9);
    }

    #[test]
    fn zero_frequency_gates_count_to_zero() {
        let data = tiny_dataset();
        let model = MdnModel::build(&data, tiny_config(), 29).unwrap();
        // frequency table with the US count zeroed
        let empty_rows: Vec<usize> = Vec::new();
        let ft = FrequencyTable::build(&data, "country", &empty_rows).unwrap();
        let q = crate::query::parse(
            "SELECT COUNT(*) FROM census WHERE country = 'US' AND 20 <= age <= 80",
            data.schema(),
        )
        .unwrap();
        assert_eq!(model.aqp_answer(&ft, &q).unwrap(), 0.0);
        let qs = crate::query::parse(
            "SELECT SUM(age) FROM census WHERE country = 'US' AND 20 <= age <= 80",
            data.schema(),
        )
        .unwrap();
        assert_eq!(model.aqp_answer(&ft, &qs).unwrap(), 0.0);
    }
}
