//! Static computation graphs with reverse-mode differentiation.
//!
//! A [`Graph`] is built once per model topology and then evaluated many
//! times against different inputs and parameter vectors. All node shapes
//! are `[batch, width]` with a fixed width and a batch size taken from the
//! bound inputs, which covers every network used here (MLP trunks, masked
//! autoregressive layers, mixture heads, residual blocks).
//!
//! The graph and a parameter vector together are plain values: evaluation
//! produces a fresh [`Evaluation`], so concurrent forward passes over one
//! graph are safe.

use super::matrix::Matrix;
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("input {slot}: expected {expected} columns, got {got}")]
    InputShape { slot: usize, expected: usize, got: usize },
    #[error("expected {expected} inputs, got {got}")]
    InputCount { expected: usize, got: usize },
    #[error("parameter vector length {got}, graph declares {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("non-finite value at node {node} ({op})")]
    NonFinite { node: NodeId, op: &'static str },
    #[error("inconsistent batch sizes: node {node} has {got} rows, expected {expected}")]
    BatchMismatch { node: NodeId, expected: usize, got: usize },
    #[error("backward requires a scalar output, got [{rows}, {cols}]")]
    NonScalarLoss { rows: usize, cols: usize },
}

#[derive(Clone, Debug)]
pub enum Op {
    /// External input bound at call time.
    Input(usize),
    /// Trainable parameter block, a view into the flat parameter vector.
    Param(usize),
    /// Fixed matrix baked into the graph (autoregressive masks).
    Const(usize),
    /// [b,k] @ [k,n] -> [b,n]
    MatMul(NodeId, NodeId),
    /// [b,n] + row [1,n] broadcast over the batch
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Hadamard product
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId, f64),
    Relu(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    /// Row-wise softmax
    Softmax(NodeId),
    /// [b,n] -> [b,1]
    LogSumExp(NodeId),
    /// [b,n] -> [b,1]
    RowSum(NodeId),
    /// [b,n] - [b,1] column broadcast
    SubCol(NodeId, NodeId),
    /// Column slice [b,n] -> [b,len]
    SliceCols { node: NodeId, start: usize, len: usize },
    /// log N(y; mean, sigma) elementwise over components, y a [b,1] column
    GaussLogPdf { y: NodeId, mean: NodeId, sigma: NodeId },
    /// Mean over every entry -> [1,1]
    MeanAll(NodeId),
    /// Sum of same-shaped nodes
    AddN(Vec<NodeId>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Const(_) => "const",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Relu(_) => "relu",
            Op::Softplus(_) => "softplus",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Softmax(_) => "softmax",
            Op::LogSumExp(_) => "log_sum_exp",
            Op::RowSum(_) => "row_sum",
            Op::SubCol(..) => "sub_col",
            Op::SliceCols { .. } => "slice_cols",
            Op::GaussLogPdf { .. } => "gauss_log_pdf",
            Op::MeanAll(_) => "mean_all",
            Op::AddN(_) => "add_n",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ParamBlock {
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

#[derive(Clone, Debug)]
pub struct Graph {
    ops: Vec<Op>,
    params: Vec<ParamBlock>,
    input_widths: Vec<usize>,
    consts: Vec<Matrix>,
    param_len: usize,
    output: NodeId,
}

/// Per-call results of a forward pass. Values are kept for the backward
/// sweep and for reading intermediate heads (mixture parameters, logits).
#[derive(Debug)]
pub struct Evaluation {
    values: Vec<Matrix>,
    output: NodeId,
}

impl Evaluation {
    pub fn value(&self, node: NodeId) -> &Matrix {
        &self.values[node]
    }

    pub fn output(&self) -> &Matrix {
        &self.values[self.output]
    }

    pub fn loss(&self) -> f64 {
        self.output().scalar()
    }
}

pub struct GraphBuilder {
    ops: Vec<Op>,
    params: Vec<ParamBlock>,
    input_widths: Vec<usize>,
    consts: Vec<Matrix>,
    param_len: usize,
}

impl GraphBuilder {
    pub fn new() -> Self {
        GraphBuilder {
            ops: Vec::new(),
            params: Vec::new(),
            input_widths: Vec::new(),
            consts: Vec::new(),
            param_len: 0,
        }
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.ops.push(op);
        self.ops.len() - 1
    }

    pub fn input(&mut self, cols: usize) -> NodeId {
        let slot = self.input_widths.len();
        self.input_widths.push(cols);
        self.push(Op::Input(slot))
    }

    pub fn param(&mut self, rows: usize, cols: usize) -> NodeId {
        let block = ParamBlock { rows, cols, offset: self.param_len };
        self.param_len += rows * cols;
        self.params.push(block);
        let idx = self.params.len() - 1;
        self.push(Op::Param(idx))
    }

    pub fn constant(&mut self, m: Matrix) -> NodeId {
        self.consts.push(m);
        let idx = self.consts.len() - 1;
        self.push(Op::Const(idx))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::AddBias(a, bias))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        self.push(Op::Scale(a, k))
    }

    pub fn offset(&mut self, a: NodeId, k: f64) -> NodeId {
        self.push(Op::Offset(a, k))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softplus(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Ln(a))
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softmax(a))
    }

    pub fn log_sum_exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::LogSumExp(a))
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::RowSum(a))
    }

    pub fn sub_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        self.push(Op::SubCol(a, col))
    }

    pub fn slice_cols(&mut self, node: NodeId, start: usize, len: usize) -> NodeId {
        self.push(Op::SliceCols { node, start, len })
    }

    pub fn gauss_log_pdf(&mut self, y: NodeId, mean: NodeId, sigma: NodeId) -> NodeId {
        self.push(Op::GaussLogPdf { y, mean, sigma })
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        self.push(Op::MeanAll(a))
    }

    pub fn add_n(&mut self, nodes: Vec<NodeId>) -> NodeId {
        assert!(!nodes.is_empty());
        self.push(Op::AddN(nodes))
    }

    /// Row-wise log-softmax, composed from primitives.
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let lse = self.log_sum_exp(a);
        self.sub_col(a, lse)
    }

    /// Fully-connected layer: x @ W + b, with W [in,out] and b [1,out].
    pub fn dense(&mut self, x: NodeId, input: usize, output: usize) -> NodeId {
        let w = self.param(input, output);
        let b = self.param(1, output);
        let xw = self.matmul(x, w);
        self.add_bias(xw, b)
    }

    /// Dense layer whose weight matrix is masked by a fixed 0/1 matrix.
    pub fn masked_dense(&mut self, x: NodeId, mask: Matrix) -> NodeId {
        let (input, output) = (mask.rows(), mask.cols());
        let w = self.param(input, output);
        let m = self.constant(mask);
        let wm = self.mul(w, m);
        let b = self.param(1, output);
        let xw = self.matmul(x, wm);
        self.add_bias(xw, b)
    }

    pub fn finish(self, output: NodeId) -> Graph {
        Graph {
            ops: self.ops,
            params: self.params,
            input_widths: self.input_widths,
            consts: self.consts,
            param_len: self.param_len,
            output,
        }
    }
}

impl Default for GraphBuilder {
    fn default() -> Self {
        Self::new()
    }
}

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

impl Graph {
    pub fn param_len(&self) -> usize {
        self.param_len
    }

    pub fn param_blocks(&self) -> &[ParamBlock] {
        &self.params
    }

    pub fn input_count(&self) -> usize {
        self.input_widths.len()
    }

    /// Evaluate every node. Inputs are bound by slot order; all inputs must
    /// share one batch size.
    pub fn forward(&self, inputs: &[Matrix], params: &[f64]) -> Result<Evaluation, GraphError> {
        if inputs.len() != self.input_widths.len() {
            return Err(GraphError::InputCount {
                expected: self.input_widths.len(),
                got: inputs.len(),
            });
        }
        for (slot, (m, &w)) in inputs.iter().zip(self.input_widths.iter()).enumerate() {
            if m.cols() != w {
                return Err(GraphError::InputShape { slot, expected: w, got: m.cols() });
            }
        }
        if params.len() != self.param_len {
            return Err(GraphError::ParamLength { expected: self.param_len, got: params.len() });
        }
        let batch = inputs.first().map(|m| m.rows()).unwrap_or(1);
        for (slot, m) in inputs.iter().enumerate() {
            if m.rows() != batch {
                return Err(GraphError::BatchMismatch { node: slot, expected: batch, got: m.rows() });
            }
        }

        let mut values: Vec<Matrix> = Vec::with_capacity(self.ops.len());
        for (id, op) in self.ops.iter().enumerate() {
            let v = match op {
                Op::Input(slot) => inputs[*slot].clone(),
                Op::Param(idx) => {
                    let b = self.params[*idx];
                    Matrix::from_vec(b.rows, b.cols, params[b.offset..b.offset + b.rows * b.cols].to_vec())
                }
                Op::Const(idx) => self.consts[*idx].clone(),
                Op::MatMul(a, b) => values[*a].matmul(&values[*b]),
                Op::AddBias(a, bias) => {
                    let (m, b) = (&values[*a], &values[*bias]);
                    debug_assert_eq!(b.rows(), 1);
                    debug_assert_eq!(m.cols(), b.cols());
                    let mut out = m.clone();
                    for r in 0..out.rows() {
                        for (o, &bv) in out.row_mut(r).iter_mut().zip(b.data().iter()) {
                            *o += bv;
                        }
                    }
                    out
                }
                Op::Add(a, b) => zip_elementwise(&values[*a], &values[*b], |x, y| x + y),
                Op::Sub(a, b) => zip_elementwise(&values[*a], &values[*b], |x, y| x - y),
                Op::Mul(a, b) => zip_elementwise(&values[*a], &values[*b], |x, y| x * y),
                Op::Scale(a, k) => values[*a].map(|x| x * k),
                Op::Offset(a, k) => values[*a].map(|x| x + k),
                Op::Relu(a) => values[*a].map(|x| x.max(0.0)),
                Op::Softplus(a) => values[*a].map(softplus),
                Op::Exp(a) => values[*a].map(f64::exp),
                Op::Ln(a) => values[*a].map(f64::ln),
                Op::Softmax(a) => row_softmax(&values[*a]),
                Op::LogSumExp(a) => row_log_sum_exp(&values[*a]),
                Op::RowSum(a) => {
                    let m = &values[*a];
                    let mut out = Matrix::zeros(m.rows(), 1);
                    for r in 0..m.rows() {
                        out.set(r, 0, m.row(r).iter().sum());
                    }
                    out
                }
                Op::SubCol(a, col) => {
                    let (m, c) = (&values[*a], &values[*col]);
                    debug_assert_eq!(c.cols(), 1);
                    debug_assert_eq!(m.rows(), c.rows());
                    let mut out = m.clone();
                    for r in 0..out.rows() {
                        let cv = c.get(r, 0);
                        for o in out.row_mut(r) {
                            *o -= cv;
                        }
                    }
                    out
                }
                Op::SliceCols { node, start, len } => {
                    let m = &values[*node];
                    let mut out = Matrix::zeros(m.rows(), *len);
                    for r in 0..m.rows() {
                        out.row_mut(r).copy_from_slice(&m.row(r)[*start..*start + *len]);
                    }
                    out
                }
                Op::GaussLogPdf { y, mean, sigma } => {
                    let (yv, mu, sg) = (&values[*y], &values[*mean], &values[*sigma]);
                    debug_assert_eq!(yv.cols(), 1);
                    debug_assert_eq!(mu.rows(), yv.rows());
                    let mut out = Matrix::zeros(mu.rows(), mu.cols());
                    for r in 0..mu.rows() {
                        let yr = yv.get(r, 0);
                        for c in 0..mu.cols() {
                            let s = sg.get(r, c);
                            let z = (yr - mu.get(r, c)) / s;
                            out.set(r, c, -HALF_LN_TWO_PI - s.ln() - 0.5 * z * z);
                        }
                    }
                    out
                }
                Op::MeanAll(a) => {
                    let m = &values[*a];
                    let n = (m.rows() * m.cols()) as f64;
                    Matrix::from_vec(1, 1, vec![m.data().iter().sum::<f64>() / n])
                }
                Op::AddN(nodes) => {
                    let mut out = values[nodes[0]].clone();
                    for &n in &nodes[1..] {
                        let m = &values[n];
                        for (o, &v) in out.data_mut().iter_mut().zip(m.data().iter()) {
                            *o += v;
                        }
                    }
                    out
                }
            };
            if !v.is_finite() {
                return Err(GraphError::NonFinite { node: id, op: op.name() });
            }
            values.push(v);
        }
        Ok(Evaluation { values, output: self.output })
    }

    /// Gradient of the scalar output with respect to the flat parameter
    /// vector. Requires the evaluation produced by [`Graph::forward`].
    pub fn backward(&self, eval: &Evaluation) -> Result<Vec<f64>, GraphError> {
        let out_val = &eval.values[self.output];
        if out_val.rows() != 1 || out_val.cols() != 1 {
            return Err(GraphError::NonScalarLoss { rows: out_val.rows(), cols: out_val.cols() });
        }

        let mut grads: Vec<Option<Matrix>> = vec![None; self.ops.len()];
        grads[self.output] = Some(Matrix::from_vec(1, 1, vec![1.0]));
        let mut param_grad = vec![0.0; self.param_len];

        for id in (0..self.ops.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.ops[id] {
                Op::Input(_) | Op::Const(_) => {}
                Op::Param(idx) => {
                    let b = self.params[*idx];
                    for (dst, &src) in param_grad[b.offset..b.offset + b.rows * b.cols]
                        .iter_mut()
                        .zip(g.data().iter())
                    {
                        *dst += src;
                    }
                }
                Op::MatMul(a, bn) => {
                    // dA = g @ B^T ; dB = A^T @ g
                    let da = g.matmul_nt(&eval.values[*bn]);
                    let db = eval.values[*a].matmul_tn(&g);
                    accumulate(&mut grads[*a], da);
                    accumulate(&mut grads[*bn], db);
                }
                Op::AddBias(a, bias) => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, &gv) in db.row_mut(0).iter_mut().zip(g.row(r).iter()) {
                            *d += gv;
                        }
                    }
                    accumulate(&mut grads[*bias], db);
                    accumulate(&mut grads[*a], g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[*a], g.clone());
                    accumulate(&mut grads[*b], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[*a], g.clone());
                    accumulate(&mut grads[*b], g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let da = zip_elementwise(&g, &eval.values[*b], |x, y| x * y);
                    let db = zip_elementwise(&g, &eval.values[*a], |x, y| x * y);
                    accumulate(&mut grads[*a], da);
                    accumulate(&mut grads[*b], db);
                }
                Op::Scale(a, k) => accumulate(&mut grads[*a], g.map(|x| x * k)),
                Op::Offset(a, _) => accumulate(&mut grads[*a], g),
                Op::Relu(a) => {
                    let da = zip_elementwise(&g, &eval.values[*a], |gv, x| if x > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads[*a], da);
                }
                Op::Softplus(a) => {
                    let da = zip_elementwise(&g, &eval.values[*a], |gv, x| gv * sigmoid(x));
                    accumulate(&mut grads[*a], da);
                }
                Op::Exp(a) => {
                    let da = zip_elementwise(&g, &eval.values[id], |gv, e| gv * e);
                    accumulate(&mut grads[*a], da);
                }
                Op::Ln(a) => {
                    let da = zip_elementwise(&g, &eval.values[*a], |gv, x| gv / x);
                    accumulate(&mut grads[*a], da);
                }
                Op::Softmax(a) => {
                    let s = &eval.values[id];
                    let mut da = Matrix::zeros(s.rows(), s.cols());
                    for r in 0..s.rows() {
                        let dot: f64 = g.row(r).iter().zip(s.row(r).iter()).map(|(x, y)| x * y).sum();
                        for c in 0..s.cols() {
                            da.set(r, c, s.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads[*a], da);
                }
                Op::LogSumExp(a) => {
                    // d/dx LSE = softmax(x), scaled by the row's upstream grad
                    let sm = row_softmax(&eval.values[*a]);
                    let mut da = sm;
                    for r in 0..da.rows() {
                        let gv = g.get(r, 0);
                        for v in da.row_mut(r) {
                            *v *= gv;
                        }
                    }
                    accumulate(&mut grads[*a], da);
                }
                Op::RowSum(a) => {
                    let src = &eval.values[*a];
                    let mut da = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..da.rows() {
                        let gv = g.get(r, 0);
                        for v in da.row_mut(r) {
                            *v = gv;
                        }
                    }
                    accumulate(&mut grads[*a], da);
                }
                Op::SubCol(a, col) => {
                    let mut dc = Matrix::zeros(g.rows(), 1);
                    for r in 0..g.rows() {
                        dc.set(r, 0, -g.row(r).iter().sum::<f64>());
                    }
                    accumulate(&mut grads[*col], dc);
                    accumulate(&mut grads[*a], g);
                }
                Op::SliceCols { node, start, len } => {
                    let src = &eval.values[*node];
                    let mut da = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        da.row_mut(r)[*start..*start + *len].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads[*node], da);
                }
                Op::GaussLogPdf { y, mean, sigma } => {
                    let (yv, mu, sg) = (&eval.values[*y], &eval.values[*mean], &eval.values[*sigma]);
                    let mut dmu = Matrix::zeros(mu.rows(), mu.cols());
                    let mut dsg = Matrix::zeros(mu.rows(), mu.cols());
                    let mut dy = Matrix::zeros(yv.rows(), 1);
                    for r in 0..mu.rows() {
                        let yr = yv.get(r, 0);
                        let mut dy_acc = 0.0;
                        for c in 0..mu.cols() {
                            let s = sg.get(r, c);
                            let diff = yr - mu.get(r, c);
                            let gv = g.get(r, c);
                            dmu.set(r, c, gv * diff / (s * s));
                            dsg.set(r, c, gv * (diff * diff / (s * s * s) - 1.0 / s));
                            dy_acc += gv * (-diff / (s * s));
                        }
                        dy.set(r, 0, dy_acc);
                    }
                    accumulate(&mut grads[*mean], dmu);
                    accumulate(&mut grads[*sigma], dsg);
                    accumulate(&mut grads[*y], dy);
                }
                Op::MeanAll(a) => {
                    let src = &eval.values[*a];
                    let n = (src.rows() * src.cols()) as f64;
                    let gv = g.scalar() / n;
                    let da = Matrix::from_vec(src.rows(), src.cols(), vec![gv; src.rows() * src.cols()]);
                    accumulate(&mut grads[*a], da);
                }
                Op::AddN(nodes) => {
                    for &n in nodes {
                        accumulate(&mut grads[n], g.clone());
                    }
                }
            }
        }

        if param_grad.iter().any(|v| !v.is_finite()) {
            return Err(GraphError::NonFinite { node: self.output, op: "backward" });
        }
        Ok(param_grad)
    }
}

fn accumulate(slot: &mut Option<Matrix>, delta: Matrix) {
    match slot {
        None => *slot = Some(delta),
        Some(m) => {
            for (a, &b) in m.data_mut().iter_mut().zip(delta.data().iter()) {
                *a += b;
            }
        }
    }
}

fn zip_elementwise(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    debug_assert_eq!(a.rows(), b.rows());
    debug_assert_eq!(a.cols(), b.cols());
    Matrix::from_vec(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data().iter()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn softplus(x: f64) -> f64 {
    // ln(1 + e^x), stable for large |x|
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn row_softmax(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        let row = m.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (c, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            out.set(r, c, e);
            sum += e;
        }
        for v in out.row_mut(r) {
            *v /= sum;
        }
    }
    out
}

fn row_log_sum_exp(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), 1);
    for r in 0..m.rows() {
        let row = m.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        out.set(r, 0, max + sum.ln());
    }
    out
}
