//! Minimal dense linear algebra with reverse-mode differentiation.
//!
//! Enough machinery for small fully-connected networks: matrices, a static
//! computation graph with forward/backward passes, SGD/Adam with decay
//! schedules, and seeded random streams.

mod graph;
mod matrix;
mod optim;
mod rng;

pub use graph::{Evaluation, Graph, GraphBuilder, GraphError, NodeId, Op, ParamBlock};
pub use matrix::Matrix;
pub use optim::{clip_l2_norm, Direction, OptMethod, OptimConfig, OptimError, OptimState};
pub use rng::{derive_seed, streams, SeededRng};

/// Scaled-normal weight initialization (std = 1/sqrt(fan_in)) for every
/// weight block; biases start at zero. Head-specific inits are layered on
/// top by the models that need them.
pub fn init_params(graph: &Graph, rng: &mut SeededRng) -> Vec<f64> {
    let mut params = vec![0.0; graph.param_len()];
    for block in graph.param_blocks() {
        if block.rows == 1 {
            // bias row
            continue;
        }
        let std = 1.0 / (block.rows as f64).sqrt();
        for slot in params[block.offset..block.offset + block.rows * block.cols].iter_mut() {
            *slot = rng.normal() * std;
        }
    }
    params
}

/// Central finite-difference gradient of `loss` around `params`. Test-side
/// oracle for gradient checks; deliberately independent of the graph
/// backward pass.
pub fn finite_difference_grad(
    mut loss: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    epsilon: f64,
) -> Vec<f64> {
    let mut grad = vec![0.0; params.len()];
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + epsilon;
        let plus = loss(&work);
        work[i] = orig - epsilon;
        let minus = loss(&work);
        work[i] = orig;
        grad[i] = (plus - minus) / (2.0 * epsilon);
    }
    grad
}

/// Largest relative error between an analytic and a reference gradient,
/// with an absolute floor so near-zero entries do not blow up the ratio.
pub fn max_relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(reference.iter())
        .map(|(&a, &r)| (a - r).abs() / r.abs().max(a.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_input(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect())
    }

    #[test]
    fn identity_graph_returns_input() {
        let mut b = GraphBuilder::new();
        let x = b.input(2);
        let g = b.finish(x);
        let input = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let eval = g.forward(&[input.clone()], &[]).unwrap();
        assert_eq!(eval.output(), &input);
    }

    #[test]
    fn relu_forward() {
        let mut b = GraphBuilder::new();
        let x = b.input(2);
        let r = b.relu(x);
        let g = b.finish(r);
        let eval = g.forward(&[Matrix::from_vec(1, 2, vec![-1.0, 2.0])], &[]).unwrap();
        assert_eq!(eval.output().data(), &[0.0, 2.0]);
    }

    #[test]
    fn two_layer_mlp_matches_hand_unrolled_arithmetic() {
        // 2x2 weights chosen by a seeded stream, 1x2 input; the expected
        // output is computed below with scalar arithmetic only.
        let mut b = GraphBuilder::new();
        let x = b.input(2);
        let h = b.dense(x, 2, 2);
        let h = b.relu(h);
        let out = b.dense(h, 2, 1);
        let g = b.finish(out);

        let mut rng = SeededRng::new(7, streams::INIT);
        let params = init_params(&g, &mut rng);
        // blocks: w1 [2,2] b1 [1,2] w2 [2,1] b2 [1,1]
        let (w1, rest) = params.split_at(4);
        let (b1, rest) = rest.split_at(2);
        let (w2, b2) = rest.split_at(2);

        let input = [0.3, -0.7];
        let h0 = (input[0] * w1[0] + input[1] * w1[2] + b1[0]).max(0.0);
        let h1 = (input[0] * w1[1] + input[1] * w1[3] + b1[1]).max(0.0);
        let expected = h0 * w2[0] + h1 * w2[1] + b2[0];

        let eval = g.forward(&[Matrix::from_vec(1, 2, input.to_vec())], &params).unwrap();
        assert!((eval.output().scalar() - expected).abs() < 1e-12);
    }

    #[test]
    fn square_loss_gradient() {
        // loss = mean(x * x) with x a 1x1 parameter at 3.0 -> d/dx = 6
        let mut b = GraphBuilder::new();
        let p = b.param(1, 1);
        let sq = b.mul(p, p);
        let loss = b.mean_all(sq);
        let g = b.finish(loss);
        let eval = g.forward(&[], &[3.0]).unwrap();
        let grad = g.backward(&eval).unwrap();
        assert!((grad[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut b = GraphBuilder::new();
        let p = b.param(1, 2);
        let g = b.finish(p);
        let eval = g.forward(&[], &[1.0, 2.0]).unwrap();
        assert!(matches!(g.backward(&eval), Err(GraphError::NonScalarLoss { .. })));
    }

    #[test]
    fn gauss_log_pdf_stationary_at_mean() {
        // d/dmu log N(y; mu, sigma) = (y - mu)/sigma^2 = 0 at y = mu
        let mut b = GraphBuilder::new();
        let y = b.input(1);
        let mu = b.param(1, 1);
        let sg_raw = b.param(1, 1);
        let sg = b.softplus(sg_raw);
        let lp = b.gauss_log_pdf(y, mu, sg);
        let loss = b.mean_all(lp);
        let g = b.finish(loss);
        let params = vec![0.4, 1.0];
        let eval = g.forward(&[Matrix::from_vec(1, 1, vec![0.4])], &params).unwrap();
        let grad = g.backward(&eval).unwrap();
        assert!(grad[0].abs() < 1e-14, "d/dmu at the mean should vanish, got {}", grad[0]);
    }

    #[test]
    fn softmax_cross_entropy_gradient_matches_finite_differences() {
        // logits = x @ W + b, loss = mean CE against fixed one-hot targets
        let mut builder = GraphBuilder::new();
        let x = builder.input(3);
        let onehot = builder.input(4);
        let logits = builder.dense(x, 3, 4);
        let logsm = builder.log_softmax(logits);
        let prod = builder.mul(logsm, onehot);
        let picked = builder.row_sum(prod);
        let mean = builder.mean_all(picked);
        let loss = builder.scale(mean, -1.0);
        let g = builder.finish(loss);

        let mut rng = SeededRng::new(11, streams::INIT);
        let params = init_params(&g, &mut rng);
        let xs = fixture_input(5, 3, &mut rng);
        let mut hot = Matrix::zeros(5, 4);
        for r in 0..5 {
            hot.set(r, r % 4, 1.0);
        }

        let eval = g.forward(&[xs.clone(), hot.clone()], &params).unwrap();
        let analytic = g.backward(&eval).unwrap();
        let numeric = finite_difference_grad(
            |p| g.forward(&[xs.clone(), hot.clone()], p).unwrap().loss(),
            &params,
            1e-5,
        );
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn every_primitive_gradient_matches_finite_differences() {
        // One composite graph touching every differentiable primitive, checked
        // on many random fixtures.
        let build = || {
            let mut b = GraphBuilder::new();
            let x = b.input(4);
            let y = b.input(1);
            let h = b.dense(x, 4, 6);
            let h = b.relu(h);
            let sliced = b.slice_cols(h, 1, 4);
            let w = b.param(4, 3);
            let z = b.matmul(sliced, w);
            let sm = b.softmax(z);
            let lg = b.ln(sm);
            let ex = b.exp(lg);
            let sp = b.softplus(ex);
            let mu = b.offset(sp, -0.2);
            let sg_raw = b.param(1, 3);
            let sg_sp = b.softplus(sg_raw);
            // broadcast sigma over the batch via add_bias on zeros
            let zero = b.scale(mu, 0.0);
            let sg = b.add_bias(zero, sg_sp);
            let lp = b.gauss_log_pdf(y, mu, sg);
            let lse = b.log_sum_exp(lp);
            let shifted = b.sub_col(lp, lse);
            let rs = b.row_sum(shifted);
            let total_a = b.mean_all(rs);
            let total_b = b.mean_all(lse);
            let diff = b.sub(total_a, total_b);
            let scaled = b.scale(diff, 0.7);
            let summed = b.add_n(vec![scaled, total_a, total_b]);
            let again = b.add(summed, total_a);
            let prod = b.mul(again, total_b);
            b.finish(prod)
        };
        let g = build();
        for trial in 0..100 {
            let mut rng = SeededRng::new(trial, streams::INIT);
            let mut params = init_params(&g, &mut rng);
            for p in params.iter_mut() {
                if *p == 0.0 {
                    *p = rng.normal() * 0.3;
                }
            }
            let xs = fixture_input(3, 4, &mut rng);
            let ys = fixture_input(3, 1, &mut rng);
            let eval = g.forward(&[xs.clone(), ys.clone()], &params).unwrap();
            let analytic = g.backward(&eval).unwrap();
            let numeric = finite_difference_grad(
                |p| g.forward(&[xs.clone(), ys.clone()], p).unwrap().loss(),
                &params,
                1e-5,
            );
            let err = max_relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "trial {trial}: max relative error {err}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut b = GraphBuilder::new();
        let x = b.input(3);
        let h = b.dense(x, 3, 8);
        let h = b.relu(h);
        let o = b.dense(h, 8, 1);
        let loss = b.mean_all(o);
        let g = b.finish(loss);

        let run = || {
            let mut rng = SeededRng::new(21, streams::INIT);
            let params = init_params(&g, &mut rng);
            let xs = fixture_input(4, 3, &mut rng);
            let eval = g.forward(&[xs], &params).unwrap();
            let grads = g.backward(&eval).unwrap();
            (eval.loss().to_bits(), grads.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_intermediate_reports_node() {
        let mut b = GraphBuilder::new();
        let x = b.input(1);
        let l = b.ln(x);
        let loss = b.mean_all(l);
        let g = b.finish(loss);
        let err = g.forward(&[Matrix::from_vec(1, 1, vec![-1.0])], &[]).unwrap_err();
        match err {
            GraphError::NonFinite { node, .. } => assert_eq!(node, 1),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut b = GraphBuilder::new();
        let x = b.input(3);
        let g = b.finish(x);
        let err = g.forward(&[Matrix::zeros(2, 2)], &[]).unwrap_err();
        assert!(matches!(err, GraphError::InputShape { expected: 3, got: 2, .. }));
    }
}
