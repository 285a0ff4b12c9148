//! Evaluation machinery: error statistics, likelihood summaries, histogram
//! divergence, membership inference, and timing ratios.

use crate::autodiff::{streams, SeededRng};
use crate::data::{ColumnSchema, Domain, EncodedDataset};
use crate::models::{per_example_signals, ClassifierModel, GradientModel, ModelError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input")]
    Empty,
    #[error("relative error undefined for truth {0}; use absolute error")]
    NonPositiveTruth(f64),
    #[error("histograms have different bin edges")]
    MismatchedEdges,
    #[error("histogram needs at least 2 edges, got {0}")]
    TooFewEdges(usize),
    #[error("nonpositive timing: {0}")]
    NonPositiveTime(f64),
    #[error("membership inference needs at least {need} rows per side, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// 100 * |est - truth| / truth; QR ground truths are positive by
/// construction.
pub fn relative_error(est: f64, truth: f64) -> Result<f64, MetricsError> {
    if truth <= 0.0 {
        return Err(MetricsError::NonPositiveTruth(truth));
    }
    Ok(100.0 * (est - truth).abs() / truth)
}

/// |est - truth|; the QD path, where the truth is zero.
pub fn absolute_error(est: f64, truth: f64) -> f64 {
    (est - truth).abs()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    /// Normal-approximation 95% confidence half-width: 1.96 * sd / sqrt(n).
    pub ci_half_width: f64,
    pub n: usize,
}

/// Mean, interpolated median, nearest-rank 95th percentile, and CI.
pub fn summarize(errors: &[f64]) -> Result<ErrorStats, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = errors.len();
    let mean = errors.iter().sum::<f64>() / n as f64;
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let p95_idx = ((0.95 * n as f64).ceil() as usize).min(n - 1);
    let p95 = sorted[p95_idx];
    let ci_half_width = if n > 1 {
        let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1) as f64;
        1.96 * var.sqrt() / (n as f64).sqrt()
    } else {
        0.0
    };
    Ok(ErrorStats { mean, median, p95, ci_half_width, n })
}

/// Mean per-row model likelihood (mixture density for the MDN, joint
/// probability for the autoregressive model).
pub fn avg_likelihood<M: GradientModel>(
    model: &M,
    data: &EncodedDataset,
    rows: &[usize],
) -> Result<f64, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::Empty);
    }
    let lik = model.row_likelihood(data, rows)?;
    Ok(lik.iter().sum::<f64>() / lik.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// Normalized mass per bin (sums to 1).
    pub mass: Vec<f64>,
}

/// Bin values into the given edges; values outside are clipped into the
/// end bins; mass is normalized.
pub fn build_histogram(values: &[f64], edges: &[f64]) -> Result<Histogram, MetricsError> {
    if edges.len() < 2 {
        return Err(MetricsError::TooFewEdges(edges.len()));
    }
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let bins = edges.len() - 1;
    let mut counts = vec![0u64; bins];
    for &v in values {
        let mut idx = match edges.binary_search_by(|e| e.partial_cmp(&v).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        idx = idx.min(bins - 1);
        counts[idx] += 1;
    }
    let total = values.len() as f64;
    Ok(Histogram { edges: edges.to_vec(), mass: counts.iter().map(|&c| c as f64 / total).collect() })
}

/// Histogram edges for a column: one bin per integer for integer-valued
/// columns, otherwise 50 equal-width bins over the frozen domain.
pub fn histogram_edges(col: &ColumnSchema) -> Result<Vec<f64>, MetricsError> {
    let Domain::Numerical { min, max, .. } = &col.domain else {
        return Err(MetricsError::TooFewEdges(0));
    };
    if col.is_integral() && (max - min) as usize <= 1000 {
        let lo = *min as i64;
        let hi = *max as i64;
        Ok((lo..=hi + 1).map(|k| k as f64 - 0.5).collect())
    } else {
        let n = 50;
        Ok((0..=n).map(|i| min + (max - min) * i as f64 / n as f64).collect())
    }
}

/// Jensen-Shannon divergence in nats: 0 for identical histograms, ln 2 for
/// disjoint supports.
pub fn js_divergence(p: &Histogram, q: &Histogram) -> Result<f64, MetricsError> {
    if p.edges != q.edges {
        return Err(MetricsError::MismatchedEdges);
    }
    fn kl_to_mid(a: &[f64], m: &[f64]) -> f64 {
        a.iter()
            .zip(m.iter())
            .map(|(&x, &mid)| if x > 0.0 { x * (x / mid).ln() } else { 0.0 })
            .sum()
    }
    let mid: Vec<f64> =
        p.mass.iter().zip(q.mass.iter()).map(|(&a, &b)| 0.5 * (a + b)).collect();
    Ok(0.5 * kl_to_mid(&p.mass, &mid) + 0.5 * kl_to_mid(&q.mass, &mid))
}

/// t_baseline / t_method.
pub fn speedup(t_baseline: f64, t_method: f64) -> Result<f64, MetricsError> {
    if t_baseline <= 0.0 {
        return Err(MetricsError::NonPositiveTime(t_baseline));
    }
    if t_method <= 0.0 {
        return Err(MetricsError::NonPositiveTime(t_method));
    }
    Ok(t_baseline / t_method)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Loss,
    Confidence,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MiaResult {
    pub kind: AttackKind,
    /// Which rows played the member side ("forget_vs_validation" is the
    /// headline pairing; "retain_vs_validation" is also reported).
    #[serde(default)]
    pub pairing: String,
    /// Attack accuracy in percent, averaged over folds.
    pub accuracy: f64,
    pub folds: usize,
    pub n_members: usize,
    pub n_nonmembers: usize,
}

/// Membership inference against a classifier: a per-row scalar signal
/// (loss or max confidence) feeds a one-feature logistic attacker,
/// cross-validated over balanced folds.
pub fn mia_attack(
    kind: AttackKind,
    model: &ClassifierModel,
    data: &EncodedDataset,
    member_rows: &[usize],
    nonmember_rows: &[usize],
    folds: usize,
    seed: u64,
) -> Result<MiaResult, MetricsError> {
    let need = 2 * folds;
    if member_rows.len() < need || nonmember_rows.len() < need {
        return Err(MetricsError::TooFewRows {
            need,
            got: member_rows.len().min(nonmember_rows.len()),
        });
    }
    let signal = |rows: &[usize]| -> Result<Vec<f64>, MetricsError> {
        let s = per_example_signals(model, data, rows)?;
        Ok(match kind {
            AttackKind::Loss => s.loss,
            AttackKind::Confidence => s.confidence,
        })
    };
    let members = signal(member_rows)?;
    let nonmembers = signal(nonmember_rows)?;
    Ok(scalar_attack(kind, &members, &nonmembers, folds, seed))
}

/// The attack itself, on raw scalars. Balanced classes: the larger side is
/// subsampled to the smaller side's size.
pub fn scalar_attack(
    kind: AttackKind,
    members: &[f64],
    nonmembers: &[f64],
    folds: usize,
    seed: u64,
) -> MiaResult {
    let mut rng = SeededRng::new(seed, streams::MIA);
    let n = members.len().min(nonmembers.len());
    let pick = |signals: &[f64], rng: &mut SeededRng| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..signals.len()).collect();
        rng.shuffle(&mut idx);
        idx.truncate(n);
        idx.into_iter().map(|i| signals[i]).collect()
    };
    let members = pick(members, &mut rng);
    let nonmembers = pick(nonmembers, &mut rng);

    // labeled examples: member = 1, nonmember = 0
    let mut examples: Vec<(f64, f64)> = members
        .iter()
        .map(|&x| (x, 1.0))
        .chain(nonmembers.iter().map(|&x| (x, 0.0)))
        .collect();
    rng.shuffle(&mut examples);

    let fold_size = examples.len() / folds;
    let mut accuracies = Vec::with_capacity(folds);
    for f in 0..folds {
        let lo = f * fold_size;
        let hi = if f + 1 == folds { examples.len() } else { (f + 1) * fold_size };
        let test = &examples[lo..hi];
        let train: Vec<(f64, f64)> =
            examples[..lo].iter().chain(examples[hi..].iter()).copied().collect();
        let (w, b, mean, sd) = fit_logistic(&train);
        let hits = test
            .iter()
            .filter(|&&(x, y)| {
                let z = w * ((x - mean) / sd) + b;
                let pred = if z >= 0.0 { 1.0 } else { 0.0 };
                pred == y
            })
            .count();
        accuracies.push(hits as f64 / test.len() as f64);
    }
    MiaResult {
        kind,
        pairing: String::new(),
        accuracy: 100.0 * accuracies.iter().sum::<f64>() / folds as f64,
        folds,
        n_members: n,
        n_nonmembers: n,
    }
}

/// One-feature logistic regression by full-batch gradient descent on the
/// standardized signal. Returns (w, b, mean, sd).
fn fit_logistic(examples: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    let n = examples.len() as f64;
    let mean = examples.iter().map(|&(x, _)| x).sum::<f64>() / n;
    let var = examples.iter().map(|&(x, _)| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    let (mut w, mut b) = (0.0f64, 0.0f64);
    let lr = 0.5;
    for _ in 0..300 {
        let (mut gw, mut gb) = (0.0, 0.0);
        for &(x, y) in examples {
            let z = w * ((x - mean) / sd) + b;
            let p = 1.0 / (1.0 + (-z).exp());
            let d = p - y;
            gw += d * ((x - mean) / sd);
            gb += d;
        }
        w -= lr * gw / n;
        b -= lr * gb / n;
    }
    (w, b, mean, sd)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(110.0, 100.0).unwrap(), 10.0);
        assert_eq!(relative_error(100.0, 100.0).unwrap(), 0.0);
        assert_eq!(relative_error(0.0, 50.0).unwrap(), 100.0);
        assert!(relative_error(1.0, 0.0).is_err());
    }

    #[test]
    fn absolute_error_basics() {
        assert_eq!(absolute_error(0.09, 0.0), 0.09);
        assert_eq!(absolute_error(0.0, 0.0), 0.0);
        assert_eq!(absolute_error(3.0, 7.0), absolute_error(7.0, 3.0));
    }

    #[test]
    fn summarize_constant_vector() {
        let s = summarize(&[5.0, 5.0, 5.0, 5.0]).unwrap();
        assert_eq!(s.mean, 5.0);
        assert_eq!(s.median, 5.0);
        assert_eq!(s.ci_half_width, 0.0);
        assert_eq!(s.n, 4);
    }

    #[test]
    fn summarize_hand_ranked_percentile() {
        let values: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let s = summarize(&values).unwrap();
        assert_eq!(s.median, 49.5);
        assert_eq!(s.p95, 95.0);
    }

    #[test]
    fn ci_shrinks_with_sample_size() {
        let mut rng = SeededRng::new(3, 0);
        let big: Vec<f64> = (0..400).map(|_| rng.normal()).collect();
        let small = &big[..100];
        let s_small = summarize(small).unwrap();
        let s_big = summarize(&big).unwrap();
        let ratio = s_big.ci_half_width / s_small.ci_half_width;
        assert!((ratio - 0.5).abs() < 0.2 * 0.5, "CI ratio {ratio} should be near 1/2");
    }

    #[test]
    fn summarize_rejects_empty() {
        assert!(matches!(summarize(&[]), Err(MetricsError::Empty)));
    }

    fn hist(mass: &[f64]) -> Histogram {
        let edges: Vec<f64> = (0..=mass.len()).map(|i| i as f64).collect();
        Histogram { edges, mass: mass.to_vec() }
    }

    #[test]
    fn js_of_identical_is_zero() {
        let p = hist(&[0.25, 0.5, 0.25]);
        assert_eq!(js_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn js_of_disjoint_is_ln_two() {
        let p = hist(&[1.0, 0.0]);
        let q = hist(&[0.0, 1.0]);
        let js = js_divergence(&p, &q).unwrap();
        assert!((js - std::f64::consts::LN_2).abs() < 1e-12, "{js}");
    }

    #[test]
    fn js_is_symmetric_and_bounded() {
        let mut rng = SeededRng::new(17, 0);
        for _ in 0..50 {
            let raw_p: Vec<f64> = (0..8).map(|_| rng.uniform() + 1e-3).collect();
            let raw_q: Vec<f64> = (0..8).map(|_| rng.uniform() + 1e-3).collect();
            let norm = |v: &[f64]| {
                let s: f64 = v.iter().sum();
                v.iter().map(|x| x / s).collect::<Vec<f64>>()
            };
            let p = hist(&norm(&raw_p));
            let q = hist(&norm(&raw_q));
            let a = js_divergence(&p, &q).unwrap();
            let b = js_divergence(&q, &p).unwrap();
            assert!((a - b).abs() < 1e-12);
            assert!((0.0..=std::f64::consts::LN_2 + 1e-12).contains(&a));
        }
    }

    #[test]
    fn js_rejects_mismatched_edges() {
        let p = hist(&[1.0, 0.0]);
        let q = Histogram { edges: vec![0.0, 0.5, 1.0], mass: vec![0.5, 0.5] };
        assert!(matches!(js_divergence(&p, &q), Err(MetricsError::MismatchedEdges)));
    }

    #[test]
    fn histogram_mass_normalizes_and_clips() {
        let edges: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let mut rng = SeededRng::new(5, 0);
        let values: Vec<f64> = (0..10_000).map(|_| rng.uniform()).collect();
        let h = build_histogram(&values, &edges).unwrap();
        let total: f64 = h.mass.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        for &m in &h.mass {
            assert!((m - 0.1).abs() < 0.02, "uniform bin mass {m}");
        }
        // clipped outliers land in the end bins
        let h = build_histogram(&[-5.0, 0.5, 99.0], &edges).unwrap();
        assert!(h.mass[0] > 0.0 && h.mass[9] > 0.0);
        let single = build_histogram(&[0.35; 7], &edges).unwrap();
        assert_eq!(single.mass[3], 1.0);
    }

    #[test]
    fn histogram_rejects_degenerate_edges() {
        assert!(matches!(build_histogram(&[1.0], &[0.0]), Err(MetricsError::TooFewEdges(1))));
    }

    #[test]
    fn speedup_basics() {
        assert_eq!(speedup(10.0, 10.0).unwrap(), 1.0);
        assert_eq!(speedup(10.0, 1.0).unwrap(), 10.0);
        assert!(speedup(0.0, 1.0).is_err());
        assert!(speedup(1.0, -2.0).is_err());
    }

    #[test]
    fn attack_on_identical_distributions_is_chance() {
        let mut rng = SeededRng::new(11, 0);
        let signals: Vec<f64> = (0..400).map(|_| rng.normal()).collect();
        let r = scalar_attack(AttackKind::Loss, &signals[..200], &signals[200..], 5, 1);
        assert!(
            (45.0..=55.0).contains(&r.accuracy),
            "no-signal attack should be near chance, got {}",
            r.accuracy
        );
    }

    #[test]
    fn attack_on_separated_signals_succeeds() {
        let mut rng = SeededRng::new(13, 0);
        let members: Vec<f64> = (0..200).map(|_| rng.normal() * 0.1).collect();
        let nonmembers: Vec<f64> = (0..200).map(|_| 3.0 + rng.normal() * 0.1).collect();
        let r = scalar_attack(AttackKind::Loss, &members, &nonmembers, 5, 2);
        assert!(r.accuracy > 95.0, "separable attack accuracy {}", r.accuracy);
    }

    #[test]
    fn no_signal_attack_stays_near_chance_over_seeds() {
        for seed in 0..20 {
            let mut rng = SeededRng::new(100 + seed, 0);
            let members: Vec<f64> = (0..400).map(|_| rng.normal()).collect();
            let nonmembers: Vec<f64> = (0..400).map(|_| rng.normal()).collect();
            let r = scalar_attack(AttackKind::Confidence, &members, &nonmembers, 5, seed);
            assert!(
                (45.0..=55.0).contains(&r.accuracy),
                "seed {seed}: accuracy {}",
                r.accuracy
            );
        }
    }
}
