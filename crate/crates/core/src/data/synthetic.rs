//! Seeded synthetic datasets for experiments and tests.
//!
//! `census_like` mimics the shape of the UCI Adult table at desk scale:
//! a skewed categorical country column, an age column whose density puts
//! roughly 10% of rows in [30, 35] (the standard delete range in the
//! shipped configs), a 5-class marital-status label, and a few correlated
//! extra columns so the autoregressive model has structure to learn.

use super::schema::{numerical_domain, Cell, ColumnSchema, Domain, Table};
use crate::autodiff::SeededRng;

const COUNTRIES: [(&str, f64); 8] = [
    ("US", 0.60),
    ("MX", 0.10),
    ("PH", 0.06),
    ("DE", 0.06),
    ("IN", 0.06),
    ("CA", 0.05),
    ("UK", 0.04),
    ("JP", 0.03),
];

const MARITAL: [&str; 5] = ["Divorced", "Married", "Never-married", "Separated", "Widowed"];

fn clamp_round(v: f64, lo: f64, hi: f64) -> f64 {
    v.round().clamp(lo, hi)
}

/// Draw an age from a three-component mixture (young / mid / old careers).
/// The mid component is centered so that P(30 <= age <= 35) is ~0.10.
fn draw_age(rng: &mut SeededRng) -> f64 {
    let u = rng.uniform();
    let raw = if u < 0.25 {
        25.0 + rng.normal() * 5.0
    } else if u < 0.75 {
        42.0 + rng.normal() * 8.0
    } else {
        63.0 + rng.normal() * 9.0
    };
    clamp_round(raw, 17.0, 90.0)
}

fn draw_country(rng: &mut SeededRng) -> usize {
    let weights: Vec<f64> = COUNTRIES.iter().map(|&(_, w)| w).collect();
    rng.weighted(&weights)
}

fn draw_marital(rng: &mut SeededRng, age: f64) -> usize {
    // Age-dependent class mix; overall Divorced mass lands near 10%.
    let w = if age < 30.0 {
        [0.04, 0.25, 0.62, 0.05, 0.04]
    } else if age < 50.0 {
        [0.14, 0.55, 0.20, 0.07, 0.04]
    } else {
        [0.12, 0.55, 0.08, 0.05, 0.20]
    };
    rng.weighted(&w)
}

/// Generate a census-like table.
///
/// Columns: age (num), country (cat), marital (cat, the classification
/// label), education_num (num), hours_per_week (num), sex (cat).
pub fn census_like(n: usize, seed: u64) -> Table {
    let mut rng = SeededRng::new(seed, 0xC3_05);
    let mut ages = Vec::with_capacity(n);
    let mut rows: Vec<Vec<Cell>> = Vec::with_capacity(n);
    let mut education = Vec::with_capacity(n);
    let mut hours = Vec::with_capacity(n);

    for _ in 0..n {
        let country = draw_country(&mut rng);
        // non-US rows skew a little younger
        let mut age = draw_age(&mut rng);
        if country != 0 {
            age = clamp_round(age - 3.0, 17.0, 90.0);
        }
        let marital = draw_marital(&mut rng, age);
        let edu = clamp_round(10.0 + rng.normal() * 2.5 + if country == 0 { 0.5 } else { -0.5 }, 1.0, 16.0);
        let hrs = clamp_round(
            40.0 + rng.normal() * 9.0 + if marital == 1 { 2.0 } else { 0.0 } - (age - 45.0).max(0.0) * 0.25,
            5.0,
            90.0,
        );
        let sex = if rng.uniform() < 0.5 { "Male" } else { "Female" };

        ages.push(age);
        education.push(edu);
        hours.push(hrs);
        rows.push(vec![
            Cell::Num(age),
            Cell::Cat(COUNTRIES[country].0.to_string()),
            Cell::Cat(MARITAL[marital].to_string()),
            Cell::Num(edu),
            Cell::Num(hrs),
            Cell::Cat(sex.to_string()),
        ]);
    }

    let schema = vec![
        ColumnSchema { name: "age".into(), domain: numerical_domain(&ages) },
        ColumnSchema {
            name: "country".into(),
            domain: Domain::Categorical({
                let mut v: Vec<String> = COUNTRIES.iter().map(|&(c, _)| c.to_string()).collect();
                v.sort();
                v
            }),
        },
        ColumnSchema {
            name: "marital".into(),
            domain: Domain::Categorical(MARITAL.iter().map(|s| s.to_string()).collect()),
        },
        ColumnSchema { name: "education_num".into(), domain: numerical_domain(&education) },
        ColumnSchema { name: "hours_per_week".into(), domain: numerical_domain(&hours) },
        ColumnSchema {
            name: "sex".into(),
            domain: Domain::Categorical(vec!["Female".into(), "Male".into()]),
        },
    ];
    Table::new(schema, rows).expect("generated rows match schema")
}

/// Gaussian class blobs for classifier experiments.
///
/// The last class sits twice as far out with half the spread, so it is
/// geometrically isolated — the class the unlearning experiments delete.
/// `spread` controls how much the remaining classes overlap: small values
/// keep them separable, larger values force the network to keep training
/// on the retain set (and, past ~1.5, to memorize individual rows, which
/// is what membership-inference experiments need).
pub fn class_blobs(n: usize, classes: usize, spread: f64, seed: u64) -> Table {
    assert!(classes >= 2 && classes <= 8);
    let mut rng = SeededRng::new(seed, 0xB1_0B);
    let centers: Vec<(f64, f64)> = (0..classes)
        .map(|k| {
            let angle = k as f64 / classes as f64 * std::f64::consts::TAU;
            let radius = if k + 1 == classes { 8.0 } else { 4.0 };
            (radius * angle.cos(), radius * angle.sin())
        })
        .collect();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        // classes are drawn, not assigned round-robin: row-index based
        // selective deletes must not correlate with the label
        let k = rng.below(classes);
        let s = if k + 1 == classes { spread * 0.5 } else { spread };
        let x = centers[k].0 + rng.normal() * s;
        let y = centers[k].1 + rng.normal() * s;
        xs.push(x);
        ys.push(y);
        rows.push(vec![Cell::Num(x), Cell::Num(y), Cell::Cat(format!("c{k}"))]);
    }
    let schema = vec![
        ColumnSchema { name: "x".into(), domain: numerical_domain(&xs) },
        ColumnSchema { name: "y".into(), domain: numerical_domain(&ys) },
        ColumnSchema {
            name: "label".into(),
            domain: Domain::Categorical((0..classes).map(|k| format!("c{k}")).collect()),
        },
    ];
    Table::new(schema, rows).expect("generated rows match schema")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn census_deterministic_and_sized() {
        let a = census_like(500, 3);
        let b = census_like(500, 3);
        assert_eq!(a.cardinality(), 500);
        assert_eq!(a.rows()[17], b.rows()[17]);
        assert_eq!(a.schema().len(), 6);
    }

    #[test]
    fn census_delete_band_near_ten_percent() {
        let t = census_like(10_000, 0);
        let in_band = t
            .rows()
            .iter()
            .filter(|r| matches!(r[0], Cell::Num(a) if (30.0..=35.0).contains(&a)))
            .count();
        let frac = in_band as f64 / t.cardinality() as f64;
        assert!((0.06..=0.14).contains(&frac), "band fraction {frac}");
    }

    #[test]
    fn census_divorced_near_ten_percent() {
        let t = census_like(10_000, 0);
        let divorced = t
            .rows()
            .iter()
            .filter(|r| matches!(&r[2], Cell::Cat(s) if s == "Divorced"))
            .count();
        let frac = divorced as f64 / t.cardinality() as f64;
        assert!((0.06..=0.16).contains(&frac), "divorced fraction {frac}");
    }

    #[test]
    fn blobs_have_roughly_balanced_uncorrelated_classes() {
        let t = class_blobs(4000, 4, 0.5, 1);
        for k in 0..4 {
            let label = format!("c{k}");
            let count = t
                .rows()
                .iter()
                .filter(|r| matches!(&r[2], Cell::Cat(s) if *s == label))
                .count();
            assert!((800..=1200).contains(&count), "class {k}: {count}");
        }
        // the label must not follow the row index (selective deletes key
        // off row position)
        let stride_counts: Vec<usize> = (0..4)
            .map(|k| {
                let label = format!("c{k}");
                t.rows()
                    .iter()
                    .step_by(4)
                    .filter(|r| matches!(&r[2], Cell::Cat(s) if *s == label))
                    .count()
            })
            .collect();
        assert!(stride_counts.iter().all(|&c| c < 500), "stride-aligned labels: {stride_counts:?}");
    }
}
