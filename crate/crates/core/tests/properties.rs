//! Property tests for the cross-cutting invariants: the retain/delete
//! partition, parse/render round-trips, and oracle additivity.

use lethe_core::data::{
    apply_delete, freeze_encoding, numerical_domain, Cell, ColumnSchema, DeleteSpec, Domain, Table,
};
use lethe_core::query::{evaluate_exact, parse, render, AggKind, Filter, FilterOp, QuerySpec};
use proptest::prelude::*;

fn ages_dataset(ages: &[f64]) -> lethe_core::data::EncodedDataset {
    let schema = vec![
        ColumnSchema { name: "age".into(), domain: numerical_domain(ages) },
        ColumnSchema {
            name: "country".into(),
            domain: Domain::Categorical(vec!["MX".into(), "US".into()]),
        },
    ];
    let rows = ages
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            vec![Cell::Num(a), Cell::Cat(if i % 3 == 0 { "MX".into() } else { "US".into() })]
        })
        .collect();
    freeze_encoding(&Table::new(schema, rows).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// |retain| + |delete| = |dataset| and the sets never intersect, for
    /// any delete range and any selective pattern.
    #[test]
    fn partition_invariant(
        ages in prop::collection::vec(15.0f64..80.0, 10..120),
        lo in 10.0f64..70.0,
        width in 0.0f64..30.0,
        modulus in 1u64..6,
    ) {
        let data = ages_dataset(&ages);
        let residues: Vec<u64> = (0..modulus).filter(|r| r % 2 == 0).collect();
        let specs = vec![
            DeleteSpec::full_range("age", lo, lo + width),
            DeleteSpec::selective_range("age", lo, lo + width, modulus, residues),
        ];
        for spec in specs {
            let split = apply_delete(&data, &spec, None).unwrap();
            prop_assert_eq!(split.retain().len() + split.delete().len(), data.len());
            let retained: std::collections::BTreeSet<_> = split.retain().iter().collect();
            prop_assert!(split.delete().iter().all(|r| !retained.contains(r)));
        }
    }

    /// render(parse(q)) == q for randomly built query specs.
    #[test]
    fn parse_render_round_trip(
        agg_pick in 0usize..3,
        lo in 0.0f64..50.0,
        width in 0.0f64..40.0,
        eq_cat in prop::bool::ANY,
        ge in prop::option::of(0.0f64..90.0),
    ) {
        let schema = vec![
            ColumnSchema { name: "age".into(), domain: numerical_domain(&[10.0, 95.0]) },
            ColumnSchema {
                name: "country".into(),
                domain: Domain::Categorical(vec!["MX".into(), "US".into()]),
            },
        ];
        let agg = [AggKind::Count, AggKind::Sum, AggKind::Avg][agg_pick];
        let mut filters = vec![Filter::range("age", lo, lo + width)];
        if eq_cat {
            filters.push(Filter::eq_cat("country", "US"));
        }
        if let Some(v) = ge {
            filters.push(Filter { column: "age".into(), op: FilterOp::Ge(v) });
        }
        let q = QuerySpec::Aggregate {
            agg,
            column: if agg == AggKind::Count { None } else { Some("age".into()) },
            table: "census".into(),
            filters,
        };
        let text = render(&q);
        let parsed = parse(&text, &schema).unwrap();
        prop_assert_eq!(&parsed, &q, "{}", text);
        // a second round trip is a fixed point
        prop_assert_eq!(render(&parsed), text);
    }

    /// COUNT and SUM are additive over disjoint row sets.
    #[test]
    fn oracle_additivity(
        ages in prop::collection::vec(15.0f64..80.0, 12..100),
        split_at in 1usize..11,
        lo in 10.0f64..70.0,
        width in 1.0f64..40.0,
    ) {
        let data = ages_dataset(&ages);
        let cut = split_at.min(data.len() - 1);
        let left: Vec<usize> = (0..cut).collect();
        let right: Vec<usize> = (cut..data.len()).collect();
        let all: Vec<usize> = (0..data.len()).collect();
        for agg in [AggKind::Count, AggKind::Sum] {
            let q = QuerySpec::Aggregate {
                agg,
                column: if agg == AggKind::Count { None } else { Some("age".into()) },
                table: "t".into(),
                filters: vec![Filter::range("age", lo, lo + width)],
            };
            let total = evaluate_exact(&data, &all, &q).unwrap().or_zero();
            let a = evaluate_exact(&data, &left, &q).unwrap().or_zero();
            let b = evaluate_exact(&data, &right, &q).unwrap().or_zero();
            prop_assert!((total - (a + b)).abs() < 1e-9);
        }
    }

    /// Encoding stability: applying a delete never changes the frozen
    /// domains, so encode/decode round-trips are unaffected.
    #[test]
    fn encoding_stable_under_delete(
        ages in prop::collection::vec(15.0f64..80.0, 10..60),
        lo in 10.0f64..70.0,
        width in 0.0f64..30.0,
    ) {
        let data = ages_dataset(&ages);
        let digest_before = data.domain_digest();
        let spec = DeleteSpec::full_range("age", lo, lo + width);
        let split = apply_delete(&data, &spec, None).unwrap();
        prop_assert_eq!(split.data().domain_digest(), digest_before);
        for r in 0..data.len().min(8) {
            prop_assert_eq!(split.data().decode_row(r), data.decode_row(r));
        }
    }
}
