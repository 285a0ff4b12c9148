//! Exact query evaluation over row subsets: the ground truth every model
//! estimate is scored against.

use super::ast::{AggKind, Filter, FilterOp, QuerySpec};
use super::QueryError;
use crate::data::{Cell, EncodedDataset};

/// Result of an exact aggregate. An empty selection is a value for COUNT
/// and SUM (both 0), and an explicit marker for AVG.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AggValue {
    Value(f64),
    Empty,
}

impl AggValue {
    /// Numeric value, treating the empty AVG as 0 (the same convention the
    /// models use when their own count estimate is 0).
    pub fn or_zero(&self) -> f64 {
        match self {
            AggValue::Value(v) => *v,
            AggValue::Empty => 0.0,
        }
    }
}

/// Filters with the column name resolved to an index, so a workload scan
/// does not re-resolve per row.
struct BoundFilter {
    col: usize,
    op: FilterOp,
}

fn bind_filters(data: &EncodedDataset, filters: &[Filter]) -> Result<Vec<BoundFilter>, QueryError> {
    filters
        .iter()
        .map(|f| {
            let col = data.column_index(&f.column).map_err(QueryError::Data)?;
            Ok(BoundFilter { col, op: f.op.clone() })
        })
        .collect()
}

fn row_matches(data: &EncodedDataset, row: usize, filters: &[BoundFilter]) -> bool {
    filters.iter().all(|f| match (&f.op, data.raw_cell(f.col, row)) {
        (FilterOp::EqCat(v), Cell::Cat(s)) => s == *v,
        (FilterOp::EqNum(v), Cell::Num(x)) => x == *v,
        (FilterOp::Ge(v), Cell::Num(x)) => x >= *v,
        (FilterOp::Le(v), Cell::Num(x)) => x <= *v,
        (FilterOp::Range { lo, hi }, Cell::Num(x)) => *lo <= x && x <= *hi,
        _ => false,
    })
}

/// Full scan of the given rows.
pub fn evaluate_exact(
    data: &EncodedDataset,
    rows: &[usize],
    q: &QuerySpec,
) -> Result<AggValue, QueryError> {
    let QuerySpec::Aggregate { agg, column, filters, .. } = q else {
        return Err(QueryError::NotAnAggregate);
    };
    let bound = bind_filters(data, filters)?;
    let agg_col = match column {
        Some(name) => Some(data.column_index(name).map_err(QueryError::Data)?),
        None => None,
    };

    let mut count = 0u64;
    let mut sum = 0.0;
    for &r in rows {
        if !row_matches(data, r, &bound) {
            continue;
        }
        count += 1;
        if let Some(c) = agg_col {
            sum += data.raw_num(c, r).ok_or_else(|| QueryError::TypeMismatch {
                column: column.clone().unwrap_or_default(),
                message: "aggregate over a categorical column".into(),
            })?;
        }
    }

    Ok(match agg {
        AggKind::Count => AggValue::Value(count as f64),
        AggKind::Sum => AggValue::Value(sum),
        AggKind::Avg => {
            if count == 0 {
                AggValue::Empty
            } else {
                AggValue::Value(sum / count as f64)
            }
        }
    })
}

/// Indices of the rows (within the given subset) matching the query filters.
pub fn matching_rows(
    data: &EncodedDataset,
    rows: &[usize],
    filters: &[Filter],
) -> Result<Vec<usize>, QueryError> {
    let bound = bind_filters(data, filters)?;
    Ok(rows.iter().copied().filter(|&r| row_matches(data, r, &bound)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{freeze_encoding, numerical_domain, ColumnSchema, Table};

    fn ages_fixture() -> EncodedDataset {
        let ages = [25.0, 32.0, 33.0, 60.0];
        let schema = vec![ColumnSchema { name: "age".into(), domain: numerical_domain(&ages) }];
        let rows = ages.iter().map(|&a| vec![Cell::Num(a)]).collect();
        freeze_encoding(&Table::new(schema, rows).unwrap()).unwrap()
    }

    fn agg(agg: AggKind, column: Option<&str>, filters: Vec<Filter>) -> QuerySpec {
        QuerySpec::Aggregate {
            agg,
            column: column.map(|s| s.to_string()),
            table: "t".into(),
            filters,
        }
    }

    #[test]
    fn count_range_on_fixture() {
        let ds = ages_fixture();
        let q = agg(AggKind::Count, None, vec![Filter::range("age", 30.0, 35.0)]);
        let rows: Vec<usize> = (0..ds.len()).collect();
        assert_eq!(evaluate_exact(&ds, &rows, &q).unwrap(), AggValue::Value(2.0));
    }

    #[test]
    fn sum_over_empty_selection_is_zero() {
        let ds = ages_fixture();
        let q = agg(AggKind::Sum, Some("age"), vec![Filter::range("age", 100.0, 200.0)]);
        let rows: Vec<usize> = (0..ds.len()).collect();
        assert_eq!(evaluate_exact(&ds, &rows, &q).unwrap(), AggValue::Value(0.0));
    }

    #[test]
    fn avg_on_fixture_band() {
        let ds = ages_fixture();
        let q = agg(AggKind::Avg, Some("age"), vec![Filter::range("age", 30.0, 35.0)]);
        let rows: Vec<usize> = (0..ds.len()).collect();
        assert_eq!(evaluate_exact(&ds, &rows, &q).unwrap(), AggValue::Value(32.5));
    }

    #[test]
    fn avg_over_empty_selection_is_marker() {
        let ds = ages_fixture();
        let q = agg(AggKind::Avg, Some("age"), vec![Filter::range("age", 100.0, 200.0)]);
        let rows: Vec<usize> = (0..ds.len()).collect();
        assert_eq!(evaluate_exact(&ds, &rows, &q).unwrap(), AggValue::Empty);
        assert_eq!(evaluate_exact(&ds, &rows, &q).unwrap().or_zero(), 0.0);
    }

    #[test]
    fn count_is_additive_over_disjoint_row_sets() {
        let ds = ages_fixture();
        let q = agg(AggKind::Count, None, vec![Filter::range("age", 20.0, 60.0)]);
        let all: Vec<usize> = (0..ds.len()).collect();
        let (a, b) = (vec![0, 1], vec![2, 3]);
        let total = evaluate_exact(&ds, &all, &q).unwrap().or_zero();
        let pa = evaluate_exact(&ds, &a, &q).unwrap().or_zero();
        let pb = evaluate_exact(&ds, &b, &q).unwrap().or_zero();
        assert_eq!(total, pa + pb);
    }
}
