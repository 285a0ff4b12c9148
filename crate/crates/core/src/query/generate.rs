//! Seeded workload generation.
//!
//! Two generator families, one per downstream task:
//!
//! * selectivity-estimation workloads draw a filter count, anchor on a
//!   uniformly chosen row, and assign `=`, `>=`, `<=` operators to the
//!   filtered columns (equality only for small domains);
//! * approximate-query-processing workloads combine one categorical
//!   equality with one numerical range and a COUNT/SUM/AVG aggregate.
//!
//! Query-Retain (QR) workloads anchor on retained rows; Query-Delete (QD)
//! workloads anchor on deleted rows and, under full deletion, clamp the
//! range on the deleted column inside the deleted region so the ground
//! truth after deletion is exactly zero.

use super::ast::{AggKind, Filter, FilterOp, QuerySpec};
use super::oracle::{evaluate_exact, AggValue};
use super::QueryError;
use crate::autodiff::{streams, SeededRng};
use crate::data::{
    Cell, ColumnKind, ColumnSchema, DeleteMode, DeletePredicate, DeleteSpec, SplitState,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadLabel {
    QueryRetain,
    QueryDelete,
}

impl WorkloadLabel {
    pub fn name(&self) -> &'static str {
        match self {
            WorkloadLabel::QueryRetain => "qr",
            WorkloadLabel::QueryDelete => "qd",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Workload {
    pub label: WorkloadLabel,
    pub queries: Vec<QuerySpec>,
    /// Ground truth per query, evaluated over the retained rows.
    pub truths: Vec<f64>,
}

/// Largest representable value strictly below `hi` on this column (one step
/// on integer-valued columns).
fn before(col: &ColumnSchema, hi: f64) -> f64 {
    if col.is_integral() {
        hi - 1.0
    } else {
        f64::next_down(hi)
    }
}

fn after(col: &ColumnSchema, lo: f64) -> f64 {
    if col.is_integral() {
        lo + 1.0
    } else {
        f64::next_up(lo)
    }
}

struct DeleteRegion {
    column: usize,
    lo: f64,
    hi: f64,
    full: bool,
}

fn delete_region(
    split: &SplitState,
    spec: Option<&DeleteSpec>,
) -> Result<Option<DeleteRegion>, QueryError> {
    let Some(spec) = spec else { return Ok(None) };
    let column = split.data().column_index(&spec.column).map_err(QueryError::Data)?;
    let (lo, hi) = match &spec.predicate {
        DeletePredicate::NumericRange { lo, hi } => (*lo, *hi),
        // Categorical deletes have no numeric region to clamp against.
        DeletePredicate::CategoryEquals { .. } => return Ok(None),
    };
    Ok(Some(DeleteRegion { column, lo, hi, full: spec.mode == DeleteMode::Full }))
}

/// Under full deletion, QR filters must not overlap the deleted region:
/// truncate one-sided operators at the region boundary. Returns `None`
/// when the filter would collapse to an empty range (caller resamples).
fn exclude_overlap(op: FilterOp, col: &ColumnSchema, region: &DeleteRegion) -> Option<FilterOp> {
    let (rlo, rhi) = (region.lo, region.hi);
    match op {
        FilterOp::Ge(v) => {
            if v < rlo {
                let hi = before(col, rlo);
                if v <= hi {
                    Some(FilterOp::Range { lo: v, hi })
                } else {
                    None
                }
            } else if v <= rhi {
                // anchor values come from retained rows, which cannot sit
                // inside a fully deleted region
                Some(FilterOp::Ge(after(col, rhi)))
            } else {
                Some(FilterOp::Ge(v))
            }
        }
        FilterOp::Le(v) => {
            if v > rhi {
                let lo = after(col, rhi);
                if lo <= v {
                    Some(FilterOp::Range { lo, hi: v })
                } else {
                    None
                }
            } else if v >= rlo {
                Some(FilterOp::Le(before(col, rlo)))
            } else {
                Some(FilterOp::Le(v))
            }
        }
        FilterOp::Range { lo, hi } => {
            // ranges produced by the AQP generator; truncate at the boundary
            if hi < rlo || lo > rhi {
                Some(FilterOp::Range { lo, hi })
            } else if lo < rlo {
                Some(FilterOp::Range { lo, hi: before(col, rlo) })
            } else if hi > rhi {
                Some(FilterOp::Range { lo: after(col, rhi), hi })
            } else {
                None
            }
        }
        other => Some(other),
    }
}

fn anchor_rows<'a>(
    split: &'a SplitState,
    label: WorkloadLabel,
) -> Result<&'a [usize], QueryError> {
    let rows = match label {
        WorkloadLabel::QueryRetain => split.retain(),
        WorkloadLabel::QueryDelete => split.delete(),
    };
    if rows.is_empty() {
        return Err(QueryError::EmptyAnchorSet(label.name()));
    }
    Ok(rows)
}

/// Ground truth for a generated query: exact evaluation over retained rows.
/// Under full deletion QD queries are constructed inside the deleted region,
/// which forces this to zero.
fn ground_truth(split: &SplitState, q: &QuerySpec) -> Result<f64, QueryError> {
    Ok(evaluate_exact(split.data(), split.retain(), q)?.or_zero())
}

const MAX_RESAMPLES: usize = 200;

/// Naru-style selectivity workload: COUNT(*) with `filter_count_range`
/// filters per query, anchored on uniformly drawn rows.
pub fn gen_workload_se(
    split: &SplitState,
    delete_ctx: Option<&DeleteSpec>,
    label: WorkloadLabel,
    n: usize,
    filter_count_range: (usize, usize),
    seed: u64,
    table: &str,
) -> Result<Workload, QueryError> {
    assert!(n >= 1);
    let schema = split.data().schema().to_vec();
    let (f_lo, f_hi) = filter_count_range;
    assert!(f_lo >= 1 && f_lo <= f_hi && f_hi <= schema.len(), "filter count range within column count");
    let anchors = anchor_rows(split, label)?;
    let region = delete_region(split, delete_ctx)?;
    let mut rng = SeededRng::new(seed, streams::WORKLOAD);

    let mut queries = Vec::with_capacity(n);
    let mut truths = Vec::with_capacity(n);
    'outer: for _ in 0..n {
        for _attempt in 0..MAX_RESAMPLES {
            let anchor = anchors[rng.below(anchors.len())];
            let f = rng.int_range(f_lo as i64, f_hi as i64) as usize;
            let mut cols: Vec<usize> = (0..schema.len()).collect();
            rng.shuffle(&mut cols);
            let mut chosen: Vec<usize> = cols.into_iter().take(f).collect();
            // QD queries must constrain the deleted column, otherwise they
            // would not target deleted data.
            if label == WorkloadLabel::QueryDelete {
                if let Some(r) = &region {
                    if !chosen.contains(&r.column) {
                        chosen[0] = r.column;
                    }
                }
            }

            let mut filters = Vec::with_capacity(chosen.len());
            let mut ok = true;
            for col_idx in chosen {
                let col = &schema[col_idx];
                let anchor_cell = split.data().raw_cell(col_idx, anchor);
                let op = match (&anchor_cell, col.kind()) {
                    (Cell::Cat(v), _) => FilterOp::EqCat(v.clone()),
                    (Cell::Num(v), ColumnKind::Numerical) if col.is_small_domain() => {
                        FilterOp::EqNum(*v)
                    }
                    (Cell::Num(v), _) => match rng.below(3) {
                        0 => FilterOp::EqNum(*v),
                        1 => FilterOp::Ge(*v),
                        _ => FilterOp::Le(*v),
                    },
                };
                let op = shape_for_region(op, col_idx, col, label, &region, anchor_cell.as_num(), &mut rng);
                match op {
                    Some(op) => filters.push(Filter { column: col.name.clone(), op }),
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }

            let q = QuerySpec::Aggregate { agg: AggKind::Count, column: None, table: table.into(), filters };
            let truth = ground_truth(split, &q)?;
            // QR needs a positive truth for relative error to be defined.
            if label == WorkloadLabel::QueryRetain && truth <= 0.0 {
                continue;
            }
            queries.push(q);
            truths.push(truth);
            continue 'outer;
        }
        return Err(QueryError::GenerationStalled(label.name()));
    }
    Ok(Workload { label, queries, truths })
}

/// Apply the deleted-region rules to one operator on one column.
/// `anchor` is the anchor row's raw value on this column; QD ranges are
/// clamped inside the deleted region but always keep the anchor inside.
fn shape_for_region(
    op: FilterOp,
    col_idx: usize,
    col: &ColumnSchema,
    label: WorkloadLabel,
    region: &Option<DeleteRegion>,
    anchor: Option<f64>,
    rng: &mut SeededRng,
) -> Option<FilterOp> {
    let Some(r) = region else { return Some(op) };
    if col_idx != r.column || !r.full {
        // selective deletion: workloads may cover retained and deleted data
        return Some(op);
    }
    match label {
        WorkloadLabel::QueryRetain => exclude_overlap(op, col, r),
        WorkloadLabel::QueryDelete => {
            if matches!(op, FilterOp::EqCat(_)) {
                return Some(op);
            }
            let v = anchor.expect("numeric anchor for QD clamp").clamp(r.lo, r.hi);
            let lo = r.lo + rng.uniform() * (v - r.lo);
            let hi = v + rng.uniform() * (r.hi - v);
            Some(FilterOp::Range { lo, hi })
        }
    }
}

/// DBEst++-style AQP workload over a (categorical, numerical) column pair:
/// category equality, numerical range, and a uniformly drawn aggregate.
pub fn gen_workload_aqp(
    split: &SplitState,
    delete_ctx: Option<&DeleteSpec>,
    label: WorkloadLabel,
    column_pair: (&str, &str),
    n: usize,
    seed: u64,
    table: &str,
) -> Result<Workload, QueryError> {
    assert!(n >= 1);
    let (cat_name, num_name) = column_pair;
    let data = split.data();
    let cat_idx = data.column_index(cat_name).map_err(QueryError::Data)?;
    let num_idx = data.column_index(num_name).map_err(QueryError::Data)?;
    let num_col = data.schema()[num_idx].clone();
    let (dom_lo, dom_hi) = match &num_col.domain {
        crate::data::Domain::Numerical { min, max, .. } => (*min, *max),
        _ => {
            return Err(QueryError::TypeMismatch {
                column: num_name.into(),
                message: "AQP pair requires a numerical second column".into(),
            })
        }
    };
    let anchors = anchor_rows(split, label)?;
    let region = delete_region(split, delete_ctx)?;
    let mut rng = SeededRng::new(seed, streams::WORKLOAD);

    let mut queries = Vec::with_capacity(n);
    let mut truths = Vec::with_capacity(n);
    'outer: for _ in 0..n {
        for _attempt in 0..MAX_RESAMPLES {
            let anchor = anchors[rng.below(anchors.len())];
            let category = match data.raw_cell(cat_idx, anchor) {
                Cell::Cat(v) => v,
                _ => unreachable!("cat column checked above"),
            };
            let v = data.raw_num(num_idx, anchor).expect("numerical column");
            // random bounds around the anchor value
            let lo = dom_lo + rng.uniform() * (v - dom_lo);
            let hi = v + rng.uniform() * (dom_hi - v);
            let op = shape_for_region(
                FilterOp::Range { lo, hi },
                num_idx,
                &num_col,
                label,
                &region,
                Some(v),
                &mut rng,
            );
            let Some(op) = op else { continue };

            let agg = match rng.below(3) {
                0 => AggKind::Count,
                1 => AggKind::Sum,
                _ => AggKind::Avg,
            };
            let q = QuerySpec::Aggregate {
                agg,
                column: if agg == AggKind::Count { None } else { Some(num_name.into()) },
                table: table.into(),
                filters: vec![
                    Filter::eq_cat(cat_name, &category),
                    Filter { column: num_name.into(), op },
                ],
            };
            let truth = ground_truth(split, &q)?;
            if label == WorkloadLabel::QueryRetain {
                // relative error needs truth > 0; additionally require a
                // non-degenerate COUNT so SUM/AVG stay meaningful
                let count_q = QuerySpec::Aggregate {
                    agg: AggKind::Count,
                    column: None,
                    table: table.into(),
                    filters: q.filters().to_vec(),
                };
                let count = evaluate_exact(data, split.retain(), &count_q)?;
                if !matches!(count, AggValue::Value(c) if c > 0.0) || truth <= 0.0 {
                    continue;
                }
            }
            queries.push(q);
            truths.push(truth);
            continue 'outer;
        }
        return Err(QueryError::GenerationStalled(label.name()));
    }
    Ok(Workload { label, queries, truths })
}
