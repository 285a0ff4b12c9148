//! Query representation and rendering.

use crate::data::{DeleteMode, DeletePredicate, DeleteSpec};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOp {
    EqCat(String),
    EqNum(f64),
    Ge(f64),
    Le(f64),
    Range { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub column: String,
    pub op: FilterOp,
}

impl Filter {
    pub fn range(column: &str, lo: f64, hi: f64) -> Self {
        Filter { column: column.to_string(), op: FilterOp::Range { lo, hi } }
    }

    pub fn eq_cat(column: &str, value: &str) -> Self {
        Filter { column: column.to_string(), op: FilterOp::EqCat(value.to_string()) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggKind {
    Count,
    Sum,
    Avg,
}

impl AggKind {
    pub fn name(&self) -> &'static str {
        match self {
            AggKind::Count => "count",
            AggKind::Sum => "sum",
            AggKind::Avg => "avg",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySpec {
    Aggregate {
        agg: AggKind,
        /// Aggregated numerical column; `None` only for COUNT(*).
        column: Option<String>,
        table: String,
        filters: Vec<Filter>,
    },
    Delete { table: String, spec: DeleteSpec },
}

impl QuerySpec {
    pub fn filters(&self) -> &[Filter] {
        match self {
            QuerySpec::Aggregate { filters, .. } => filters,
            QuerySpec::Delete { .. } => &[],
        }
    }

    pub fn agg_kind(&self) -> Option<AggKind> {
        match self {
            QuerySpec::Aggregate { agg, .. } => Some(*agg),
            QuerySpec::Delete { .. } => None,
        }
    }
}

fn render_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn render_filter(f: &Filter) -> String {
    match &f.op {
        FilterOp::EqCat(v) => format!("{} = '{}'", f.column, v),
        FilterOp::EqNum(v) => format!("{} = {}", f.column, render_number(*v)),
        FilterOp::Ge(v) => format!("{} >= {}", f.column, render_number(*v)),
        FilterOp::Le(v) => format!("{} <= {}", f.column, render_number(*v)),
        FilterOp::Range { lo, hi } => {
            format!("{} <= {} <= {}", render_number(*lo), f.column, render_number(*hi))
        }
    }
}

/// Inverse of `parse` up to whitespace.
pub fn render(q: &QuerySpec) -> String {
    match q {
        QuerySpec::Aggregate { agg, column, table, filters } => {
            let agg_text = match (agg, column) {
                (AggKind::Count, _) => "COUNT(*)".to_string(),
                (AggKind::Sum, Some(c)) => format!("SUM({c})"),
                (AggKind::Avg, Some(c)) => format!("AVG({c})"),
                (k, None) => unreachable!("{k:?} requires a column"),
            };
            let conds: Vec<String> = filters.iter().map(render_filter).collect();
            if conds.is_empty() {
                format!("SELECT {agg_text} FROM {table}")
            } else {
                format!("SELECT {agg_text} FROM {table} WHERE {}", conds.join(" AND "))
            }
        }
        QuerySpec::Delete { table, spec } => {
            let pred = match &spec.predicate {
                DeletePredicate::NumericRange { lo, hi } => {
                    format!("{} <= {} <= {}", render_number(*lo), spec.column, render_number(*hi))
                }
                DeletePredicate::CategoryEquals { value } => format!("{} = '{}'", spec.column, value),
            };
            match &spec.mode {
                DeleteMode::Full => format!("DELETE FROM {table} WHERE {pred}"),
                DeleteMode::Selective { modulus, residues } => {
                    let rs: Vec<String> = residues.iter().map(|r| r.to_string()).collect();
                    format!(
                        "DELETE FROM {table} WHERE {pred} AND row_index % {modulus} IN ({})",
                        rs.join(", ")
                    )
                }
            }
        }
    }
}
