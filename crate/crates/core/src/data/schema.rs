//! Tabular schemas and CSV ingestion.

use super::DataError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

/// One value of one column.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Cat(String),
}

impl Cell {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Cat(_) => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            Cell::Cat(s) => Some(s),
            Cell::Num(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical,
    Numerical,
}

/// Frozen value domain of a column, derived from the table it was built on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    /// Sorted distinct values.
    Categorical(Vec<String>),
    Numerical {
        min: f64,
        max: f64,
        /// Sorted distinct values, kept while the column has few of them.
        /// Drives the small-domain workload rule and per-value binning.
        distinct: Option<Vec<f64>>,
    },
}

/// Numerical columns with fewer distinct values than this behave like
/// categorical columns during workload generation (equality filters only).
pub const SMALL_DOMAIN: usize = 10;

/// Cap on how many distinct numeric values a schema tracks exactly.
const DISTINCT_TRACK_CAP: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub domain: Domain,
}

impl ColumnSchema {
    pub fn kind(&self) -> ColumnKind {
        match self.domain {
            Domain::Categorical(_) => ColumnKind::Categorical,
            Domain::Numerical { .. } => ColumnKind::Numerical,
        }
    }

    /// Distinct cardinality where known (always known for categorical).
    pub fn distinct_count(&self) -> Option<usize> {
        match &self.domain {
            Domain::Categorical(vals) => Some(vals.len()),
            Domain::Numerical { distinct, .. } => distinct.as_ref().map(|d| d.len()),
        }
    }

    /// Small-domain columns take equality filters only.
    pub fn is_small_domain(&self) -> bool {
        matches!(self.distinct_count(), Some(n) if n < SMALL_DOMAIN)
    }

    /// True when every tracked distinct value is an integer.
    pub fn is_integral(&self) -> bool {
        match &self.domain {
            Domain::Categorical(_) => false,
            Domain::Numerical { distinct, .. } => distinct
                .as_ref()
                .map(|d| d.iter().all(|v| v.fract() == 0.0))
                .unwrap_or(false),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Table {
    schema: Vec<ColumnSchema>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(schema: Vec<ColumnSchema>, rows: Vec<Vec<Cell>>) -> Result<Self, DataError> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(DataError::RaggedRow { line: i + 2, expected: schema.len(), got: row.len() });
            }
        }
        Ok(Table { schema, rows })
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn cardinality(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize, DataError> {
        self.schema
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    }
}

/// Build column schemas from raw string cells. A column is numerical when
/// every cell parses as a number, unless a hint forces it categorical.
pub fn infer_schema(
    header: &[String],
    raw_rows: &[Vec<String>],
    hints: &[(String, ColumnKind)],
) -> Vec<ColumnSchema> {
    header
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let hint = hints.iter().find(|(n, _)| n == name).map(|(_, k)| *k);
            let parsed: Option<Vec<f64>> = raw_rows
                .iter()
                .map(|row| row[c].trim().parse::<f64>().ok())
                .collect();
            let numeric = match (hint, &parsed) {
                (Some(ColumnKind::Categorical), _) => None,
                (_, Some(vals)) => Some(vals.clone()),
                _ => None,
            };
            let domain = match numeric {
                Some(vals) => numerical_domain(&vals),
                None => {
                    let distinct: BTreeSet<String> =
                        raw_rows.iter().map(|row| row[c].trim().to_string()).collect();
                    Domain::Categorical(distinct.into_iter().collect())
                }
            };
            ColumnSchema { name: name.clone(), domain }
        })
        .collect()
}

pub fn numerical_domain(values: &[f64]) -> Domain {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let distinct = if distinct.len() <= DISTINCT_TRACK_CAP { Some(distinct) } else { None };
    Domain::Numerical { min, max, distinct }
}

/// Load a CSV file: comma separated, header row, UTF-8. Empty or `NULL`
/// cells are rejected with the offending line number.
pub fn load_csv(path: &Path, hints: &[(String, ColumnKind)]) -> Result<Table, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();

    let mut raw_rows: Vec<Vec<String>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // 1-based, after the header
        let record = record.map_err(|e| DataError::Parse { line, message: e.to_string() })?;
        if record.len() != header.len() {
            return Err(DataError::RaggedRow { line, expected: header.len(), got: record.len() });
        }
        let cells: Vec<String> = record.iter().map(|s| s.trim().to_string()).collect();
        if let Some(col) = cells.iter().position(|s| s.is_empty() || s == "NULL") {
            return Err(DataError::Parse {
                line,
                message: format!("empty or NULL cell in column '{}'", header[col]),
            });
        }
        raw_rows.push(cells);
    }
    if raw_rows.is_empty() {
        return Err(DataError::NoRows);
    }

    let schema = infer_schema(&header, &raw_rows, hints);
    let rows = raw_rows
        .iter()
        .enumerate()
        .map(|(i, raw)| {
            raw.iter()
                .zip(schema.iter())
                .map(|(s, col)| match col.kind() {
                    ColumnKind::Numerical => s
                        .parse::<f64>()
                        .map(Cell::Num)
                        .map_err(|_| DataError::Parse {
                            line: i + 2,
                            message: format!("cannot parse '{}' as number in column '{}'", s, col.name),
                        }),
                    ColumnKind::Categorical => Ok(Cell::Cat(s.clone())),
                })
                .collect::<Result<Vec<Cell>, DataError>>()
        })
        .collect::<Result<Vec<Vec<Cell>>, DataError>>()?;

    Table::new(schema, rows)
}

/// Write a table back out as CSV (fixtures, generated datasets).
pub fn write_csv(table: &Table, path: &Path) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))?;
    let header: Vec<&str> = table.schema().iter().map(|c| c.name.as_str()).collect();
    writer
        .write_record(&header)
        .map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))?;
    for row in table.rows() {
        let fields: Vec<String> = row
            .iter()
            .map(|cell| match cell {
                Cell::Num(v) => {
                    if v.fract() == 0.0 && v.abs() < 1e15 {
                        format!("{}", *v as i64)
                    } else {
                        format!("{v}")
                    }
                }
                Cell::Cat(s) => s.clone(),
            })
            .collect();
        writer
            .write_record(&fields)
            .map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))?;
    }
    writer.flush().map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))?;
    Ok(())
}
