//! Fixed-domain encoding of tables.
//!
//! Codebooks (categorical id maps) and min-max normalizers are frozen when
//! the dataset is first encoded and never recomputed afterwards: deletions
//! and insertions must not change a model's input space, otherwise leaving
//! a model stale would be meaningless because its inputs would shift.

use super::schema::{Cell, ColumnKind, ColumnSchema, Domain, Table};
use super::DataError;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq)]
pub enum EncodedValue {
    Cat(u32),
    /// Min-max normalized to [0, 1] over the frozen domain.
    Num(f64),
}

#[derive(Clone, Debug)]
pub enum EncodedColumn {
    Cat(Vec<u32>),
    Num(Vec<f64>),
}

impl EncodedColumn {
    fn len(&self) -> usize {
        match self {
            EncodedColumn::Cat(v) => v.len(),
            EncodedColumn::Num(v) => v.len(),
        }
    }

    fn push(&mut self, v: &EncodedValue) {
        match (self, v) {
            (EncodedColumn::Cat(col), EncodedValue::Cat(id)) => col.push(*id),
            (EncodedColumn::Num(col), EncodedValue::Num(x)) => col.push(*x),
            _ => unreachable!("encoded value kind mismatch"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncodedDataset {
    schema: Vec<ColumnSchema>,
    columns: Vec<EncodedColumn>,
    warnings: Vec<String>,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.columns.first().map(|c| c.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn column_index(&self, name: &str) -> Result<usize, DataError> {
        self.schema
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    }

    pub fn column(&self, idx: usize) -> &EncodedColumn {
        &self.columns[idx]
    }

    pub fn cat_ids(&self, idx: usize) -> Option<&[u32]> {
        match &self.columns[idx] {
            EncodedColumn::Cat(v) => Some(v),
            EncodedColumn::Num(_) => None,
        }
    }

    pub fn normalized(&self, idx: usize) -> Option<&[f64]> {
        match &self.columns[idx] {
            EncodedColumn::Num(v) => Some(v),
            EncodedColumn::Cat(_) => None,
        }
    }

    /// Raw (denormalized / decoded) cell value.
    pub fn raw_cell(&self, col: usize, row: usize) -> Cell {
        match (&self.columns[col], &self.schema[col].domain) {
            (EncodedColumn::Cat(v), Domain::Categorical(vals)) => {
                Cell::Cat(vals[v[row] as usize].clone())
            }
            (EncodedColumn::Num(v), Domain::Numerical { min, max, .. }) => {
                Cell::Num(denormalize(v[row], *min, *max))
            }
            _ => unreachable!("column/domain kind mismatch"),
        }
    }

    /// Raw numeric value of a numerical column.
    pub fn raw_num(&self, col: usize, row: usize) -> Option<f64> {
        match (&self.columns[col], &self.schema[col].domain) {
            (EncodedColumn::Num(v), Domain::Numerical { min, max, .. }) => {
                Some(denormalize(v[row], *min, *max))
            }
            _ => None,
        }
    }

    pub fn decode_row(&self, row: usize) -> Vec<Cell> {
        (0..self.columns.len()).map(|c| self.raw_cell(c, row)).collect()
    }

    /// Encode one raw row against the frozen domains. Values outside the
    /// domain are an error: the encoding cannot represent them.
    pub fn encode_row(&self, cells: &[Cell]) -> Result<Vec<EncodedValue>, DataError> {
        if cells.len() != self.schema.len() {
            return Err(DataError::RaggedRow { line: 0, expected: self.schema.len(), got: cells.len() });
        }
        cells
            .iter()
            .zip(self.schema.iter())
            .map(|(cell, col)| encode_cell(cell, col))
            .collect()
    }

    pub(crate) fn append_encoded(&mut self, row: &[EncodedValue]) {
        for (col, v) in self.columns.iter_mut().zip(row.iter()) {
            col.push(v);
        }
    }

    /// Normalize a raw numeric value using the column's frozen (min, max).
    pub fn normalize_value(&self, col: usize, raw: f64) -> Result<f64, DataError> {
        match &self.schema[col].domain {
            Domain::Numerical { min, max, .. } => Ok(normalize(raw, *min, *max)),
            Domain::Categorical(_) => Err(DataError::TypeMismatch {
                column: self.schema[col].name.clone(),
                expected: "numerical",
            }),
        }
    }

    pub fn denormalize_value(&self, col: usize, normalized: f64) -> Result<f64, DataError> {
        match &self.schema[col].domain {
            Domain::Numerical { min, max, .. } => Ok(denormalize(normalized, *min, *max)),
            Domain::Categorical(_) => Err(DataError::TypeMismatch {
                column: self.schema[col].name.clone(),
                expected: "numerical",
            }),
        }
    }

    pub fn category_id(&self, col: usize, value: &str) -> Result<u32, DataError> {
        match &self.schema[col].domain {
            Domain::Categorical(vals) => vals
                .binary_search_by(|v| v.as_str().cmp(value))
                .map(|i| i as u32)
                .map_err(|_| DataError::OutOfDomain {
                    column: self.schema[col].name.clone(),
                    value: value.to_string(),
                }),
            Domain::Numerical { .. } => Err(DataError::TypeMismatch {
                column: self.schema[col].name.clone(),
                expected: "categorical",
            }),
        }
    }

    pub fn category_name(&self, col: usize, id: u32) -> Option<&str> {
        match &self.schema[col].domain {
            Domain::Categorical(vals) => vals.get(id as usize).map(|s| s.as_str()),
            Domain::Numerical { .. } => None,
        }
    }

    /// Stable digest of the frozen domains; stored in checkpoint headers so
    /// a model is never evaluated against a different encoding.
    pub fn domain_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for col in &self.schema {
            hasher.update(col.name.as_bytes());
            match &col.domain {
                Domain::Categorical(vals) => {
                    hasher.update(b"cat");
                    for v in vals {
                        hasher.update(v.as_bytes());
                        hasher.update([0u8]);
                    }
                }
                Domain::Numerical { min, max, .. } => {
                    hasher.update(b"num");
                    hasher.update(min.to_le_bytes());
                    hasher.update(max.to_le_bytes());
                }
            }
        }
        let digest = hasher.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn encode_cell(cell: &Cell, col: &ColumnSchema) -> Result<EncodedValue, DataError> {
    match (&col.domain, cell) {
        (Domain::Categorical(vals), Cell::Cat(s)) => vals
            .binary_search_by(|v| v.as_str().cmp(s.as_str()))
            .map(|i| EncodedValue::Cat(i as u32))
            .map_err(|_| DataError::OutOfDomain { column: col.name.clone(), value: s.clone() }),
        (Domain::Numerical { min, max, .. }, Cell::Num(v)) => {
            if *v < *min || *v > *max {
                return Err(DataError::OutOfDomain {
                    column: col.name.clone(),
                    value: v.to_string(),
                });
            }
            Ok(EncodedValue::Num(normalize(*v, *min, *max)))
        }
        (_, _) => Err(DataError::TypeMismatch {
            column: col.name.clone(),
            expected: match col.kind() {
                ColumnKind::Categorical => "categorical",
                ColumnKind::Numerical => "numerical",
            },
        }),
    }
}

fn normalize(v: f64, min: f64, max: f64) -> f64 {
    if max > min {
        (v - min) / (max - min)
    } else {
        0.0 // constant column
    }
}

fn denormalize(v: f64, min: f64, max: f64) -> f64 {
    if max > min {
        v * (max - min) + min
    } else {
        min
    }
}

/// Freeze per-column codebooks and normalizers from a table and encode it.
pub fn freeze_encoding(table: &Table) -> Result<EncodedDataset, DataError> {
    if table.cardinality() == 0 {
        return Err(DataError::NoRows);
    }
    let schema = table.schema().to_vec();
    let mut warnings = Vec::new();
    for col in &schema {
        if let Domain::Numerical { min, max, .. } = col.domain {
            if min == max {
                warnings.push(format!(
                    "column '{}' is constant ({min}); normalizing to 0.0",
                    col.name
                ));
            }
        }
    }
    let mut columns: Vec<EncodedColumn> = schema
        .iter()
        .map(|c| match c.kind() {
            ColumnKind::Categorical => EncodedColumn::Cat(Vec::with_capacity(table.cardinality())),
            ColumnKind::Numerical => EncodedColumn::Num(Vec::with_capacity(table.cardinality())),
        })
        .collect();
    let proto = EncodedDataset { schema: schema.clone(), columns: Vec::new(), warnings: Vec::new() };
    for row in table.rows() {
        for ((cell, col), out) in row.iter().zip(proto.schema.iter()).zip(columns.iter_mut()) {
            out.push(&encode_cell(cell, col)?);
        }
    }
    Ok(EncodedDataset { schema, columns, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::numerical_domain;

    fn fixture() -> Table {
        let schema = vec![
            ColumnSchema { name: "age".into(), domain: numerical_domain(&[25.0, 32.0, 33.0, 60.0]) },
            ColumnSchema {
                name: "country".into(),
                domain: Domain::Categorical(vec!["MX".into(), "US".into()]),
            },
        ];
        let rows = vec![
            vec![Cell::Num(25.0), Cell::Cat("US".into())],
            vec![Cell::Num(32.0), Cell::Cat("MX".into())],
            vec![Cell::Num(33.0), Cell::Cat("US".into())],
            vec![Cell::Num(60.0), Cell::Cat("US".into())],
        ];
        Table::new(schema, rows).unwrap()
    }

    #[test]
    fn categorical_ids_follow_sorted_order() {
        let ds = freeze_encoding(&fixture()).unwrap();
        let country = ds.column_index("country").unwrap();
        assert_eq!(ds.category_id(country, "MX").unwrap(), 0);
        assert_eq!(ds.category_id(country, "US").unwrap(), 1);
        assert_eq!(ds.cat_ids(country).unwrap(), &[1, 0, 1, 1]);
    }

    #[test]
    fn midpoint_normalizes_to_half() {
        let schema = vec![ColumnSchema {
            name: "x".into(),
            domain: Domain::Numerical { min: 20.0, max: 70.0, distinct: None },
        }];
        let rows = vec![vec![Cell::Num(45.0)]];
        let ds = freeze_encoding(&Table::new(schema, rows).unwrap()).unwrap();
        assert_eq!(ds.normalized(0).unwrap()[0], 0.5);
    }

    #[test]
    fn encode_decode_round_trips_fixture() {
        let t = fixture();
        let ds = freeze_encoding(&t).unwrap();
        for (i, row) in t.rows().iter().enumerate() {
            assert_eq!(&ds.decode_row(i), row, "row {i}");
        }
    }

    #[test]
    fn constant_column_warns_and_encodes_zero() {
        let schema = vec![ColumnSchema {
            name: "k".into(),
            domain: Domain::Numerical { min: 5.0, max: 5.0, distinct: Some(vec![5.0]) },
        }];
        let rows = vec![vec![Cell::Num(5.0)], vec![Cell::Num(5.0)]];
        let ds = freeze_encoding(&Table::new(schema, rows).unwrap()).unwrap();
        assert_eq!(ds.warnings().len(), 1);
        assert_eq!(ds.normalized(0).unwrap(), &[0.0, 0.0]);
        assert_eq!(ds.raw_num(0, 0).unwrap(), 5.0);
    }

    #[test]
    fn out_of_domain_rejected() {
        let ds = freeze_encoding(&fixture()).unwrap();
        let bad_cat = ds.encode_row(&[Cell::Num(30.0), Cell::Cat("FR".into())]);
        assert!(matches!(bad_cat, Err(DataError::OutOfDomain { .. })));
        let bad_num = ds.encode_row(&[Cell::Num(13.0), Cell::Cat("US".into())]);
        assert!(matches!(bad_num, Err(DataError::OutOfDomain { .. })));
    }
}
