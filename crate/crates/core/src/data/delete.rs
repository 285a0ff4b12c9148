//! Delete predicates, retain/delete partitions, and table meta-data.

use super::encode::{EncodedDataset, EncodedValue};
use super::schema::{Cell, Domain};
use super::DataError;
use crate::autodiff::{streams, SeededRng};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeletePredicate {
    /// L <= att <= U on a numerical column.
    NumericRange { lo: f64, hi: f64 },
    /// att = value on a categorical column (the degenerate L = U case on
    /// id-mapped values).
    CategoryEquals { value: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeleteMode {
    /// Delete the whole matching subspace.
    Full,
    /// Delete only matching rows whose 1-based row index falls in the given
    /// residue classes mod `modulus`, producing an interleaved pattern.
    Selective { modulus: u64, residues: Vec<u64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeleteSpec {
    pub column: String,
    pub predicate: DeletePredicate,
    pub mode: DeleteMode,
}

impl DeleteSpec {
    pub fn full_range(column: &str, lo: f64, hi: f64) -> Self {
        DeleteSpec {
            column: column.to_string(),
            predicate: DeletePredicate::NumericRange { lo, hi },
            mode: DeleteMode::Full,
        }
    }

    pub fn selective_range(column: &str, lo: f64, hi: f64, modulus: u64, residues: Vec<u64>) -> Self {
        DeleteSpec {
            column: column.to_string(),
            predicate: DeletePredicate::NumericRange { lo, hi },
            mode: DeleteMode::Selective { modulus, residues },
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        match &self.predicate {
            DeletePredicate::NumericRange { lo, hi } => {
                if lo > hi {
                    return Err(DataError::InvalidRange { lo: *lo, hi: *hi });
                }
            }
            DeletePredicate::CategoryEquals { .. } => {}
        }
        if let DeleteMode::Selective { modulus, residues } = &self.mode {
            if *modulus == 0 || residues.iter().any(|r| r >= modulus) {
                return Err(DataError::InvalidSelective);
            }
        }
        Ok(())
    }

    /// Does the row at 0-based index `idx` with the given raw cell match?
    fn matches(&self, idx: usize, cell: &Cell) -> bool {
        let in_subspace = match (&self.predicate, cell) {
            (DeletePredicate::NumericRange { lo, hi }, Cell::Num(v)) => *lo <= *v && *v <= *hi,
            (DeletePredicate::CategoryEquals { value }, Cell::Cat(s)) => s == value,
            _ => false,
        };
        if !in_subspace {
            return false;
        }
        match &self.mode {
            DeleteMode::Full => true,
            DeleteMode::Selective { modulus, residues } => {
                let row_index = (idx as u64) + 1; // row indices are 1-based
                residues.contains(&(row_index % modulus))
            }
        }
    }
}

/// A dataset plus its retain/delete partition. The partition is always
/// exhaustive and disjoint; rows are never physically removed, so frozen
/// encodings stay valid.
#[derive(Clone, Debug)]
pub struct SplitState {
    data: EncodedDataset,
    retain: Vec<usize>,
    delete: Vec<usize>,
}

impl SplitState {
    /// Everything retained, nothing deleted.
    pub fn fresh(data: EncodedDataset) -> Self {
        let retain = (0..data.len()).collect();
        SplitState { data, retain, delete: Vec::new() }
    }

    pub fn data(&self) -> &EncodedDataset {
        &self.data
    }

    pub fn retain(&self) -> &[usize] {
        &self.retain
    }

    pub fn delete(&self) -> &[usize] {
        &self.delete
    }
}

/// Partition the dataset rows by a delete predicate. Previously deleted
/// rows (if `prior` is given) stay deleted, so sequential deletes compose.
pub fn apply_delete(
    data: &EncodedDataset,
    spec: &DeleteSpec,
    prior: Option<&SplitState>,
) -> Result<SplitState, DataError> {
    spec.validate()?;
    let col = data.column_index(&spec.column)?;
    match (&data.schema()[col].domain, &spec.predicate) {
        (Domain::Numerical { .. }, DeletePredicate::NumericRange { .. }) => {}
        (Domain::Categorical(_), DeletePredicate::CategoryEquals { .. }) => {}
        _ => {
            return Err(DataError::TypeMismatch {
                column: spec.column.clone(),
                expected: "predicate matching the column kind",
            })
        }
    }

    let already_deleted: Vec<bool> = match prior {
        Some(s) => {
            let mut v = vec![false; data.len()];
            for &d in s.delete() {
                v[d] = true;
            }
            v
        }
        None => vec![false; data.len()],
    };

    let mut retain = Vec::new();
    let mut delete = Vec::new();
    for idx in 0..data.len() {
        let cell = data.raw_cell(col, idx);
        if already_deleted[idx] || spec.matches(idx, &cell) {
            delete.push(idx);
        } else {
            retain.push(idx);
        }
    }
    Ok(SplitState { data: data.clone(), retain, delete })
}

/// Per-category row counts for one categorical column: the non-learned
/// meta-data that every method, including a stale model, keeps current.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub column: String,
    counts: Vec<u64>,
}

impl FrequencyTable {
    /// Count categories over the given rows of the dataset.
    pub fn build(data: &EncodedDataset, column: &str, rows: &[usize]) -> Result<Self, DataError> {
        let col = data.column_index(column)?;
        let width = match &data.schema()[col].domain {
            Domain::Categorical(vals) => vals.len(),
            Domain::Numerical { .. } => {
                return Err(DataError::TypeMismatch { column: column.to_string(), expected: "categorical" })
            }
        };
        let ids = data.cat_ids(col).expect("categorical column");
        let mut counts = vec![0u64; width];
        for &r in rows {
            counts[ids[r] as usize] += 1;
        }
        Ok(FrequencyTable { column: column.to_string(), counts })
    }

    pub fn count(&self, category: u32) -> u64 {
        self.counts.get(category as usize).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn increment(&mut self, category: u32) {
        self.counts[category as usize] += 1;
    }
}

/// Recompute the frequency table so it reflects only retained rows.
pub fn update_metadata(ft: &FrequencyTable, split: &SplitState) -> Result<FrequencyTable, DataError> {
    FrequencyTable::build(split.data(), &ft.column, split.retain())
}

/// Append rows to the dataset (and to the retain side of the partition).
/// Rows outside the frozen domains are rejected.
pub fn insert_rows(split: &SplitState, rows: &[Vec<Cell>]) -> Result<SplitState, DataError> {
    let mut encoded: Vec<Vec<EncodedValue>> = Vec::with_capacity(rows.len());
    for row in rows {
        encoded.push(split.data().encode_row(row)?);
    }
    let mut data = split.data().clone();
    let mut retain = split.retain().to_vec();
    for row in &encoded {
        retain.push(data.len());
        data.append_encoded(row);
    }
    Ok(SplitState { data, retain, delete: split.delete().to_vec() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seed-deterministic train/validation/test split by row count.
pub fn split_train_val_test(
    n_rows: usize,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplits, DataError> {
    let (ft, fv, fe) = fractions;
    if (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(DataError::BadFractions);
    }
    if n_rows < 10 {
        return Err(DataError::TooFewRows(n_rows));
    }
    let mut indices: Vec<usize> = (0..n_rows).collect();
    let mut rng = SeededRng::new(seed, streams::SPLIT);
    rng.shuffle(&mut indices);
    let n_val = (n_rows as f64 * fv).round() as usize;
    let n_test = (n_rows as f64 * fe).round() as usize;
    let n_train = n_rows - n_val - n_test;
    let train = indices[..n_train].to_vec();
    let val = indices[n_train..n_train + n_val].to_vec();
    let test = indices[n_train + n_val..].to_vec();
    Ok(DatasetSplits { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::encode::freeze_encoding;
    use crate::data::schema::{numerical_domain, ColumnSchema, Table};

    fn ages_fixture(ages: &[f64]) -> EncodedDataset {
        let schema = vec![ColumnSchema { name: "age".into(), domain: numerical_domain(ages) }];
        let rows = ages.iter().map(|&a| vec![Cell::Num(a)]).collect();
        freeze_encoding(&Table::new(schema, rows).unwrap()).unwrap()
    }

    #[test]
    fn full_delete_selects_range() {
        let ds = ages_fixture(&[25.0, 32.0, 33.0, 60.0]);
        let spec = DeleteSpec::full_range("age", 30.0, 35.0);
        let split = apply_delete(&ds, &spec, None).unwrap();
        assert_eq!(split.delete(), &[1, 2]); // 1-based rows {2, 3}
        assert_eq!(split.retain(), &[0, 3]);
    }

    #[test]
    fn empty_delete_keeps_everything() {
        let ds = ages_fixture(&[20.0, 22.0, 25.0]);
        let spec = DeleteSpec::full_range("age", 30.0, 35.0);
        let split = apply_delete(&ds, &spec, None).unwrap();
        assert!(split.delete().is_empty());
        assert_eq!(split.retain().len(), 3);
    }

    #[test]
    fn selective_delete_interleaves() {
        // 10 in-range rows; modulus 2 residue {0} deletes the even 1-based
        // indices, i.e. every second row.
        let ages: Vec<f64> = (0..10).map(|i| 30.0 + (i % 6) as f64).collect();
        let ds = ages_fixture(&ages);
        let spec = DeleteSpec::selective_range("age", 30.0, 35.0, 2, vec![0]);
        let split = apply_delete(&ds, &spec, None).unwrap();
        assert_eq!(split.delete(), &[1, 3, 5, 7, 9]);
        assert_eq!(split.retain(), &[0, 2, 4, 6, 8]);
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint() {
        let ages: Vec<f64> = (0..100).map(|i| 20.0 + (i * 7 % 50) as f64).collect();
        let ds = ages_fixture(&ages);
        for spec in [
            DeleteSpec::full_range("age", 30.0, 45.0),
            DeleteSpec::selective_range("age", 25.0, 60.0, 3, vec![0, 2]),
        ] {
            let split = apply_delete(&ds, &spec, None).unwrap();
            assert_eq!(split.retain().len() + split.delete().len(), ds.len());
            let mut all: Vec<usize> = split.retain().iter().chain(split.delete()).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn bad_range_rejected() {
        let ds = ages_fixture(&[25.0, 30.0]);
        let spec = DeleteSpec::full_range("age", 35.0, 30.0);
        assert!(matches!(apply_delete(&ds, &spec, None), Err(DataError::InvalidRange { .. })));
        let spec = DeleteSpec::full_range("height", 0.0, 1.0);
        assert!(matches!(apply_delete(&ds, &spec, None), Err(DataError::UnknownColumn(_))));
    }

    fn country_fixture() -> EncodedDataset {
        let schema = vec![ColumnSchema {
            name: "country".into(),
            domain: Domain::Categorical(vec!["MX".into(), "US".into()]),
        }];
        let rows = vec![
            vec![Cell::Cat("US".into())],
            vec![Cell::Cat("US".into())],
            vec![Cell::Cat("MX".into())],
            vec![Cell::Cat("US".into())],
        ];
        freeze_encoding(&Table::new(schema, rows).unwrap()).unwrap()
    }

    #[test]
    fn frequency_table_updates_after_delete() {
        let ds = country_fixture();
        let split = SplitState::fresh(ds.clone());
        let ft = FrequencyTable::build(&ds, "country", split.retain()).unwrap();
        assert_eq!(ft.count(1), 3); // US
        assert_eq!(ft.count(0), 1); // MX

        let spec = DeleteSpec {
            column: "country".into(),
            predicate: DeletePredicate::CategoryEquals { value: "MX".into() },
            mode: DeleteMode::Full,
        };
        let split = apply_delete(&ds, &spec, None).unwrap();
        let updated = update_metadata(&ft, &split).unwrap();
        assert_eq!(updated.count(0), 0); // fully deleted value kept at zero
        assert_eq!(updated.count(1), 3);
        assert_eq!(updated.total(), split.retain().len() as u64);
    }

    #[test]
    fn frequency_sums_match_retained_cardinality() {
        let mut rng = SeededRng::new(5, 0);
        let values: Vec<Cell> = (0..100)
            .map(|_| Cell::Cat(if rng.uniform() < 0.6 { "US".into() } else { "MX".into() }))
            .collect();
        let schema = vec![ColumnSchema {
            name: "country".into(),
            domain: Domain::Categorical(vec!["MX".into(), "US".into()]),
        }];
        let ages_like: Vec<Vec<Cell>> = values.into_iter().map(|c| vec![c]).collect();
        let ds = freeze_encoding(&Table::new(schema, ages_like).unwrap()).unwrap();
        let spec = DeleteSpec {
            column: "country".into(),
            predicate: DeletePredicate::CategoryEquals { value: "US".into() },
            mode: DeleteMode::Selective { modulus: 2, residues: vec![1] },
        };
        let split = apply_delete(&ds, &spec, None).unwrap();
        let ft = FrequencyTable::build(&ds, "country", split.retain()).unwrap();
        // recount by scan
        let ids = ds.cat_ids(0).unwrap();
        let us_retained = split.retain().iter().filter(|&&r| ids[r] == 1).count() as u64;
        assert_eq!(ft.count(1), us_retained);
        assert_eq!(ft.total(), split.retain().len() as u64);
    }

    #[test]
    fn reinsert_restores_original_multiset() {
        let ds = ages_fixture(&[25.0, 32.0, 33.0, 60.0]);
        let spec = DeleteSpec::full_range("age", 30.0, 35.0);
        let split = apply_delete(&ds, &spec, None).unwrap();
        let deleted_rows: Vec<Vec<Cell>> =
            split.delete().iter().map(|&r| split.data().decode_row(r)).collect();
        let restored = insert_rows(&split, &deleted_rows).unwrap();

        let mut original: Vec<f64> = (0..ds.len()).map(|r| ds.raw_num(0, r).unwrap()).collect();
        let mut now: Vec<f64> =
            restored.retain().iter().map(|&r| restored.data().raw_num(0, r).unwrap()).collect();
        original.sort_by(|a, b| a.partial_cmp(b).unwrap());
        now.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(original, now);
    }

    #[test]
    fn insert_empty_batch_is_noop() {
        let ds = ages_fixture(&[25.0, 32.0]);
        let split = SplitState::fresh(ds);
        let after = insert_rows(&split, &[]).unwrap();
        assert_eq!(after.retain(), split.retain());
        assert_eq!(after.data().len(), split.data().len());
    }

    #[test]
    fn insert_outside_domain_fails() {
        let ds = ages_fixture(&[25.0, 32.0]);
        let split = SplitState::fresh(ds);
        let err = insert_rows(&split, &[vec![Cell::Num(99.0)]]);
        assert!(matches!(err, Err(DataError::OutOfDomain { .. })));
    }

    #[test]
    fn splits_are_deterministic_and_exhaustive() {
        let a = split_train_val_test(100, (0.8, 0.1, 0.1), 9).unwrap();
        let b = split_train_val_test(100, (0.8, 0.1, 0.1), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 80);
        assert_eq!(a.val.len(), 10);
        assert_eq!(a.test.len(), 10);

        let c = split_train_val_test(1000, (0.8, 0.1, 0.1), 4).unwrap();
        let mut all: Vec<usize> =
            c.train.iter().chain(c.val.iter()).chain(c.test.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn tiny_table_rejected() {
        assert!(matches!(
            split_train_val_test(9, (0.8, 0.1, 0.1), 0),
            Err(DataError::TooFewRows(9))
        ));
    }
}
