//! In-memory columnar datasets.
//!
//! A [`Dataset`] is immutable once built. Predicates evaluate column-wise
//! into a [`RowMask`]; nulls fail every atomic predicate.

mod ingest;
mod mask;
mod predicate;

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ingest::{ingest_csv, ingest_csv_with, parse_temporal, IngestOptions, DEFAULT_MAX_CELLS};
pub use mask::RowMask;
pub use predicate::{FieldRef, Interval, Predicate, Scalar};

pub(crate) use predicate::{format_number, render_range};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TabularError {
    #[error("malformed CSV: {0}")]
    MalformedCsv(String),
    #[error("dataset has {cells} cells, above the cap of {cap}")]
    CellCapExceeded { cells: usize, cap: usize },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("type mismatch on `{field}`: {detail}")]
    TypeMismatch { field: String, detail: String },
    #[error("field `{0}` cannot be binned")]
    NotBinnable(String),
    #[error("invalid predicate: {0}")]
    InvalidPredicate(String),
    #[error("column `{field}` has {actual} rows, expected {expected}")]
    LengthMismatch { field: String, expected: usize, actual: usize },
}

pub type Result<T, E = TabularError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Numeric,
    Categorical,
    Temporal,
    Boolean,
    Text,
}

impl ColumnType {
    pub fn is_continuous(self) -> bool {
        matches!(self, ColumnType::Numeric | ColumnType::Temporal)
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ColumnType::Numeric => "numeric",
            ColumnType::Categorical => "categorical",
            ColumnType::Temporal => "temporal",
            ColumnType::Boolean => "boolean",
            ColumnType::Text => "text",
        };
        f.write_str(s)
    }
}

/// Typed column storage. Temporal values are epoch milliseconds (UTC).
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Temporal(Vec<Option<f64>>),
    Boolean(Vec<Option<bool>>),
    Categorical { codes: Vec<Option<u32>>, dictionary: Vec<String> },
    Text(Vec<Option<String>>),
}

impl ColumnData {
    pub fn numeric<I: IntoIterator<Item = f64>>(values: I) -> Self {
        ColumnData::Numeric(values.into_iter().map(Some).collect())
    }

    pub fn categorical<'a, I: IntoIterator<Item = &'a str>>(values: I) -> Self {
        Self::categorical_opt(values.into_iter().map(Some))
    }

    pub fn categorical_opt<'a, I: IntoIterator<Item = Option<&'a str>>>(values: I) -> Self {
        let mut dictionary: Vec<String> = Vec::new();
        let mut lookup: HashMap<String, u32> = HashMap::new();
        let codes = values
            .into_iter()
            .map(|v| {
                v.map(|s| {
                    *lookup.entry(s.to_string()).or_insert_with(|| {
                        dictionary.push(s.to_string());
                        (dictionary.len() - 1) as u32
                    })
                })
            })
            .collect();
        ColumnData::Categorical { codes, dictionary }
    }

    pub fn column_type(&self) -> ColumnType {
        match self {
            ColumnData::Numeric(_) => ColumnType::Numeric,
            ColumnData::Temporal(_) => ColumnType::Temporal,
            ColumnData::Boolean(_) => ColumnType::Boolean,
            ColumnData::Categorical { .. } => ColumnType::Categorical,
            ColumnData::Text(_) => ColumnType::Text,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) | ColumnData::Temporal(v) => v.len(),
            ColumnData::Boolean(v) => v.len(),
            ColumnData::Categorical { codes, .. } => codes.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell value; temporal cells are returned as epoch milliseconds.
    pub fn value(&self, row: usize) -> Option<Scalar> {
        match self {
            ColumnData::Numeric(v) | ColumnData::Temporal(v) => v[row].map(Scalar::Number),
            ColumnData::Boolean(v) => v[row].map(Scalar::Bool),
            ColumnData::Categorical { codes, dictionary } => {
                codes[row].map(|c| Scalar::Text(dictionary[c as usize].clone()))
            }
            ColumnData::Text(v) => v[row].clone().map(Scalar::Text),
        }
    }

    fn is_null(&self, row: usize) -> bool {
        match self {
            ColumnData::Numeric(v) | ColumnData::Temporal(v) => v[row].is_none(),
            ColumnData::Boolean(v) => v[row].is_none(),
            ColumnData::Categorical { codes, .. } => codes[row].is_none(),
            ColumnData::Text(v) => v[row].is_none(),
        }
    }

    fn take(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Temporal(v) => ColumnData::Temporal(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Boolean(v) => ColumnData::Boolean(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical { codes, dictionary } => ColumnData::Categorical {
                codes: rows.iter().map(|&r| codes[r]).collect(),
                dictionary: dictionary.clone(),
            },
            ColumnData::Text(v) => ColumnData::Text(rows.iter().map(|&r| v[r].clone()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub field: FieldRef,
    pub data: ColumnData,
}

impl Column {
    pub fn column_type(&self) -> ColumnType {
        self.data.column_type()
    }
}

/// Distinct values (discrete columns) or observed span (continuous columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DomainValues {
    Distinct { values: Vec<Scalar> },
    Span { min: f64, max: f64 },
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDomain {
    pub field: FieldRef,
    /// Exact count of distinct non-null values.
    pub cardinality: usize,
    pub values: DomainValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub name: FieldRef,
    #[serde(rename = "type")]
    pub column_type: ColumnType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub row_count: usize,
    pub columns: Vec<ColumnSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    columns: Vec<Column>,
    row_count: usize,
    index: HashMap<String, usize>,
}

impl Dataset {
    /// Builds a dataset from typed columns with no cell cap.
    pub fn from_columns(name: impl Into<String>, columns: Vec<(FieldRef, ColumnData)>) -> Result<Self> {
        Self::from_columns_capped(name, columns, usize::MAX)
    }

    pub fn from_columns_capped(
        name: impl Into<String>,
        columns: Vec<(FieldRef, ColumnData)>,
        max_cells: usize,
    ) -> Result<Self> {
        let row_count = columns.first().map_or(0, |(_, d)| d.len());
        let mut index = HashMap::new();
        let mut out = Vec::with_capacity(columns.len());
        for (i, (field, data)) in columns.into_iter().enumerate() {
            if field.is_empty() {
                return Err(TabularError::MalformedCsv("empty column name".into()));
            }
            if index.insert(field.to_string(), i).is_some() {
                return Err(TabularError::DuplicateColumn(field.to_string()));
            }
            if data.len() != row_count {
                return Err(TabularError::LengthMismatch {
                    field: field.to_string(),
                    expected: row_count,
                    actual: data.len(),
                });
            }
            out.push(Column { field, data });
        }
        let cells = row_count.saturating_mul(out.len());
        if cells > max_cells {
            return Err(TabularError::CellCapExceeded { cells, cap: max_cells });
        }
        Ok(Self {
            name: name.into(),
            columns: out,
            row_count,
            index,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn fields(&self) -> impl Iterator<Item = &FieldRef> {
        self.columns.iter().map(|c| &c.field)
    }

    pub fn has_field(&self, field: &str) -> bool {
        self.index.contains_key(field)
    }

    pub fn column(&self, field: &str) -> Result<&Column> {
        self.index
            .get(field)
            .map(|&i| &self.columns[i])
            .ok_or_else(|| TabularError::UnknownField(field.to_string()))
    }

    pub fn column_type(&self, field: &str) -> Result<ColumnType> {
        self.column(field).map(Column::column_type)
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            name: self.name.clone(),
            row_count: self.row_count,
            columns: self
                .columns
                .iter()
                .map(|c| ColumnSummary {
                    name: c.field.clone(),
                    column_type: c.column_type(),
                })
                .collect(),
        }
    }

    /// Rows selected by `mask`, as a new dataset with the same schema.
    pub fn select(&self, mask: &RowMask) -> Dataset {
        assert_eq!(mask.len(), self.row_count, "mask length must equal row count");
        let rows: Vec<usize> = mask.ones().collect();
        Dataset {
            name: self.name.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    field: c.field.clone(),
                    data: c.data.take(&rows),
                })
                .collect(),
            row_count: rows.len(),
            index: self.index.clone(),
        }
    }

    pub fn non_null_mask(&self, field: &str) -> Result<RowMask> {
        let col = self.column(field)?;
        Ok(RowMask::from_fn(self.row_count, |r| !col.data.is_null(r)))
    }

    pub fn field_domain(&self, field: &str) -> Result<FieldDomain> {
        let col = self.column(field)?;
        let (cardinality, values) = match &col.data {
            ColumnData::Numeric(v) | ColumnData::Temporal(v) => {
                let mut seen = HashSet::new();
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for x in v.iter().flatten() {
                    // -0.0 and 0.0 are the same value
                    seen.insert((x + 0.0).to_bits());
                    min = min.min(*x);
                    max = max.max(*x);
                }
                let values = if seen.is_empty() {
                    DomainValues::Empty
                } else {
                    DomainValues::Span { min, max }
                };
                (seen.len(), values)
            }
            ColumnData::Boolean(v) => {
                let mut distinct = Vec::new();
                for b in v.iter().flatten() {
                    if !distinct.contains(b) {
                        distinct.push(*b);
                    }
                }
                (distinct.len(), distinct_values(distinct.into_iter().map(Scalar::Bool).collect()))
            }
            ColumnData::Categorical { codes, dictionary } => {
                let mut present = vec![false; dictionary.len()];
                let mut order = Vec::new();
                for &c in codes.iter().flatten() {
                    if !present[c as usize] {
                        present[c as usize] = true;
                        order.push(c);
                    }
                }
                let values = order
                    .iter()
                    .map(|&c| Scalar::Text(dictionary[c as usize].clone()))
                    .collect::<Vec<_>>();
                (values.len(), distinct_values(values))
            }
            ColumnData::Text(v) => {
                let mut seen = HashSet::new();
                let mut order = Vec::new();
                for s in v.iter().flatten() {
                    if seen.insert(s.as_str()) {
                        order.push(Scalar::Text(s.clone()));
                    }
                }
                (order.len(), distinct_values(order))
            }
        };
        Ok(FieldDomain {
            field: col.field.clone(),
            cardinality,
            values,
        })
    }

    /// Evaluates a predicate to a row mask. Nulls never satisfy an atomic
    /// predicate; an empty conjunction selects every row.
    pub fn evaluate(&self, predicate: &Predicate) -> Result<RowMask> {
        match predicate {
            Predicate::Conjunction { predicates } => {
                let mut mask = RowMask::full(self.row_count);
                for p in predicates {
                    mask.intersect_with(&self.evaluate(p)?);
                }
                Ok(mask)
            }
            Predicate::Equals { field, value } => self.evaluate_set(field, std::slice::from_ref(value)),
            Predicate::InSet { field, values } => self.evaluate_set(field, values),
            Predicate::Range { field, interval } => self.evaluate_range(field, interval),
        }
    }

    /// Conjunction of all `predicates` (all rows when empty).
    pub fn evaluate_all<'a>(&self, predicates: impl IntoIterator<Item = &'a Predicate>) -> Result<RowMask> {
        let mut mask = RowMask::full(self.row_count);
        for p in predicates {
            mask.intersect_with(&self.evaluate(p)?);
        }
        Ok(mask)
    }

    fn evaluate_set(&self, field: &FieldRef, values: &[Scalar]) -> Result<RowMask> {
        let col = self.column(field)?;
        let mismatch = |v: &Scalar| TabularError::TypeMismatch {
            field: field.to_string(),
            detail: format!("value `{v}` is not comparable with a {} column", col.column_type()),
        };
        let n = self.row_count;
        Ok(match &col.data {
            ColumnData::Numeric(v) => {
                let wanted = values
                    .iter()
                    .map(|s| s.as_f64().ok_or_else(|| mismatch(s)))
                    .collect::<Result<Vec<_>>>()?;
                RowMask::from_fn(n, |r| v[r].is_some_and(|x| wanted.contains(&x)))
            }
            ColumnData::Temporal(v) => {
                let wanted = values
                    .iter()
                    .map(|s| temporal_literal(s).ok_or_else(|| mismatch(s)))
                    .collect::<Result<Vec<_>>>()?;
                RowMask::from_fn(n, |r| v[r].is_some_and(|x| wanted.contains(&x)))
            }
            ColumnData::Boolean(v) => {
                let wanted = values
                    .iter()
                    .map(|s| match s {
                        Scalar::Bool(b) => Ok(*b),
                        other => Err(mismatch(other)),
                    })
                    .collect::<Result<Vec<_>>>()?;
                RowMask::from_fn(n, |r| v[r].is_some_and(|x| wanted.contains(&x)))
            }
            ColumnData::Categorical { codes, dictionary } => {
                let mut wanted = vec![false; dictionary.len()];
                for s in values {
                    let Scalar::Text(t) = s else {
                        return Err(mismatch(s));
                    };
                    if let Some(i) = dictionary.iter().position(|d| d == t) {
                        wanted[i] = true;
                    }
                }
                RowMask::from_fn(n, |r| codes[r].is_some_and(|c| wanted[c as usize]))
            }
            ColumnData::Text(v) => {
                let wanted = values
                    .iter()
                    .map(|s| match s {
                        Scalar::Text(t) => Ok(t.as_str()),
                        other => Err(mismatch(other)),
                    })
                    .collect::<Result<HashSet<_>>>()?;
                RowMask::from_fn(n, |r| v[r].as_deref().is_some_and(|x| wanted.contains(x)))
            }
        })
    }

    fn evaluate_range(&self, field: &FieldRef, interval: &Interval) -> Result<RowMask> {
        if !interval.is_well_formed() {
            return Err(TabularError::InvalidPredicate(format!(
                "range on `{field}` requires finite bounds with low <= high"
            )));
        }
        let col = self.column(field)?;
        match &col.data {
            ColumnData::Numeric(v) | ColumnData::Temporal(v) => {
                Ok(RowMask::from_fn(self.row_count, |r| v[r].is_some_and(|x| interval.contains(x))))
            }
            _ => Err(TabularError::TypeMismatch {
                field: field.to_string(),
                detail: format!("range predicate on a {} column", col.column_type()),
            }),
        }
    }

    /// Checks that a predicate is well-typed against this dataset without
    /// materialising a mask.
    pub fn check_predicate(&self, predicate: &Predicate) -> Result<()> {
        // Evaluating on an empty selection would skip type checks, so do the
        // cheap checks directly.
        for atom in predicate.atoms() {
            let field = atom.field().expect("atoms carry a field");
            let ty = self.column_type(field)?;
            let ok = match atom {
                Predicate::Range { interval, .. } => {
                    if !interval.is_well_formed() {
                        return Err(TabularError::InvalidPredicate(format!(
                            "range on `{field}` requires finite bounds with low <= high"
                        )));
                    }
                    ty.is_continuous()
                }
                Predicate::Equals { value, .. } => scalar_fits(ty, value),
                Predicate::InSet { values, .. } => values.iter().all(|v| scalar_fits(ty, v)),
                Predicate::Conjunction { .. } => unreachable!(),
            };
            if !ok {
                return Err(TabularError::TypeMismatch {
                    field: field.to_string(),
                    detail: format!("`{atom}` does not fit a {ty} column"),
                });
            }
        }
        Ok(())
    }

    /// Equal-frequency bins over a numeric or temporal field. Bins are
    /// half-open `[lo, hi)` except the last, which is closed at the maximum.
    pub fn bin_numeric(&self, field: &str, bin_count: usize) -> Result<Vec<Predicate>> {
        let col = self.column(field)?;
        let values = match &col.data {
            ColumnData::Numeric(v) | ColumnData::Temporal(v) => v,
            _ => return Err(TabularError::NotBinnable(field.to_string())),
        };
        if bin_count == 0 {
            return Err(TabularError::InvalidPredicate("bin_count must be at least 1".into()));
        }
        let mut sorted: Vec<f64> = values.iter().flatten().copied().collect();
        if sorted.is_empty() {
            return Ok(Vec::new());
        }
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let max = sorted[m - 1];
        let mut edges: Vec<f64> = (0..bin_count).map(|i| sorted[i * m / bin_count]).collect();
        edges.dedup();
        let mut bins = Vec::with_capacity(edges.len());
        for (i, &lo) in edges.iter().enumerate() {
            let interval = match edges.get(i + 1) {
                Some(&hi) => Interval {
                    low: Some(lo),
                    high: Some(hi),
                    low_inclusive: true,
                    high_inclusive: false,
                },
                None => Interval::closed(lo, max),
            };
            bins.push(Predicate::range(col.field.clone(), interval));
        }
        Ok(bins)
    }

    /// Human-readable rendering of a predicate, with temporal bounds shown
    /// as ISO-8601 timestamps.
    pub fn describe(&self, predicate: &Predicate) -> String {
        match predicate {
            Predicate::Range { field, interval } if self.column_type(field).ok() == Some(ColumnType::Temporal) => {
                render_range(field, interval, &format_temporal)
            }
            Predicate::Equals {
                field,
                value: Scalar::Number(ms),
            } if self.column_type(field).ok() == Some(ColumnType::Temporal) => {
                format!("{field} = {}", format_temporal(*ms))
            }
            Predicate::Conjunction { predicates } if !predicates.is_empty() => predicates
                .iter()
                .map(|p| self.describe(p))
                .collect::<Vec<_>>()
                .join(" AND "),
            other => other.to_string(),
        }
    }
}

fn distinct_values(values: Vec<Scalar>) -> DomainValues {
    if values.is_empty() {
        DomainValues::Empty
    } else {
        DomainValues::Distinct { values }
    }
}

fn scalar_fits(ty: ColumnType, value: &Scalar) -> bool {
    match ty {
        ColumnType::Numeric => matches!(value, Scalar::Number(_)),
        ColumnType::Temporal => temporal_literal(value).is_some(),
        ColumnType::Boolean => matches!(value, Scalar::Bool(_)),
        ColumnType::Categorical | ColumnType::Text => matches!(value, Scalar::Text(_)),
    }
}

fn temporal_literal(value: &Scalar) -> Option<f64> {
    match value {
        Scalar::Number(n) => Some(*n),
        Scalar::Text(s) => parse_temporal(s),
        Scalar::Bool(_) => None,
    }
}

pub(crate) fn format_temporal(ms: f64) -> String {
    match chrono::DateTime::from_timestamp_millis(ms as i64) {
        Some(dt) if dt.time() == chrono::NaiveTime::MIN => dt.format("%Y-%m-%d").to_string(),
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%S").to_string(),
        None => format_number(ms),
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Six rows: Product A on three rows, B on two, C on one.
    pub fn six_row() -> Dataset {
        Dataset::from_columns(
            "sales",
            vec![
                ("Region".into(), ColumnData::categorical(["N", "N", "S", "S", "N", "S"])),
                ("Product".into(), ColumnData::categorical(["A", "A", "A", "B", "B", "C"])),
            ],
        )
        .unwrap()
    }
}
