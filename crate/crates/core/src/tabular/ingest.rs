use std::collections::HashSet;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use super::{ColumnData, Dataset, FieldRef, Result, TabularError};

pub const DEFAULT_MAX_CELLS: usize = 10_000_000;

/// Columns with at most this many distinct values are categorical
/// regardless of the row-count ratio.
const CATEGORICAL_FLOOR: usize = 20;

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub max_cells: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            max_cells: DEFAULT_MAX_CELLS,
        }
    }
}

pub fn ingest_csv(bytes: &[u8], name: &str) -> Result<Dataset> {
    ingest_csv_with(bytes, name, &IngestOptions::default())
}

/// Parses a headed CSV and infers one type per column, trying numeric,
/// temporal, boolean, categorical and text in that order. Empty cells are
/// nulls and do not take part in inference.
pub fn ingest_csv_with(bytes: &[u8], name: &str, options: &IngestOptions) -> Result<Dataset> {
    let malformed = |e: csv::Error| TabularError::MalformedCsv(e.to_string());

    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let headers: Vec<String> = reader
        .headers()
        .map_err(malformed)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(TabularError::MalformedCsv("missing header row".into()));
    }
    let mut seen = HashSet::new();
    for h in &headers {
        if h.is_empty() {
            return Err(TabularError::MalformedCsv("empty column name in header".into()));
        }
        if !seen.insert(h.as_str()) {
            return Err(TabularError::DuplicateColumn(h.clone()));
        }
    }

    // Count rows first so oversized uploads are rejected before any cell
    // is materialised.
    let width = headers.len();
    let mut record = csv::ByteRecord::new();
    let mut rows = 0usize;
    let mut counter = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    while counter.read_byte_record(&mut record).map_err(malformed)? {
        rows += 1;
        let cells = rows.saturating_mul(width);
        if cells > options.max_cells {
            return Err(TabularError::CellCapExceeded {
                cells,
                cap: options.max_cells,
            });
        }
    }

    let mut raw: Vec<Vec<Option<String>>> = vec![Vec::with_capacity(rows); width];
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record).map_err(malformed)? {
        for (col, cell) in raw.iter_mut().zip(record.iter()) {
            let cell = cell.trim();
            col.push(if cell.is_empty() { None } else { Some(cell.to_string()) });
        }
    }

    let columns = headers
        .into_iter()
        .zip(raw)
        .map(|(h, cells)| (FieldRef::new(h), infer_column(cells)))
        .collect();
    Dataset::from_columns_capped(name, columns, options.max_cells)
}

fn infer_column(cells: Vec<Option<String>>) -> ColumnData {
    let non_null: Vec<&str> = cells.iter().flatten().map(String::as_str).collect();
    if non_null.is_empty() {
        // no evidence for any type; an all-null column is not drillable
        return ColumnData::Text(cells);
    }
    if non_null.iter().all(|s| parse_number(s).is_some()) {
        return ColumnData::Numeric(cells.iter().map(|c| c.as_deref().and_then(parse_number)).collect());
    }
    if non_null.iter().all(|s| parse_temporal(s).is_some()) {
        return ColumnData::Temporal(cells.iter().map(|c| c.as_deref().and_then(parse_temporal)).collect());
    }
    if non_null.iter().all(|s| parse_bool(s).is_some()) {
        return ColumnData::Boolean(cells.iter().map(|c| c.as_deref().and_then(parse_bool)).collect());
    }
    let distinct = non_null.iter().collect::<HashSet<_>>().len();
    if distinct <= CATEGORICAL_FLOOR || distinct * 2 <= cells.len() {
        ColumnData::categorical_opt(cells.iter().map(Option::as_deref))
    } else {
        ColumnData::Text(cells)
    }
}

fn parse_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

/// Parses an ISO-8601 date or datetime into epoch milliseconds (UTC).
pub fn parse_temporal(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(d.and_time(chrono::NaiveTime::MIN).and_utc().timestamp_millis() as f64);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp_millis() as f64);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp_millis() as f64);
        }
    }
    None
}
