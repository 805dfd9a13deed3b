//! Declarative chart documents, filter appending, validation, chart
//! heuristics and drill execution.

mod dimensions;
mod drill;
mod expr;
mod model;

use serde::{Deserialize, Serialize};

pub use dimensions::{basic_drill_dimensions, coverage_fallback, dimension_pool, DimensionSuggestion, MAX_DIMENSIONS};
pub use drill::{apply_drill, drill_prompt, DrillOptions, DrillResult, DrillStatus, DEFAULT_MAX_RETRIES};
pub use expr::parse_filter_expression;
pub use model::{
    filter_to_predicate, parse_spec, predicate_to_filter, ChartSpec, Encoding, Mark, MeasureType, Selection,
    SelectionKind, SCHEMA_URL,
};

use crate::tabular::{ColumnType, Dataset, Predicate, RowMask, Scalar, TabularError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("structural error: {0}")]
    Structural(String),
    #[error("unsupported feature: {0}")]
    Unsupported(String),
    #[error("unparseable filter expression: {0}")]
    UnparseableFilter(String),
    #[error("conflicting filter: {0}")]
    ConflictingFilter(String),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
}

impl SpecError {
    pub fn code(&self) -> &'static str {
        match self {
            SpecError::Structural(_) => "STRUCTURAL_ERROR",
            SpecError::Unsupported(_) => "UNSUPPORTED_FEATURE",
            SpecError::UnparseableFilter(_) => "UNPARSEABLE_FILTER",
            SpecError::ConflictingFilter(_) => "CONFLICTING_FILTER",
            SpecError::UnknownField(_) => "FIELD_NOT_FOUND",
            SpecError::TypeMismatch(_) => "TYPE_INCONSISTENT",
        }
    }
}

impl From<TabularError> for SpecError {
    fn from(e: TabularError) -> Self {
        match e {
            TabularError::UnknownField(f) => SpecError::UnknownField(f),
            other => SpecError::TypeMismatch(other.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationStage {
    Structural,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub code: String,
    pub message: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub stage: ValidationStage,
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    fn from_issues(stage: ValidationStage, issues: Vec<ValidationIssue>) -> Self {
        Self {
            ok: issues.is_empty(),
            stage,
            issues,
        }
    }

    /// One line per issue, `CODE at path: message`.
    pub fn trace(&self) -> String {
        self.issues
            .iter()
            .map(|i| format!("{} at {}: {}", i.code, i.path, i.message))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn issue(code: &str, path: impl Into<String>, message: impl Into<String>) -> ValidationIssue {
    ValidationIssue {
        code: code.into(),
        message: message.into(),
        path: path.into(),
    }
}

pub const CHANNELS: [&str; 17] = [
    "x", "y", "x2", "y2", "xOffset", "yOffset", "color", "fill", "stroke", "opacity", "size", "shape", "theta",
    "text", "tooltip", "detail", "order",
];

const AGGREGATES: [&str; 21] = [
    "count", "valid", "missing", "distinct", "sum", "product", "mean", "average", "median", "q1", "q3", "ci0", "ci1",
    "stdev", "stdevp", "variance", "variancep", "min", "max", "argmin", "argmax",
];

const TYPE_FREE_AGGREGATES: [&str; 4] = ["count", "valid", "missing", "distinct"];
const ORDER_AGGREGATES: [&str; 4] = ["min", "max", "argmin", "argmax"];

/// Grammar-shape checks that need no dataset.
pub fn validate_structure(spec: &ChartSpec) -> ValidationReport {
    let mut issues = Vec::new();
    if spec.data_ref.as_deref().is_none_or(str::is_empty) {
        issues.push(issue("MISSING_DATA", "data", "chart must reference a dataset by name"));
    }
    if spec.mark.is_none() {
        issues.push(issue("MISSING_MARK", "mark", "chart has no mark"));
    }
    for (channel, enc) in &spec.encodings {
        let path = format!("encoding.{channel}");
        if !CHANNELS.contains(&channel.as_str()) {
            issues.push(issue("ILLEGAL_CHANNEL", &path, format!("`{channel}` is not a supported channel")));
            continue;
        }
        if let Some(op) = &enc.aggregate {
            if !AGGREGATES.contains(&op.as_str()) {
                issues.push(issue("ILLEGAL_AGGREGATE", format!("{path}.aggregate"), format!("unknown aggregate `{op}`")));
            }
        }
        let counts = enc.aggregate.as_deref() == Some("count");
        if enc.field.is_none() && !counts {
            issues.push(issue("MISSING_FIELD", &path, "encoding needs a field unless it counts rows"));
        }
        if enc.measure.is_none() {
            issues.push(issue("MISSING_TYPE", format!("{path}.type"), "encoding needs a measurement type"));
        }
    }
    let mut names: Vec<&str> = Vec::new();
    for (i, sel) in spec.selections.iter().enumerate() {
        let path = format!("params[{i}]");
        let valid_name = sel
            .name
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && sel.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid_name {
            issues.push(issue("BAD_SELECTION", format!("{path}.name"), format!("`{}` is not a valid parameter name", sel.name)));
        } else if names.contains(&sel.name.as_str()) {
            issues.push(issue("BAD_SELECTION", format!("{path}.name"), format!("duplicate parameter `{}`", sel.name)));
        }
        names.push(&sel.name);
        if sel.kind.is_none() {
            issues.push(issue(
                "BAD_SELECTION",
                format!("{path}.select.type"),
                format!("selection type `{}` is neither interval nor point", sel.declared_kind),
            ));
        }
        for ch in &sel.encodings {
            if !CHANNELS.contains(&ch.as_str()) {
                issues.push(issue("BAD_SELECTION", format!("{path}.select.encodings"), format!("`{ch}` is not a channel")));
            }
        }
    }
    for (i, t) in spec.transforms.iter().enumerate() {
        for atom in t.atoms() {
            let malformed = match atom {
                Predicate::Range { interval, .. } => !interval.is_well_formed(),
                Predicate::InSet { values, .. } => values.is_empty(),
                Predicate::Equals { value: Scalar::Number(n), .. } => !n.is_finite(),
                _ => false,
            };
            if malformed {
                issues.push(issue("MALFORMED_FILTER", format!("transform[{i}]"), format!("filter `{atom}` is malformed")));
            }
        }
    }
    ValidationReport::from_issues(ValidationStage::Structural, issues)
}

/// Runs the structural stage, then (if it passed) the semantic stage
/// against `dataset`.
pub fn validate(spec: &ChartSpec, dataset: &Dataset) -> ValidationReport {
    let structural = validate_structure(spec);
    if !structural.ok {
        return structural;
    }
    let mut issues = Vec::new();
    if spec.data_ref.as_deref() != Some(dataset.name()) {
        issues.push(issue(
            "DATA_REF_MISMATCH",
            "data.name",
            format!("chart references `{}`, bound dataset is `{}`", spec.data_ref.as_deref().unwrap_or_default(), dataset.name()),
        ));
    }
    for (channel, enc) in &spec.encodings {
        let Some(field) = &enc.field else { continue };
        let path = format!("encoding.{channel}.field");
        let Ok(ty) = dataset.column_type(field) else {
            issues.push(issue("FIELD_NOT_FOUND", path, format!("field `{field}` does not exist")));
            continue;
        };
        let op = enc.aggregate.as_deref();
        let type_free = op.is_some_and(|o| TYPE_FREE_AGGREGATES.contains(&o));
        if let Some(op) = op {
            let ok = type_free
                || (ORDER_AGGREGATES.contains(&op) && matches!(ty, ColumnType::Numeric | ColumnType::Temporal))
                || ty == ColumnType::Numeric;
            if !ok {
                issues.push(issue(
                    "TYPE_INCONSISTENT",
                    format!("encoding.{channel}.aggregate"),
                    format!("`{op}` cannot aggregate {ty} field `{field}`"),
                ));
            }
        }
        let measure_ok = match enc.measure {
            _ if type_free => true,
            Some(MeasureType::Quantitative) => ty == ColumnType::Numeric,
            Some(MeasureType::Temporal) => ty == ColumnType::Temporal,
            _ => true,
        };
        if !measure_ok {
            issues.push(issue(
                "TYPE_INCONSISTENT",
                format!("encoding.{channel}.type"),
                format!(
                    "{ty} field `{field}` cannot be encoded as {}",
                    enc.measure.map(MeasureType::as_str).unwrap_or_default()
                ),
            ));
        }
    }
    for (i, t) in spec.transforms.iter().enumerate() {
        let path = format!("transform[{i}].filter");
        for atom in t.atoms() {
            match dataset.check_predicate(atom) {
                Ok(()) => {}
                Err(TabularError::UnknownField(f)) => {
                    issues.push(issue("FIELD_NOT_FOUND", &path, format!("field `{f}` does not exist")))
                }
                Err(e) => issues.push(issue("TYPE_INCONSISTENT", &path, e.to_string())),
            }
        }
    }
    for (i, sel) in spec.selections.iter().enumerate() {
        for f in &sel.fields {
            if !dataset.has_field(f) {
                issues.push(issue("FIELD_NOT_FOUND", format!("params[{i}].select.fields"), format!("field `{f}` does not exist")));
            }
        }
        for ch in &sel.encodings {
            if !spec.encodings.contains_key(ch) {
                issues.push(issue(
                    "BAD_SELECTION",
                    format!("params[{i}].select.encodings"),
                    format!("selection projects over unencoded channel `{ch}`"),
                ));
            }
        }
    }
    ValidationReport::from_issues(ValidationStage::Semantic, issues)
}

/// Evaluates the chart's filters against the dataset.
pub fn bind(spec: &ChartSpec, dataset: &Dataset) -> Result<RowMask, SpecError> {
    Ok(dataset.evaluate_all(spec.transforms.iter())?)
}

// ---------------------------------------------------------------------------
// filter appending

/// Appends `new` filters to `spec` after checking them against `dataset`.
pub fn append_filters(spec: &ChartSpec, new: &[Predicate], dataset: &Dataset) -> Result<ChartSpec, SpecError> {
    for p in new {
        for atom in p.atoms() {
            dataset.check_predicate(atom)?;
        }
    }
    let mut out = spec.clone();
    out.transforms = merge_filters(&spec.transforms, new)?;
    Ok(out)
}

/// Dataset-free filter merge. Each new atom is skipped if already present,
/// intersected into an existing atom on the same field when both are ranges
/// or both are value sets, and appended otherwise.
pub fn merge_filters(existing: &[Predicate], new: &[Predicate]) -> Result<Vec<Predicate>, SpecError> {
    let mut out: Vec<Predicate> = existing.to_vec();
    for p in new {
        for atom in p.atoms() {
            let atom = atom.normalized();
            if out.iter().any(|e| e.normalized() == atom) {
                continue;
            }
            let field = atom.field().expect("atoms carry a field").clone();
            let conflict = |other: &Predicate| SpecError::ConflictingFilter(format!("`{atom}` contradicts `{other}`"));
            let same_field = out.iter().position(|e| e.is_atomic() && e.field() == Some(&field) && same_family(e, &atom));
            match (same_field, &atom) {
                (Some(i), Predicate::Range { interval, .. }) => {
                    let Predicate::Range { interval: cur, .. } = &out[i] else { unreachable!() };
                    let merged = cur.intersect(interval);
                    if merged.is_empty() {
                        return Err(conflict(&out[i]));
                    }
                    out[i] = Predicate::range(field, merged);
                }
                (Some(i), _) => {
                    let cur = value_set(&out[i]);
                    let incoming = value_set(&atom);
                    let kept: Vec<Scalar> = cur.iter().filter(|v| incoming.contains(v)).cloned().collect();
                    if kept.is_empty() {
                        return Err(conflict(&out[i]));
                    }
                    if kept.len() < cur.len() {
                        out[i] = if kept.len() == 1 {
                            Predicate::Equals {
                                field,
                                value: kept.into_iter().next().unwrap(),
                            }
                        } else {
                            Predicate::InSet { field, values: kept }.normalized()
                        };
                    }
                }
                (None, _) => {
                    if let Some(other) = out.iter().find(|e| e.is_atomic() && e.field() == Some(&field) && excludes(e, &atom)) {
                        return Err(conflict(other));
                    }
                    out.push(atom);
                }
            }
        }
    }
    Ok(out)
}

fn same_family(a: &Predicate, b: &Predicate) -> bool {
    matches!(
        (a, b),
        (Predicate::Range { .. }, Predicate::Range { .. })
            | (Predicate::Equals { .. } | Predicate::InSet { .. }, Predicate::Equals { .. } | Predicate::InSet { .. })
    )
}

fn value_set(p: &Predicate) -> Vec<Scalar> {
    match p {
        Predicate::Equals { value, .. } => vec![value.clone()],
        Predicate::InSet { values, .. } => values.clone(),
        _ => Vec::new(),
    }
}

/// A numeric value set and a range on the same field with nothing in common.
fn excludes(a: &Predicate, b: &Predicate) -> bool {
    let (range, set) = match (a, b) {
        (Predicate::Range { interval, .. }, other) | (other, Predicate::Range { interval, .. }) => (interval, value_set(other)),
        _ => return false,
    };
    let numbers: Vec<f64> = set.iter().filter_map(Scalar::as_f64).collect();
    !numbers.is_empty() && numbers.len() == set.len() && numbers.iter().all(|v| !range.contains(*v))
}

// ---------------------------------------------------------------------------
// chart heuristics

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Trend,
    Comparison,
    Correlation,
    Distribution,
    Density,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Trend,
        TaskKind::Comparison,
        TaskKind::Correlation,
        TaskKind::Distribution,
        TaskKind::Density,
    ];

    /// Keyword guess from free text; `None` when nothing matches.
    pub fn from_text(text: &str) -> Option<TaskKind> {
        let t = format!(" {} ", text.to_lowercase());
        let table: [(TaskKind, &[&str]); 5] = [
            (TaskKind::Trend, &["trend", "over time", "evolution", "change over"]),
            (TaskKind::Correlation, &["correlat", "relationship", " vs ", "versus", "relate"]),
            (TaskKind::Distribution, &["distribution", "spread", "outlier", "variance"]),
            (TaskKind::Density, &["density", "heatmap", "co-occur", "cross-tab"]),
            (TaskKind::Comparison, &["compare", "comparison", " by ", "across", "differ"]),
        ];
        table
            .into_iter()
            .find(|(_, words)| words.iter().any(|w| t.contains(w)))
            .map(|(k, _)| k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AxisKind {
    Categorical,
    Numeric,
    Temporal,
}

fn axis_kind(t: ColumnType) -> AxisKind {
    match t {
        ColumnType::Numeric => AxisKind::Numeric,
        ColumnType::Temporal => AxisKind::Temporal,
        ColumnType::Categorical | ColumnType::Boolean | ColumnType::Text => AxisKind::Categorical,
    }
}

/// Fixed chart-type table. Boolean and text axes count as categorical.
pub fn select_chart_heuristic(task: TaskKind, x: ColumnType, y: ColumnType) -> Mark {
    use AxisKind::*;
    match (task, axis_kind(x), axis_kind(y)) {
        (TaskKind::Trend, Temporal, Numeric) => Mark::Line,
        (TaskKind::Comparison, Categorical, Numeric) => Mark::Bar,
        (TaskKind::Correlation, Numeric, Numeric) => Mark::Point,
        (TaskKind::Distribution, Categorical, Numeric) => Mark::Boxplot,
        (TaskKind::Density, Categorical, Categorical) => Mark::Rect,
        _ => Mark::Bar,
    }
}

/// The heuristic table as prompt text.
pub const HEURISTIC_TABLE: &str = "\
- trend, temporal x, numeric y -> line
- comparison, categorical x, numeric y -> bar
- correlation, numeric x, numeric y -> point
- distribution, categorical x, numeric y -> boxplot
- density, categorical x, categorical y -> rect
- anything else -> bar";

/// Unfiltered starting chart for a freshly uploaded dataset.
pub fn overview_spec(dataset: &Dataset) -> ChartSpec {
    let pick = |want: &[ColumnType]| dataset.columns().iter().find(|c| want.contains(&c.column_type()));
    let base = ChartSpec::new(dataset.name(), Mark::Bar);
    let count = Encoding::count();
    if let Some(c) = pick(&[ColumnType::Categorical, ColumnType::Boolean]) {
        base.encode("x", Encoding::field(c.field.clone(), MeasureType::Nominal)).encode("y", count)
    } else if let Some(c) = pick(&[ColumnType::Temporal]) {
        let mut spec = base.encode("x", Encoding::field(c.field.clone(), MeasureType::Temporal)).encode("y", count);
        spec.mark = Some(Mark::Line);
        spec
    } else if let Some(c) = pick(&[ColumnType::Numeric]) {
        let mut x = Encoding::field(c.field.clone(), MeasureType::Quantitative);
        x.extra.insert("bin".into(), serde_json::Value::Bool(true));
        base.encode("x", x).encode("y", count)
    } else if let Some(c) = dataset.columns().first() {
        base.encode("x", Encoding::field(c.field.clone(), MeasureType::Nominal)).encode("y", count)
    } else {
        base
    }
}
