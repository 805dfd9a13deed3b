use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::expr::parse_filter_expression;
use super::SpecError;
use crate::tabular::{parse_temporal, FieldRef, Interval, Predicate, Scalar};

pub const SCHEMA_URL: &str = "https://vega.github.io/schema/vega-lite/v5.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mark {
    Bar,
    Line,
    Point,
    Area,
    Boxplot,
    /// Rectangles, used for heatmaps.
    Rect,
}

impl Mark {
    pub fn as_str(self) -> &'static str {
        match self {
            Mark::Bar => "bar",
            Mark::Line => "line",
            Mark::Point => "point",
            Mark::Area => "area",
            Mark::Boxplot => "boxplot",
            Mark::Rect => "rect",
        }
    }

    pub fn parse(s: &str) -> Option<Mark> {
        Some(match s {
            "bar" => Mark::Bar,
            "line" => Mark::Line,
            "point" | "circle" => Mark::Point,
            "area" => Mark::Area,
            "boxplot" => Mark::Boxplot,
            "rect" => Mark::Rect,
            _ => return None,
        })
    }
}

impl fmt::Display for Mark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Grammar-level measurement type of an encoded field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureType {
    Quantitative,
    Temporal,
    Nominal,
    Ordinal,
}

impl MeasureType {
    pub fn as_str(self) -> &'static str {
        match self {
            MeasureType::Quantitative => "quantitative",
            MeasureType::Temporal => "temporal",
            MeasureType::Nominal => "nominal",
            MeasureType::Ordinal => "ordinal",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "quantitative" | "Q" => MeasureType::Quantitative,
            "temporal" | "T" => MeasureType::Temporal,
            "nominal" | "N" => MeasureType::Nominal,
            "ordinal" | "O" => MeasureType::Ordinal,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Encoding {
    pub field: Option<FieldRef>,
    pub measure: Option<MeasureType>,
    pub aggregate: Option<String>,
    /// Properties this engine does not interpret (title, scale, bin, ...).
    pub extra: Map<String, Value>,
}

impl Encoding {
    pub fn field(field: impl Into<FieldRef>, measure: MeasureType) -> Self {
        Self {
            field: Some(field.into()),
            measure: Some(measure),
            ..Self::default()
        }
    }

    pub fn count() -> Self {
        Self {
            measure: Some(MeasureType::Quantitative),
            aggregate: Some("count".into()),
            ..Self::default()
        }
    }

    pub fn with_aggregate(mut self, op: &str) -> Self {
        self.aggregate = Some(op.to_string());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionKind {
    Interval,
    Point,
}

/// A selection parameter (`params[*]` with a `select` clause).
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub name: String,
    /// `None` when the declared type is not one this engine knows.
    pub kind: Option<SelectionKind>,
    pub declared_kind: String,
    pub encodings: Vec<String>,
    pub fields: Vec<FieldRef>,
    pub extra: Map<String, Value>,
}

impl Selection {
    pub fn interval(name: &str, encodings: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: Some(SelectionKind::Interval),
            declared_kind: "interval".into(),
            encodings: encodings.iter().map(|s| s.to_string()).collect(),
            fields: Vec::new(),
            extra: Map::new(),
        }
    }

    pub fn point(name: &str, fields: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: Some(SelectionKind::Point),
            declared_kind: "point".into(),
            encodings: Vec::new(),
            fields: fields.iter().map(|s| FieldRef::from(*s)).collect(),
            extra: Map::new(),
        }
    }
}

/// Declarative single-view chart document.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChartSpec {
    pub data_ref: Option<String>,
    pub mark: Option<Mark>,
    pub mark_extra: Map<String, Value>,
    /// Filter transforms in application order.
    pub transforms: Vec<Predicate>,
    /// Non-filter transforms, emitted after the filters.
    pub other_transforms: Vec<Value>,
    pub encodings: BTreeMap<String, Encoding>,
    pub selections: Vec<Selection>,
    /// Parameters without a `select` clause.
    pub other_params: Vec<Value>,
    /// Top-level properties this engine does not interpret.
    pub extra: Map<String, Value>,
}

const COMPOSITE_KEYS: [&str; 7] = ["layer", "hconcat", "vconcat", "concat", "facet", "repeat", "spec"];

impl ChartSpec {
    pub fn new(data_ref: &str, mark: Mark) -> Self {
        let mut extra = Map::new();
        extra.insert("$schema".into(), Value::String(SCHEMA_URL.into()));
        Self {
            data_ref: Some(data_ref.to_string()),
            mark: Some(mark),
            extra,
            ..Self::default()
        }
    }

    pub fn encode(mut self, channel: &str, encoding: Encoding) -> Self {
        self.encodings.insert(channel.to_string(), encoding);
        self
    }

    pub fn with_filter(mut self, predicate: Predicate) -> Self {
        self.transforms.push(predicate);
        self
    }

    pub fn with_selection(mut self, selection: Selection) -> Self {
        self.selections.push(selection);
        self
    }

    /// Fields referenced by any filter transform, in first-use order.
    pub fn filtered_fields(&self) -> Vec<FieldRef> {
        let mut out: Vec<FieldRef> = Vec::new();
        for t in &self.transforms {
            for f in t.fields() {
                if !out.contains(&f) {
                    out.push(f);
                }
            }
        }
        out
    }

    pub fn encoded_fields(&self) -> Vec<FieldRef> {
        let mut out: Vec<FieldRef> = Vec::new();
        for enc in self.encodings.values() {
            if let Some(f) = &enc.field {
                if !out.contains(f) {
                    out.push(f.clone());
                }
            }
        }
        out
    }

    pub fn from_value(doc: &Value) -> Result<Self, SpecError> {
        let obj = doc
            .as_object()
            .ok_or_else(|| SpecError::Structural("chart document must be a JSON object".into()))?;
        for key in COMPOSITE_KEYS {
            if obj.contains_key(key) {
                return Err(SpecError::Unsupported(format!("composite view `{key}`")));
            }
        }
        let mut spec = ChartSpec::default();
        for (key, value) in obj {
            match key.as_str() {
                "data" => spec.data_ref = parse_data(value)?,
                "mark" => parse_mark(value, &mut spec)?,
                "transform" => parse_transforms(value, &mut spec)?,
                "encoding" => spec.encodings = parse_encodings(value)?,
                "params" => parse_params(value, &mut spec)?,
                _ => {
                    spec.extra.insert(key.clone(), value.clone());
                }
            }
        }
        Ok(spec)
    }

    pub fn to_value(&self) -> Value {
        let mut obj = self.extra.clone();
        if let Some(name) = &self.data_ref {
            obj.insert("data".into(), json!({ "name": name }));
        }
        if let Some(mark) = self.mark {
            if self.mark_extra.is_empty() {
                obj.insert("mark".into(), Value::String(mark.as_str().into()));
            } else {
                let mut m = self.mark_extra.clone();
                m.insert("type".into(), Value::String(mark.as_str().into()));
                obj.insert("mark".into(), Value::Object(m));
            }
        }
        let mut transforms: Vec<Value> = self
            .transforms
            .iter()
            .map(|p| json!({ "filter": predicate_to_filter(p) }))
            .collect();
        transforms.extend(self.other_transforms.iter().cloned());
        if !transforms.is_empty() {
            obj.insert("transform".into(), Value::Array(transforms));
        }
        if !self.encodings.is_empty() {
            let enc: Map<String, Value> = self
                .encodings
                .iter()
                .map(|(ch, e)| (ch.clone(), encoding_to_value(e)))
                .collect();
            obj.insert("encoding".into(), Value::Object(enc));
        }
        let mut params: Vec<Value> = self.selections.iter().map(selection_to_value).collect();
        params.extend(self.other_params.iter().cloned());
        if !params.is_empty() {
            obj.insert("params".into(), Value::Array(params));
        }
        Value::Object(obj)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.to_value()).expect("chart serialises")
    }
}

impl Serialize for ChartSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ChartSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(deserializer)?;
        ChartSpec::from_value(&v).map_err(serde::de::Error::custom)
    }
}

/// Parses a chart document from JSON text.
pub fn parse_spec(document: &str) -> Result<ChartSpec, SpecError> {
    let v: Value = serde_json::from_str(document).map_err(|e| SpecError::Structural(format!("invalid JSON: {e}")))?;
    ChartSpec::from_value(&v)
}

fn parse_data(value: &Value) -> Result<Option<String>, SpecError> {
    match value.get("name") {
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(SpecError::Structural("data.name must be a string".into())),
        None if value.get("url").is_some() || value.get("values").is_some() => Err(SpecError::Unsupported(
            "inline or URL data; reference the dataset by name".into(),
        )),
        None => Err(SpecError::Structural("data must reference a named dataset".into())),
    }
}

fn parse_mark(value: &Value, spec: &mut ChartSpec) -> Result<(), SpecError> {
    let (name, extra) = match value {
        Value::String(s) => (s.as_str(), Map::new()),
        Value::Object(o) => {
            let name = o
                .get("type")
                .and_then(Value::as_str)
                .ok_or_else(|| SpecError::Structural("mark object needs a string `type`".into()))?;
            let mut extra = o.clone();
            extra.remove("type");
            (name, extra)
        }
        _ => return Err(SpecError::Structural("mark must be a string or object".into())),
    };
    spec.mark = Some(Mark::parse(name).ok_or_else(|| SpecError::Unsupported(format!("mark `{name}`")))?);
    spec.mark_extra = extra;
    Ok(())
}

fn parse_transforms(value: &Value, spec: &mut ChartSpec) -> Result<(), SpecError> {
    let items = value
        .as_array()
        .ok_or_else(|| SpecError::Structural("transform must be an array".into()))?;
    for item in items {
        match item.get("filter") {
            Some(f) if f.get("param").is_some() => spec.other_transforms.push(item.clone()),
            Some(f) => spec.transforms.push(filter_to_predicate(f)?),
            None => spec.other_transforms.push(item.clone()),
        }
    }
    Ok(())
}

fn parse_encodings(value: &Value) -> Result<BTreeMap<String, Encoding>, SpecError> {
    let obj = value
        .as_object()
        .ok_or_else(|| SpecError::Structural("encoding must be an object".into()))?;
    let mut out = BTreeMap::new();
    for (channel, def) in obj {
        let def = def
            .as_object()
            .ok_or_else(|| SpecError::Structural(format!("encoding.{channel} must be an object")))?;
        let mut enc = Encoding::default();
        for (k, v) in def {
            match k.as_str() {
                "field" => {
                    let s = v
                        .as_str()
                        .ok_or_else(|| SpecError::Structural(format!("encoding.{channel}.field must be a string")))?;
                    enc.field = Some(FieldRef::from(s));
                }
                "type" => {
                    let s = v.as_str().unwrap_or_default();
                    enc.measure = Some(
                        MeasureType::parse(s)
                            .ok_or_else(|| SpecError::Structural(format!("encoding.{channel}.type `{s}` is not a measurement type")))?,
                    );
                }
                "aggregate" if v.is_string() => enc.aggregate = v.as_str().map(str::to_string),
                _ => {
                    enc.extra.insert(k.clone(), v.clone());
                }
            }
        }
        out.insert(channel.clone(), enc);
    }
    Ok(out)
}

fn parse_params(value: &Value, spec: &mut ChartSpec) -> Result<(), SpecError> {
    let items = value
        .as_array()
        .ok_or_else(|| SpecError::Structural("params must be an array".into()))?;
    for item in items {
        let Some(select) = item.get("select") else {
            spec.other_params.push(item.clone());
            continue;
        };
        let name = item.get("name").and_then(Value::as_str).unwrap_or_default().to_string();
        let (declared, encodings, fields, sel_extra) = match select {
            Value::String(s) => (s.clone(), Vec::new(), Vec::new(), Map::new()),
            Value::Object(o) => {
                let declared = o.get("type").and_then(Value::as_str).unwrap_or_default().to_string();
                let strings = |key: &str| -> Vec<String> {
                    o.get(key)
                        .and_then(Value::as_array)
                        .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
                        .unwrap_or_default()
                };
                let mut rest = o.clone();
                for k in ["type", "encodings", "fields"] {
                    rest.remove(k);
                }
                let fields = strings("fields").into_iter().map(FieldRef::from).collect();
                (declared, strings("encodings"), fields, rest)
            }
            _ => return Err(SpecError::Structural("params[].select must be a string or object".into())),
        };
        let mut extra: Map<String, Value> = item.as_object().cloned().unwrap_or_default();
        extra.remove("name");
        extra.remove("select");
        if !sel_extra.is_empty() {
            extra.insert("__select".into(), Value::Object(sel_extra));
        }
        let kind = match declared.as_str() {
            "interval" => Some(SelectionKind::Interval),
            "point" => Some(SelectionKind::Point),
            _ => None,
        };
        spec.selections.push(Selection {
            name,
            kind,
            declared_kind: declared,
            encodings,
            fields,
            extra,
        });
    }
    Ok(())
}

fn encoding_to_value(e: &Encoding) -> Value {
    let mut obj = e.extra.clone();
    if let Some(f) = &e.field {
        obj.insert("field".into(), Value::String(f.to_string()));
    }
    if let Some(m) = e.measure {
        obj.insert("type".into(), Value::String(m.as_str().into()));
    }
    if let Some(a) = &e.aggregate {
        obj.insert("aggregate".into(), Value::String(a.clone()));
    }
    Value::Object(obj)
}

fn selection_to_value(s: &Selection) -> Value {
    let mut select = match s.extra.get("__select") {
        Some(Value::Object(o)) => o.clone(),
        _ => Map::new(),
    };
    select.insert("type".into(), Value::String(s.declared_kind.clone()));
    if !s.encodings.is_empty() {
        select.insert("encodings".into(), json!(s.encodings));
    }
    if !s.fields.is_empty() {
        select.insert("fields".into(), json!(s.fields));
    }
    let mut obj = s.extra.clone();
    obj.remove("__select");
    obj.insert("name".into(), Value::String(s.name.clone()));
    obj.insert("select".into(), Value::Object(select));
    Value::Object(obj)
}

fn scalar_to_value(s: &Scalar) -> Value {
    match s {
        Scalar::Bool(b) => Value::Bool(*b),
        Scalar::Number(n) => num(*n),
        Scalar::Text(t) => Value::String(t.clone()),
    }
}

fn bound_to_value(b: Option<f64>) -> Value {
    b.map_or(Value::Null, num)
}

/// Whole numbers are written without a fraction.
fn num(v: f64) -> Value {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        json!(v as i64)
    } else {
        json!(v)
    }
}

/// Grammar field-predicate form of a predicate.
pub fn predicate_to_filter(p: &Predicate) -> Value {
    match p {
        Predicate::Equals { field, value } => json!({ "field": field, "equal": scalar_to_value(value) }),
        Predicate::InSet { field, values } => {
            json!({ "field": field, "oneOf": values.iter().map(scalar_to_value).collect::<Vec<_>>() })
        }
        Predicate::Range { field, interval } => {
            let iv = interval.canonical();
            match (iv.low, iv.high) {
                (lo, hi) if iv.low_inclusive && iv.high_inclusive && (lo.is_some() == hi.is_some()) => {
                    json!({ "field": field, "range": [bound_to_value(lo), bound_to_value(hi)] })
                }
                (Some(lo), None) => json!({ "field": field, (if iv.low_inclusive { "gte" } else { "gt" }): num(lo) }),
                (None, Some(hi)) => json!({ "field": field, (if iv.high_inclusive { "lte" } else { "lt" }): num(hi) }),
                (Some(lo), Some(hi)) => json!({ "and": [
                    { "field": field, (if iv.low_inclusive { "gte" } else { "gt" }): num(lo) },
                    { "field": field, (if iv.high_inclusive { "lte" } else { "lt" }): num(hi) },
                ]}),
                (None, None) => json!({ "field": field, "range": [null, null] }),
            }
        }
        Predicate::Conjunction { predicates } => {
            json!({ "and": predicates.iter().map(predicate_to_filter).collect::<Vec<_>>() })
        }
    }
}

fn value_to_scalar(v: &Value) -> Option<Scalar> {
    match v {
        Value::Bool(b) => Some(Scalar::Bool(*b)),
        Value::Number(n) => n.as_f64().map(Scalar::Number),
        Value::String(s) => Some(Scalar::Text(s.clone())),
        Value::Object(_) => datetime_object_ms(v).map(Scalar::Number),
        _ => None,
    }
}

/// Numeric bound; ISO strings and date-time objects become epoch millis.
fn value_to_bound(v: &Value) -> Result<Option<f64>, SpecError> {
    match v {
        Value::Null => Ok(None),
        Value::Number(n) => Ok(n.as_f64()),
        Value::String(s) => parse_temporal(s)
            .map(Some)
            .ok_or_else(|| SpecError::UnparseableFilter(format!("bound `{s}` is neither a number nor a date"))),
        Value::Object(_) => datetime_object_ms(v)
            .map(Some)
            .ok_or_else(|| SpecError::UnparseableFilter(format!("bad date-time object {v}"))),
        other => Err(SpecError::UnparseableFilter(format!("bad range bound {other}"))),
    }
}

fn datetime_object_ms(v: &Value) -> Option<f64> {
    let o = v.as_object()?;
    let get = |k: &str, d: i64| o.get(k).and_then(Value::as_i64).unwrap_or(d);
    let year = o.get("year").and_then(Value::as_i64)?;
    let date = chrono::NaiveDate::from_ymd_opt(year as i32, get("month", 1) as u32, get("date", 1) as u32)?;
    let time = chrono::NaiveTime::from_hms_milli_opt(
        get("hours", 0) as u32,
        get("minutes", 0) as u32,
        get("seconds", 0) as u32,
        get("milliseconds", 0) as u32,
    )?;
    Some(date.and_time(time).and_utc().timestamp_millis() as f64)
}

/// Parses one `filter` value: an expression string, a field predicate, or
/// an `and` of those.
pub fn filter_to_predicate(f: &Value) -> Result<Predicate, SpecError> {
    match f {
        Value::String(expr) => parse_filter_expression(expr),
        Value::Object(o) if o.contains_key("and") => {
            let items = o["and"]
                .as_array()
                .ok_or_else(|| SpecError::UnparseableFilter("`and` must be an array".into()))?;
            let parts = items.iter().map(filter_to_predicate).collect::<Result<Vec<_>, _>>()?;
            Ok(merge_conjunction(parts))
        }
        Value::Object(o) if o.contains_key("or") || o.contains_key("not") => Err(SpecError::UnparseableFilter(
            "disjunction and negation filters are not supported".into(),
        )),
        Value::Object(o) => {
            let field = o
                .get("field")
                .and_then(Value::as_str)
                .ok_or_else(|| SpecError::UnparseableFilter(format!("filter {f} has no field")))?;
            let field = FieldRef::from(field);
            if let Some(v) = o.get("equal") {
                let value = value_to_scalar(v).ok_or_else(|| SpecError::UnparseableFilter(format!("bad literal {v}")))?;
                return Ok(Predicate::Equals { field, value });
            }
            if let Some(v) = o.get("oneOf") {
                let values = v
                    .as_array()
                    .ok_or_else(|| SpecError::UnparseableFilter("oneOf must be an array".into()))?
                    .iter()
                    .map(|x| value_to_scalar(x).ok_or_else(|| SpecError::UnparseableFilter(format!("bad literal {x}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                return Ok(Predicate::InSet { field, values });
            }
            if let Some(v) = o.get("range") {
                let arr = v
                    .as_array()
                    .filter(|a| a.len() == 2)
                    .ok_or_else(|| SpecError::UnparseableFilter("range must be a two-element array".into()))?;
                let iv = Interval {
                    low: value_to_bound(&arr[0])?,
                    high: value_to_bound(&arr[1])?,
                    low_inclusive: true,
                    high_inclusive: true,
                };
                return Ok(Predicate::range(field, iv));
            }
            let mut iv = Interval::UNBOUNDED;
            let mut seen = false;
            for (key, value) in o {
                if !matches!(key.as_str(), "gt" | "gte" | "lt" | "lte") {
                    continue;
                }
                let bound = value_to_bound(value)?;
                match key.as_str() {
                    "gt" | "gte" => {
                        iv = iv.intersect(&Interval {
                            low: bound,
                            low_inclusive: key == "gte",
                            ..Interval::UNBOUNDED
                        });
                        seen = true;
                    }
                    "lt" | "lte" => {
                        iv = iv.intersect(&Interval {
                            high: bound,
                            high_inclusive: key == "lte",
                            ..Interval::UNBOUNDED
                        });
                        seen = true;
                    }
                    _ => {}
                }
            }
            if seen {
                Ok(Predicate::range(field, iv))
            } else {
                Err(SpecError::UnparseableFilter(format!("unsupported field predicate {f}")))
            }
        }
        other => Err(SpecError::UnparseableFilter(format!("unsupported filter {other}"))),
    }
}

/// Flattens a parsed conjunction, merges same-field ranges by intersection
/// and collapses single members.
pub(crate) fn merge_conjunction(parts: Vec<Predicate>) -> Predicate {
    let mut atoms: Vec<Predicate> = Vec::new();
    for p in parts {
        for atom in p.atoms() {
            if let Predicate::Range { field, interval } = atom {
                if let Some(Predicate::Range { interval: existing, .. }) = atoms
                    .iter_mut()
                    .find(|a| matches!(a, Predicate::Range { field: f, .. } if f == field))
                {
                    *existing = existing.intersect(interval);
                    continue;
                }
            }
            atoms.push(atom.clone());
        }
    }
    if atoms.len() == 1 {
        atoms.pop().unwrap()
    } else {
        Predicate::and(atoms)
    }
}
