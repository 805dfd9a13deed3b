//! Deterministic stand-in for a model provider.
//!
//! Chart and relevance requests are answered by fixed rules over the
//! prompt's structured payload. Insight and dimension requests replay JSON
//! fixtures from `<dir>/<schema>/<digest>.json`, then `<dir>/<schema>/default.json`,
//! and otherwise fall back to a built-in answer derived from the payload
//! (unless the transport is strict).

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde_json::{json, Value};

use super::{ExpectedSchema, LlmError, LlmTransport, PromptDocument, ProviderConfig};
use crate::chartspec::{merge_filters, select_chart_heuristic, ChartSpec, Encoding, Mark, MeasureType, Selection, TaskKind};
use crate::intent::IntentBundle;
use crate::tabular::{format_number, ColumnType, Interval, Predicate, Scalar};

#[derive(Debug, Default)]
pub struct MockTransport {
    fixtures_dir: Option<PathBuf>,
    strict: bool,
    calls: AtomicUsize,
}

impl MockTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fixtures(dir: impl Into<PathBuf>) -> Self {
        Self {
            fixtures_dir: Some(dir.into()),
            ..Self::default()
        }
    }

    /// Scripted schemas fail with `MissingFixture` instead of falling back.
    pub fn strict(mut self) -> Self {
        self.strict = true;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn fixture(&self, prompt: &PromptDocument) -> Result<Option<String>, LlmError> {
        let digest = prompt.digest();
        if let Some(dir) = &self.fixtures_dir {
            let schema_dir = dir.join(prompt.expected_schema.as_str());
            for name in [format!("{digest}.json"), "default.json".to_string()] {
                let path = schema_dir.join(&name);
                if path.is_file() {
                    return std::fs::read_to_string(&path)
                        .map(Some)
                        .map_err(|e| LlmError::AdapterUnavailable(format!("{}: {e}", path.display())));
                }
            }
        }
        if self.strict {
            return Err(LlmError::MissingFixture(digest));
        }
        Ok(None)
    }
}

impl LlmTransport for MockTransport {
    fn send(&self, _config: &ProviderConfig, prompt: &PromptDocument) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let p = &prompt.payload;
        match prompt.expected_schema {
            ExpectedSchema::ChartSpec => Ok(mock_chart(p)),
            ExpectedSchema::RelevanceMap => {
                let fields: Vec<String> = serde_json::from_value(p["fields"].clone()).unwrap_or_default();
                let text = p["intent_text"].as_str().unwrap_or_default();
                Ok(serde_json::to_string(&mock_relevance(&fields, text)).expect("map serialises"))
            }
            ExpectedSchema::InsightBatch => match self.fixture(prompt)? {
                Some(text) => Ok(text),
                None => Ok(mock_insights(p).to_string()),
            },
            ExpectedSchema::DimensionList => match self.fixture(prompt)? {
                Some(text) => Ok(text),
                None => Ok(Value::Array(candidate_list(p).into_iter().map(|(l, _)| Value::String(l)).collect()).to_string()),
            },
        }
    }
}

/// Lower-cased word tokens, splitting on non-alphanumerics and camelCase
/// humps; a trailing `s` is dropped from tokens longer than three letters.
pub fn token_set(text: &str) -> BTreeSet<String> {
    let mut words: Vec<String> = Vec::new();
    let mut cur = String::new();
    let mut prev_lower = false;
    for c in text.chars() {
        if !c.is_alphanumeric() {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            prev_lower = false;
            continue;
        }
        if c.is_uppercase() && prev_lower && !cur.is_empty() {
            words.push(std::mem::take(&mut cur));
        }
        prev_lower = c.is_lowercase() || c.is_ascii_digit();
        cur.extend(c.to_lowercase());
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
        .into_iter()
        .map(|w| {
            if w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") {
                w[..w.len() - 1].to_string()
            } else {
                w
            }
        })
        .collect()
}

/// `0.25 + 0.75 * |tokens(field) ∩ tokens(intent)| / |tokens(field)|`.
pub fn mock_relevance(fields: &[String], intent_text: &str) -> BTreeMap<String, f64> {
    let intent = token_set(intent_text);
    fields
        .iter()
        .map(|f| {
            let toks = token_set(f);
            let share = if toks.is_empty() {
                0.0
            } else {
                toks.intersection(&intent).count() as f64 / toks.len() as f64
            };
            (f.clone(), 0.25 + 0.75 * share)
        })
        .collect()
}

fn columns(p: &Value) -> Vec<(String, ColumnType)> {
    p["columns"]
        .as_array()
        .map(|cols| {
            cols.iter()
                .filter_map(|c| {
                    let name = c["name"].as_str()?.to_string();
                    let ty: ColumnType = serde_json::from_value(c["type"].clone()).ok()?;
                    Some((name, ty))
                })
                .collect()
        })
        .unwrap_or_default()
}

fn candidate_list(p: &Value) -> Vec<(String, Option<Predicate>)> {
    p["candidates"]
        .as_array()
        .map(|cs| {
            cs.iter()
                .filter_map(|c| match c {
                    Value::String(s) => Some((s.clone(), None)),
                    _ => Some((
                        c["label"].as_str()?.to_string(),
                        serde_json::from_value(c["filter"].clone()).ok(),
                    )),
                })
                .collect()
        })
        .unwrap_or_default()
}

/// Byte offsets of whole-word, case-insensitive matches of `needle`.
fn find_word(haystack: &str, needle: &str) -> Option<usize> {
    let hay = haystack.to_lowercase();
    let needle = needle.to_lowercase();
    if needle.is_empty() || hay.len() != haystack.len() {
        return None;
    }
    let is_word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
    let mut from = 0;
    while let Some(i) = hay[from..].find(&needle) {
        let at = from + i;
        let before = hay[..at].chars().next_back();
        let after = hay[at + needle.len()..].chars().next();
        if !is_word(before) && !is_word(after) {
            return Some(at);
        }
        from = at + needle.len().max(1);
    }
    None
}

const OPERATORS: [(&str, &str); 16] = [
    ("equals", "="),
    (">=", ">="),
    ("<=", "<="),
    ("==", "="),
    ("=", "="),
    (">", ">"),
    ("<", "<"),
    ("at least", ">="),
    ("at most", "<="),
    ("greater than", ">"),
    ("more than", ">"),
    ("less than", "<"),
    ("above", ">"),
    ("over", ">"),
    ("below", "<"),
    ("under", "<"),
];

fn parse_condition(rest: &str, ty: ColumnType) -> Option<(&'static str, Scalar)> {
    let rest = rest.trim_start();
    let operator = |text: &str| -> Option<(&'static str, usize)> {
        let lower = text.to_lowercase();
        OPERATORS.iter().find_map(|(word, op)| {
            let ok = lower.starts_with(word)
                && (!word.chars().all(char::is_alphabetic) || !lower[word.len()..].starts_with(char::is_alphanumeric));
            ok.then_some((*op, word.len()))
        })
    };
    let (op, after) = match operator(rest) {
        Some((op, len)) => (op, rest[len..].trim_start()),
        None => {
            // "is above 7", or plain "is N"
            let tail = rest.strip_prefix("is ").or_else(|| rest.strip_prefix("Is "))?.trim_start();
            match operator(tail) {
                Some((op, len)) => (op, tail[len..].trim_start()),
                None => ("=", tail),
            }
        }
    };
    let token: String = if let Some(q) = after.strip_prefix(['\'', '"']) {
        q.chars().take_while(|c| *c != '\'' && *c != '"').collect()
    } else {
        after
            .chars()
            .take_while(|c| c.is_alphanumeric() || matches!(c, '.' | '-' | '_' | ':'))
            .collect()
    };
    let token = token.trim_end_matches('.').to_string();
    if token.is_empty() {
        return None;
    }
    match ty {
        ColumnType::Numeric => token.parse::<f64>().ok().map(|v| (op, Scalar::Number(v))),
        ColumnType::Temporal => crate::tabular::parse_temporal(&token).map(|v| (op, Scalar::Number(v))),
        ColumnType::Boolean => match token.to_lowercase().as_str() {
            "true" | "yes" => Some(("=", Scalar::Bool(true))),
            "false" | "no" => Some(("=", Scalar::Bool(false))),
            _ => None,
        },
        _ => (op == "=").then(|| (op, Scalar::Text(token))),
    }
}

fn condition_predicate(field: &str, op: &str, value: Scalar) -> Predicate {
    match (op, value) {
        (">", Scalar::Number(v)) => Predicate::range(field, Interval::greater_than(v)),
        (">=", Scalar::Number(v)) => Predicate::range(field, Interval::at_least(v)),
        ("<", Scalar::Number(v)) => Predicate::range(field, Interval::less_than(v)),
        ("<=", Scalar::Number(v)) => Predicate::range(field, Interval::at_most(v)),
        (_, v) => Predicate::equals(field, v),
    }
}

/// Filters named in an instruction, plus the fields it mentions without a
/// condition.
fn read_instruction(
    text: &str,
    cols: &[(String, ColumnType)],
    candidates: &[(String, Option<Predicate>)],
) -> (Vec<Predicate>, Vec<String>) {
    let mut preds = Vec::new();
    let mut rest = text.to_string();
    let mut by_len: Vec<&(String, Option<Predicate>)> = candidates.iter().filter(|(_, p)| p.is_some()).collect();
    by_len.sort_by_key(|(l, _)| std::cmp::Reverse(l.len()));
    for (label, pred) in by_len {
        if let Some(at) = rest.to_lowercase().find(&label.to_lowercase()).filter(|_| rest.len() == rest.to_lowercase().len()) {
            preds.push(pred.clone().unwrap());
            rest.replace_range(at..at + label.len(), " ");
        }
    }
    let mut cols_by_len: Vec<&(String, ColumnType)> = cols.iter().collect();
    cols_by_len.sort_by_key(|(n, _)| std::cmp::Reverse(n.len()));
    let mut mentioned = Vec::new();
    for (name, ty) in cols_by_len {
        let Some(at) = find_word(&rest, name) else { continue };
        match parse_condition(&rest[at + name.len()..], *ty) {
            Some((op, value)) => preds.push(condition_predicate(name, op, value)),
            None => mentioned.push(name.clone()),
        }
        rest.replace_range(at..at + name.len(), " ");
    }
    (preds, mentioned)
}

fn measure_for(ty: ColumnType) -> MeasureType {
    match ty {
        ColumnType::Numeric => MeasureType::Quantitative,
        ColumnType::Temporal => MeasureType::Temporal,
        _ => MeasureType::Nominal,
    }
}

fn mock_chart(p: &Value) -> String {
    let Ok(mut spec) = ChartSpec::from_value(&p["chart"]) else {
        return json!({ "hypotheses": [], "spec": p["chart"], "dimensions": [] }).to_string();
    };
    let bundle: Option<IntentBundle> = serde_json::from_value(p["bundle"].clone()).ok();
    let cols = columns(p);
    let candidates = candidate_list(p);
    let instruction = bundle.as_ref().and_then(|b| b.instruction.clone()).unwrap_or_default();

    let (mut new, mentioned) = read_instruction(&instruction, &cols, &candidates);
    if let Some(top) = bundle
        .as_ref()
        .and_then(|b| b.interaction_predicates.first())
        .filter(|w| !w.hover_only())
    {
        new.push(top.predicate.clone());
    }
    for pred in &new {
        if let Ok(merged) = merge_filters(&spec.transforms, std::slice::from_ref(pred)) {
            spec.transforms = merged;
        }
    }

    let type_of = |f: &str| cols.iter().find(|(n, _)| n == f).map(|(_, t)| *t);
    let filtered: Vec<String> = new.iter().flat_map(|p| p.fields()).map(|f| f.to_string()).collect();
    let regroup = mentioned
        .iter()
        .find(|f| !filtered.contains(f) && spec.encodings.get("x").and_then(|e| e.field.as_deref()) != Some(f.as_str()))
        .cloned();
    if let Some(field) = &regroup {
        let ty = type_of(field).unwrap_or(ColumnType::Categorical);
        spec.encodings.insert("x".into(), Encoding::field(field.as_str(), measure_for(ty)));
        if spec.encodings.get("y").and_then(|e| e.field.as_deref()) == Some(field.as_str()) || !spec.encodings.contains_key("y") {
            spec.encodings.insert("y".into(), Encoding::count());
        }
        spec.encodings.remove("color");
    }
    let task = TaskKind::from_text(&instruction).or(regroup.as_ref().map(|_| TaskKind::Comparison));
    if let Some(task) = task {
        let axis_type = |ch: &str| -> Option<ColumnType> {
            let e = spec.encodings.get(ch)?;
            if e.aggregate.is_some() {
                return Some(ColumnType::Numeric);
            }
            type_of(e.field.as_deref()?)
        };
        if let (Some(x), Some(y)) = (axis_type("x"), axis_type("y")) {
            spec.mark = Some(select_chart_heuristic(task, x, y));
        }
    }
    let quantitative = |ch: &str| spec.encodings.get(ch).is_some_and(|e| e.measure == Some(MeasureType::Quantitative) && e.aggregate.is_none());
    if spec.mark == Some(Mark::Point) && spec.selections.is_empty() && quantitative("x") && quantitative("y") {
        spec.selections.push(Selection::interval("brush", &["x", "y"]));
    }

    let mut hypotheses = Vec::new();
    if !new.is_empty() {
        let labels: Vec<String> = new.iter().map(|p| p.to_string()).collect();
        hypotheses.push(format!("The analyst is narrowing the view to {}", labels.join(" and ")));
    }
    if let Some(f) = &regroup {
        hypotheses.push(format!("The analyst wants to compare groups of {f}"));
    }
    if hypotheses.is_empty() {
        hypotheses.push("The analyst is surveying the current view".to_string());
    }
    json!({
        "hypotheses": hypotheses,
        "spec": spec.to_value(),
        "dimensions": candidates.iter().map(|(l, _)| l.clone()).collect::<Vec<_>>(),
    })
    .to_string()
}

fn domain_label(dataset: &str, cols: &[(String, ColumnType)]) -> &'static str {
    let text: BTreeSet<String> = token_set(&format!("{dataset} {}", cols.iter().map(|(c, _)| c.as_str()).collect::<Vec<_>>().join(" ")));
    let has = |words: &[&str]| words.iter().any(|w| text.contains(*w));
    if has(&["patient", "stres", "sleep", "health", "clinical", "heart", "bmi", "blood", "caffeine"]) {
        "Clinical"
    } else if has(&["sale", "revenue", "income", "price", "customer", "product", "profit", "order"]) {
        "Business"
    } else if has(&["latency", "cpu", "memory", "error", "server", "request", "throughput"]) {
        "Technical"
    } else {
        "General"
    }
}

fn mock_insights(p: &Value) -> Value {
    let cols = columns(p);
    let dataset = p["dataset"].as_str().unwrap_or("data");
    let summary = &p["summary"];
    let rows = summary["row_count"].as_u64().unwrap_or(0);
    let mut out: Vec<Value> = Vec::new();
    let mut drill: Vec<Value> = Vec::new();
    let empty = Vec::new();
    for stat in summary["fields"].as_array().unwrap_or(&empty) {
        let field = stat["field"].as_str().unwrap_or_default();
        if let (Some(min), Some(max)) = (stat["min"].as_f64(), stat["max"].as_f64()) {
            let mean = stat["mean"].as_f64().unwrap_or((min + max) / 2.0);
            let spread = if mean.abs() > f64::EPSILON { (max - min) / mean.abs() } else { 0.0 };
            out.push(json!({
                "category": "data_feature",
                "title": format!("{field} spans {} to {}", format_number(min), format_number(max)),
                "observations": [
                    format!("Mean {field} is {}", format_number((mean * 100.0).round() / 100.0)),
                    format!("Range covers {rows} rows"),
                ],
                "involved_fields": [field],
                "value_ranges": { field: [min, max] },
                "s_vis": (3.0 + spread * 2.0).round().min(9.0),
            }));
        }
        if let Some(top) = stat["top"].as_array().and_then(|t| t.first()) {
            let value = top["value"].as_str().map(str::to_string).unwrap_or_else(|| top["value"].to_string());
            let count = top["count"].as_u64().unwrap_or(0);
            let share = if rows > 0 { count as f64 / rows as f64 } else { 0.0 };
            out.push(json!({
                "category": "data_feature",
                "title": format!("{value} leads {field}"),
                "observations": [format!("{value} accounts for {count} of {rows} rows ({}%)", (share * 100.0).round())],
                "involved_fields": [field],
                "s_vis": (share * 10.0).round(),
            }));
            drill.push(json!({
                "category": "drill_down",
                "title": format!("Focus on {field} = {value}"),
                "observations": [format!("The largest {field} group holds {count} rows")],
                "involved_fields": [field],
                "s_vis": (share * 8.0).round() + 1.0,
            }));
        }
    }
    let encoded: BTreeSet<&str> = summary["fields"]
        .as_array()
        .unwrap_or(&empty)
        .iter()
        .filter_map(|s| s["field"].as_str())
        .collect();
    for (name, ty) in cols.iter().filter(|(n, t)| !encoded.contains(n.as_str()) && *t != ColumnType::Text).take(2) {
        drill.push(json!({
            "category": "drill_down",
            "title": format!("Break down by {name}"),
            "observations": [format!("{name} ({ty}) is not shown in the current chart")],
            "involved_fields": [name],
            "s_vis": 4,
        }));
    }
    let domain = domain_label(dataset, &cols);
    let first = cols.first().map(|(n, _)| n.clone()).unwrap_or_default();
    out.push(json!({
        "category": "domain_specific",
        "title": format!("{domain}: {rows} records of {dataset} in view"),
        "observations": [format!("The view keeps {rows} rows of {dataset}")],
        "involved_fields": [first],
        "s_vis": 3,
    }));
    out.extend(drill);
    Value::Array(out)
}
