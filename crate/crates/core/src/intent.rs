//! Interaction capture and fusion of the three intent signals: the current
//! chart's filters, the interaction log, and the typed instruction.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::chartspec::{filter_to_predicate, ChartSpec, MeasureType, SpecError};
use crate::llm::{ExpectedSchema, PromptDocument, PROMPT_VERSION};
use crate::tabular::{parse_temporal, FieldRef, Interval, Predicate, Scalar};

/// Events shorter than this are dropped at record time.
pub const DEBOUNCE_MS: u64 = 500;

/// Cap on distinct interaction predicates carried into a bundle.
pub const MAX_INTERACTION_PREDICATES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IntentError {
    #[error("event at {got} ms precedes the last logged event at {last} ms")]
    OutOfOrderTimestamp { last: i64, got: i64 },
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("gesture cannot be mapped to data: {0}")]
    UnmappableGesture(String),
    #[error("unparseable filter expression: {0}")]
    UnparseableFilterExpression(String),
    #[error("no intent signal: no chart filters, interactions or instruction")]
    EmptyIntent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionType {
    Brush,
    ClickSelect,
    Hover,
    PanZoom,
    FilterWidget,
}

impl ActionType {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionType::Brush => "brush",
            ActionType::ClickSelect => "click_select",
            ActionType::Hover => "hover",
            ActionType::PanZoom => "pan_zoom",
            ActionType::FilterWidget => "filter_widget",
        }
    }

    pub fn intent(self) -> &'static str {
        match self {
            ActionType::FilterWidget => "constrain",
            ActionType::Brush => "select-range",
            ActionType::Hover => "inspect",
            ActionType::ClickSelect => "focus",
            ActionType::PanZoom => "navigate",
        }
    }
}

/// Fixed action to intent table shown to the model.
pub const ACTION_INTENT_TABLE: [(&str, &str); 5] = [
    ("filter", "constrain"),
    ("brush", "select-range"),
    ("hover", "inspect"),
    ("click_select", "focus"),
    ("pan_zoom", "navigate"),
];

pub type ValueRange = BTreeMap<FieldRef, (Option<f64>, Option<f64>)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub action_type: ActionType,
    pub target_fields: Vec<FieldRef>,
    pub predicate: Predicate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_range: Option<ValueRange>,
    pub timestamp_ms: i64,
    pub duration_ms: u64,
}

impl InteractionEvent {
    pub fn validate(&self) -> Result<(), IntentError> {
        for atom in self.predicate.atoms() {
            if let Predicate::Range { field, interval } = atom {
                if (interval.low.is_none() && interval.high.is_none()) || interval.is_empty() {
                    return Err(IntentError::InvalidEvent(format!("range on `{field}` selects nothing or everything")));
                }
            }
        }
        for f in self.predicate.fields() {
            if !self.target_fields.contains(&f) {
                return Err(IntentError::InvalidEvent(format!("predicate field `{f}` is not a target field")));
            }
        }
        if let Some(ranges) = &self.value_range {
            if let Some(f) = ranges.keys().find(|f| !self.target_fields.contains(f)) {
                return Err(IntentError::InvalidEvent(format!("value_range field `{f}` is not a target field")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    TrackingDisabled,
    BelowThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RecordOutcome {
    Recorded,
    Dropped { reason: DropReason },
}

impl RecordOutcome {
    pub fn dropped(self) -> bool {
        matches!(self, RecordOutcome::Dropped { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionLog {
    events: Vec<InteractionEvent>,
    pub tracking_enabled: bool,
}

impl Default for InteractionLog {
    fn default() -> Self {
        Self {
            events: Vec::new(),
            tracking_enabled: true,
        }
    }
}

impl InteractionLog {
    pub fn new(tracking_enabled: bool) -> Self {
        Self {
            events: Vec::new(),
            tracking_enabled,
        }
    }

    pub fn events(&self) -> &[InteractionEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Appends `event` if tracking is on and it lasted at least
    /// [`DEBOUNCE_MS`]; otherwise leaves the log untouched.
    pub fn record(&mut self, event: InteractionEvent) -> Result<RecordOutcome, IntentError> {
        event.validate()?;
        if let Some(last) = self.events.last() {
            if event.timestamp_ms < last.timestamp_ms {
                return Err(IntentError::OutOfOrderTimestamp {
                    last: last.timestamp_ms,
                    got: event.timestamp_ms,
                });
            }
        }
        if !self.tracking_enabled {
            return Ok(RecordOutcome::Dropped {
                reason: DropReason::TrackingDisabled,
            });
        }
        if event.duration_ms < DEBOUNCE_MS {
            return Ok(RecordOutcome::Dropped {
                reason: DropReason::BelowThreshold,
            });
        }
        self.events.push(event);
        Ok(RecordOutcome::Recorded)
    }

    pub fn clear(&mut self) {
        self.events.clear();
    }
}

// ---------------------------------------------------------------------------
// gesture translation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GestureKind {
    /// Extents keyed by channel (or encoded field name), in data space.
    /// Continuous channels carry `[low, high]` with `null` for an open side;
    /// discrete channels carry the selected values.
    Brush { extents: BTreeMap<String, Vec<Value>> },
    PanZoom { extents: BTreeMap<String, Vec<Value>> },
    /// Datum under the pointer, keyed by channel or field.
    Click { values: BTreeMap<String, Value> },
    Hover { values: BTreeMap<String, Value> },
    FilterWidget {
        field: FieldRef,
        #[serde(default)]
        values: Vec<Value>,
        #[serde(default)]
        range: Option<(Option<f64>, Option<f64>)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawGesture {
    #[serde(flatten)]
    pub gesture: GestureKind,
    pub timestamp_ms: i64,
    pub duration_ms: u64,
}

fn resolve_field(key: &str, chart: &ChartSpec) -> Option<(FieldRef, Option<MeasureType>)> {
    if let Some(enc) = chart.encodings.get(key) {
        return enc.field.clone().map(|f| (f, enc.measure));
    }
    chart
        .encodings
        .values()
        .find(|e| e.field.as_deref() == Some(key))
        .map(|e| (FieldRef::from(key), e.measure))
        .or_else(|| {
            chart
                .selections
                .iter()
                .any(|s| s.fields.iter().any(|f| f.as_str() == key))
                .then(|| (FieldRef::from(key), None))
        })
}

fn json_scalar(v: &Value) -> Option<Scalar> {
    match v {
        Value::Bool(b) => Some(Scalar::Bool(*b)),
        Value::Number(n) => n.as_f64().map(Scalar::Number),
        Value::String(s) => Some(Scalar::Text(s.clone())),
        _ => None,
    }
}

fn json_bound(v: &Value, measure: Option<MeasureType>) -> Result<Option<f64>, String> {
    match v {
        Value::Null => Ok(None),
        Value::Number(n) => Ok(n.as_f64()),
        Value::String(s) if measure == Some(MeasureType::Temporal) || parse_temporal(s).is_some() => {
            parse_temporal(s).map(Some).ok_or_else(|| format!("`{s}` is not a date"))
        }
        other => Err(format!("bad extent bound {other}")),
    }
}

fn unmappable(key: &str) -> IntentError {
    IntentError::UnmappableGesture(format!("`{key}` is not an encoded channel or field"))
}

/// Converts a UI gesture into a data-space interaction event.
pub fn translate_interaction(raw: &RawGesture, chart: &ChartSpec) -> Result<InteractionEvent, IntentError> {
    let mut atoms: Vec<Predicate> = Vec::new();
    let mut ranges: ValueRange = BTreeMap::new();
    let action = match &raw.gesture {
        GestureKind::Brush { extents } | GestureKind::PanZoom { extents } => {
            for (key, ext) in extents {
                let (field, measure) = resolve_field(key, chart).ok_or_else(|| unmappable(key))?;
                let discrete = matches!(measure, Some(MeasureType::Nominal | MeasureType::Ordinal))
                    || (ext.len() != 2 || ext.iter().any(|v| v.is_boolean()))
                    || ext.iter().any(|v| v.is_string() && parse_temporal(v.as_str().unwrap()).is_none());
                if discrete {
                    let values = ext
                        .iter()
                        .map(|v| json_scalar(v).ok_or_else(|| IntentError::UnmappableGesture(format!("bad value {v}"))))
                        .collect::<Result<Vec<_>, _>>()?;
                    if values.is_empty() {
                        return Err(IntentError::UnmappableGesture(format!("empty selection on `{key}`")));
                    }
                    atoms.push(if values.len() == 1 {
                        Predicate::Equals {
                            field,
                            value: values.into_iter().next().unwrap(),
                        }
                    } else {
                        Predicate::InSet { field, values }
                    });
                } else {
                    let lo = json_bound(&ext[0], measure).map_err(IntentError::UnmappableGesture)?;
                    let hi = json_bound(&ext[1], measure).map_err(IntentError::UnmappableGesture)?;
                    // UI libraries report extents in drag order
                    let (lo, hi) = match (lo, hi) {
                        (Some(a), Some(b)) if a > b => (Some(b), Some(a)),
                        other => other,
                    };
                    ranges.insert(field.clone(), (lo, hi));
                    atoms.push(Predicate::range(
                        field,
                        Interval {
                            low: lo,
                            high: hi,
                            low_inclusive: true,
                            high_inclusive: true,
                        },
                    ));
                }
            }
            if matches!(raw.gesture, GestureKind::Brush { .. }) {
                ActionType::Brush
            } else {
                ActionType::PanZoom
            }
        }
        GestureKind::Click { values } | GestureKind::Hover { values } => {
            for (key, v) in values {
                let (field, _) = resolve_field(key, chart).ok_or_else(|| unmappable(key))?;
                let value = json_scalar(v).ok_or_else(|| IntentError::UnmappableGesture(format!("bad value {v}")))?;
                atoms.push(Predicate::Equals { field, value });
            }
            if matches!(raw.gesture, GestureKind::Click { .. }) {
                ActionType::ClickSelect
            } else {
                ActionType::Hover
            }
        }
        GestureKind::FilterWidget { field, values, range } => {
            if let Some((lo, hi)) = range {
                ranges.insert(field.clone(), (*lo, *hi));
                atoms.push(Predicate::range(
                    field.clone(),
                    Interval {
                        low: *lo,
                        high: *hi,
                        low_inclusive: true,
                        high_inclusive: true,
                    },
                ));
            }
            let values: Vec<Scalar> = values.iter().filter_map(json_scalar).collect();
            match values.len() {
                0 => {}
                1 => atoms.push(Predicate::equals(field.clone(), values[0].clone())),
                _ => atoms.push(Predicate::in_set(field.clone(), values)),
            }
            ActionType::FilterWidget
        }
    };
    if atoms.is_empty() {
        return Err(IntentError::UnmappableGesture("gesture touches no data encoding".into()));
    }
    let predicate = if atoms.len() == 1 {
        atoms.pop().unwrap().normalized()
    } else {
        Predicate::and(atoms).normalized()
    };
    let mut target_fields = predicate.fields();
    target_fields.sort();
    Ok(InteractionEvent {
        action_type: action,
        target_fields,
        predicate,
        value_range: (!ranges.is_empty()).then_some(ranges),
        timestamp_ms: raw.timestamp_ms,
        duration_ms: raw.duration_ms,
    })
}

// ---------------------------------------------------------------------------
// fusion

/// Current chart filters, one per filter transform.
pub fn extract_base_filters(spec: &ChartSpec) -> Vec<Predicate> {
    spec.transforms.clone()
}

/// Same as [`extract_base_filters`] but straight from a chart document,
/// ignoring everything except the `transform` array.
pub fn extract_base_filters_from_document(doc: &Value) -> Result<Vec<Predicate>, IntentError> {
    let Some(transforms) = doc.get("transform").and_then(Value::as_array) else {
        return Ok(Vec::new());
    };
    transforms
        .iter()
        .filter_map(|t| t.get("filter"))
        .filter(|f| f.get("param").is_none())
        .map(|f| {
            filter_to_predicate(f).map_err(|e| match e {
                SpecError::UnparseableFilter(m) => IntentError::UnparseableFilterExpression(m),
                other => IntentError::UnparseableFilterExpression(other.to_string()),
            })
        })
        .collect()
}

/// A deduplicated interaction predicate with its frequency and recency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPredicate {
    pub predicate: Predicate,
    pub repeat_count: u32,
    pub last_seen_ms: i64,
    pub actions: Vec<ActionType>,
}

impl WeightedPredicate {
    pub fn hover_only(&self) -> bool {
        self.actions.iter().all(|a| *a == ActionType::Hover)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntentBundle {
    pub base_filters: Vec<Predicate>,
    pub interaction_predicates: Vec<WeightedPredicate>,
    pub instruction: Option<String>,
    pub inferred_goals: Option<Vec<String>>,
}

impl IntentBundle {
    /// No interaction evidence and nothing typed: scoring falls back to
    /// neutral relevance.
    pub fn is_cold_start(&self) -> bool {
        self.interaction_predicates.is_empty()
            && self.instruction.is_none()
            && self.inferred_goals.as_ref().is_none_or(Vec::is_empty)
    }

    /// Every predicate in the bundle, base filters first.
    pub fn predicates(&self) -> impl Iterator<Item = &Predicate> {
        self.base_filters
            .iter()
            .chain(self.interaction_predicates.iter().map(|w| &w.predicate))
    }

    /// Instruction, goals and predicate field names as one string, used for
    /// lexical relevance.
    pub fn intent_text(&self) -> String {
        let mut parts: Vec<String> = Vec::new();
        if let Some(i) = &self.instruction {
            parts.push(i.clone());
        }
        if let Some(g) = &self.inferred_goals {
            parts.extend(g.iter().cloned());
        }
        for p in self.interaction_predicates.iter().map(|w| &w.predicate) {
            parts.extend(p.fields().into_iter().map(|f| f.to_string()));
        }
        parts.join(" ")
    }
}

/// Merges chart filters, the interaction log and an instruction. Repeated
/// interactions (equal after rounding bounds to four significant digits)
/// collapse into one entry; entries are ordered by repeat count, then
/// recency, with hover-only entries last.
pub fn fuse_intent(
    base: &[Predicate],
    log: &InteractionLog,
    instruction: Option<&str>,
) -> Result<IntentBundle, IntentError> {
    let instruction = instruction.map(str::trim).filter(|s| !s.is_empty()).map(str::to_string);
    let mut interaction_predicates = Vec::new();
    if log.tracking_enabled {
        let mut groups: HashMap<String, WeightedPredicate> = HashMap::new();
        for ev in log.events() {
            let predicate = ev.predicate.rounded();
            let entry = groups.entry(predicate.key()).or_insert_with(|| WeightedPredicate {
                predicate,
                repeat_count: 0,
                last_seen_ms: ev.timestamp_ms,
                actions: Vec::new(),
            });
            entry.repeat_count += 1;
            entry.last_seen_ms = entry.last_seen_ms.max(ev.timestamp_ms);
            if !entry.actions.contains(&ev.action_type) {
                entry.actions.push(ev.action_type);
                entry.actions.sort();
            }
        }
        let mut list: Vec<(String, WeightedPredicate)> = groups.into_iter().collect();
        list.sort_by(|(ka, a), (kb, b)| {
            a.hover_only()
                .cmp(&b.hover_only())
                .then(b.repeat_count.cmp(&a.repeat_count))
                .then(b.last_seen_ms.cmp(&a.last_seen_ms))
                .then(ka.cmp(kb))
        });
        interaction_predicates = list
            .into_iter()
            .take(MAX_INTERACTION_PREDICATES)
            .map(|(_, w)| w)
            .collect();
    }
    if base.is_empty() && interaction_predicates.is_empty() && instruction.is_none() {
        return Err(IntentError::EmptyIntent);
    }
    Ok(IntentBundle {
        base_filters: base.to_vec(),
        interaction_predicates,
        instruction,
        inferred_goals: None,
    })
}

// ---------------------------------------------------------------------------
// prompt

pub(crate) const INTENT_SYSTEM: &str = include_str!("../prompts/intent_system.txt");

pub(crate) fn describe_chart(chart: &ChartSpec, out: &mut String) {
    let _ = writeln!(out, "mark: {}", chart.mark.map(|m| m.as_str()).unwrap_or("(none)"));
    let _ = writeln!(out, "data: {}", chart.data_ref.as_deref().unwrap_or("(none)"));
    if !chart.encodings.is_empty() {
        out.push_str("encoding:\n");
        for (ch, e) in &chart.encodings {
            let field = e.field.as_deref().unwrap_or("*");
            let measure = e.measure.map(MeasureType::as_str).unwrap_or("?");
            match &e.aggregate {
                Some(a) => {
                    let _ = writeln!(out, "- {ch}: {a}({field}) {measure}");
                }
                None => {
                    let _ = writeln!(out, "- {ch}: {field} {measure}");
                }
            }
        }
    }
    if !chart.transforms.is_empty() {
        out.push_str("filters:\n");
        for t in &chart.transforms {
            let _ = writeln!(out, "- {t}");
        }
    }
    if !chart.selections.is_empty() {
        out.push_str("selections:\n");
        for s in &chart.selections {
            let over = if s.encodings.is_empty() {
                s.fields.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(", ")
            } else {
                s.encodings.join(", ")
            };
            let _ = writeln!(out, "- {}: {} over {}", s.name, s.declared_kind, over);
        }
    }
    out.push_str("spec:\n```json\n");
    out.push_str(&chart.to_json_string());
    out.push_str("\n```\n");
}

/// Builds the single-call prompt asking for task hypotheses and the next
/// chart. Sections without content are left out.
pub fn build_intent_prompt(bundle: &IntentBundle, chart: &ChartSpec) -> PromptDocument {
    let mut u = String::new();
    u.push_str("## Current chart\n");
    describe_chart(chart, &mut u);

    if !bundle.interaction_predicates.is_empty() {
        u.push_str("\n## Interaction log\nAction to intent mapping:\n");
        for (action, intent) in ACTION_INTENT_TABLE {
            let _ = writeln!(u, "- {action} → {intent}");
        }
        u.push_str("Interactions, most frequent and most recent first:\n");
        for (i, w) in bundle.interaction_predicates.iter().enumerate() {
            let actions = w
                .actions
                .iter()
                .map(|a| format!("{} ({})", a.as_str(), a.intent()))
                .collect::<Vec<_>>()
                .join(", ");
            let _ = writeln!(
                u,
                "{}. {} | {} | repeated {}x | last at {} ms",
                i + 1,
                w.predicate,
                actions,
                w.repeat_count,
                w.last_seen_ms
            );
        }
    }

    if let Some(text) = &bundle.instruction {
        let _ = write!(u, "\n## Instruction\n{text}\n");
    }

    if let Some(goals) = bundle.inferred_goals.as_ref().filter(|g| !g.is_empty()) {
        u.push_str("\n## Earlier task hypotheses\n");
        for g in goals {
            let _ = writeln!(u, "- {g}");
        }
    }

    u.push_str(
        "\n## Output\nOutput inferred task hypotheses followed by the next Vega-Lite specification, \
         as one JSON object: {\"hypotheses\": [string], \"spec\": {Vega-Lite v5 single view}}. \
         Keep every existing filter and add new ones as filter transforms.\n",
    );

    PromptDocument {
        version: PROMPT_VERSION.to_string(),
        system_text: INTENT_SYSTEM.to_string(),
        user_text: u,
        expected_schema: ExpectedSchema::ChartSpec,
        payload: json!({
            "chart": chart,
            "bundle": bundle,
        }),
    }
}
