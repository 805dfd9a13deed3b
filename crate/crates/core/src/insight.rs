//! Insight generation: model-scored candidates, rule-based intent
//! alignment and deterministic ranking, run next to greedy path
//! recommendation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::chartspec::{bind, ChartSpec, SpecError};
use crate::intent::{describe_chart, IntentBundle, ValueRange};
use crate::llm::{relevance_coefficients, ExpectedSchema, LlmAdapter, LlmError, PromptDocument, RawInsight, StructuredPayload, PROMPT_VERSION};
use crate::rules::{enumerate_candidates, greedy_top_k, EnumerationConfig, RuleError, RuleSet, ScoredCandidate};
use crate::tabular::{ColumnData, ColumnType, Dataset, FieldRef, Interval, Predicate, Scalar};

pub const S_VIS_MAX: u8 = 10;
pub const PANEL_TOP_M: usize = 3;
const TOP_VALUES: usize = 5;

const INSIGHT_SYSTEM: &str = include_str!("../prompts/insight_system.txt");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InsightError {
    #[error(transparent)]
    Adapter(LlmError),
    #[error("insight answer unusable after a corrective re-prompt: {0}")]
    UnparseableInsightPayload(String),
    #[error("no insight candidates to rank")]
    EmptyCandidates,
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Rules(#[from] RuleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsightCategory {
    DataFeature,
    DomainSpecific,
    DrillDown,
}

impl InsightCategory {
    pub const ALL: [InsightCategory; 3] = [
        InsightCategory::DataFeature,
        InsightCategory::DomainSpecific,
        InsightCategory::DrillDown,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsightCandidate {
    pub category: InsightCategory,
    pub title: String,
    pub observations: Vec<String>,
    pub involved_fields: Vec<FieldRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_ranges: Option<ValueRange>,
    pub s_vis: u8,
}

impl InsightCandidate {
    /// Rounds and clamps the model's score into `0..=10`; NaN scores 0.
    pub fn from_raw(raw: RawInsight) -> Self {
        let s = if raw.s_vis.is_nan() {
            0.0
        } else {
            raw.s_vis.round().clamp(0.0, S_VIS_MAX as f64)
        };
        Self {
            category: raw.category,
            title: raw.title,
            observations: raw.observations,
            involved_fields: raw.involved_fields,
            value_ranges: raw.value_ranges,
            s_vis: s as u8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedInsight {
    #[serde(flatten)]
    pub candidate: InsightCandidate,
    pub i_align: u8,
    pub s_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsightPanelPayload {
    pub sections: BTreeMap<InsightCategory, Vec<RankedInsight>>,
}

impl InsightPanelPayload {
    /// Top `m` per category from an already ranked list.
    pub fn from_ranked(ranked: &[RankedInsight], m: usize) -> Self {
        let mut sections: BTreeMap<InsightCategory, Vec<RankedInsight>> =
            InsightCategory::ALL.iter().map(|c| (*c, Vec::new())).collect();
        for r in ranked {
            let section = sections.get_mut(&r.candidate.category).expect("all categories present");
            if section.len() < m {
                section.push(r.clone());
            }
        }
        Self { sections }
    }
}

// ---------------------------------------------------------------------------
// data summary

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopValue {
    pub value: Scalar,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub field: FieldRef,
    #[serde(rename = "type")]
    pub column_type: ColumnType,
    pub non_null: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub top: Vec<TopValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub row_count: usize,
    pub fields: Vec<FieldStats>,
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

/// Exact statistics for every field the chart encodes, over `view`.
pub fn summarize(view: &Dataset, spec: &ChartSpec) -> DataSummary {
    let mut fields = Vec::new();
    for field in spec.encoded_fields() {
        let Ok(col) = view.column(&field) else { continue };
        let ty = col.column_type();
        let mut stats = FieldStats {
            field: field.clone(),
            column_type: ty,
            non_null: 0,
            min: None,
            max: None,
            mean: None,
            top: Vec::new(),
        };
        match &col.data {
            ColumnData::Numeric(v) | ColumnData::Temporal(v) => {
                let vals: Vec<f64> = v.iter().flatten().copied().collect();
                stats.non_null = vals.len();
                if !vals.is_empty() {
                    stats.min = vals.iter().copied().reduce(f64::min);
                    stats.max = vals.iter().copied().reduce(f64::max);
                    stats.mean = Some(round4(vals.iter().sum::<f64>() / vals.len() as f64));
                }
            }
            _ => {
                let mut counts: BTreeMap<String, (Scalar, usize)> = BTreeMap::new();
                for row in 0..view.row_count() {
                    if let Some(v) = col.data.value(row) {
                        stats.non_null += 1;
                        counts.entry(v.to_string()).or_insert((v, 0)).1 += 1;
                    }
                }
                let mut top: Vec<TopValue> = counts.into_values().map(|(value, count)| TopValue { value, count }).collect();
                // stable sort keeps the by-label order among equal counts
                top.sort_by(|a, b| b.count.cmp(&a.count));
                top.truncate(TOP_VALUES);
                stats.top = top;
            }
        }
        fields.push(stats);
    }
    DataSummary {
        row_count: view.row_count(),
        fields,
    }
}

fn empty_selection(spec: &ChartSpec, dataset: &Dataset) -> InsightCandidate {
    let mut involved = spec.filtered_fields();
    if involved.is_empty() {
        involved = spec.encoded_fields();
    }
    if involved.is_empty() {
        involved.extend(dataset.fields().next().cloned());
    }
    InsightCandidate {
        category: InsightCategory::DataFeature,
        title: "empty selection".into(),
        observations: vec!["No rows match the current filters".into()],
        involved_fields: involved,
        value_ranges: None,
        s_vis: 0,
    }
}

pub fn insight_prompt(spec: &ChartSpec, dataset: &Dataset, summary: &DataSummary) -> PromptDocument {
    let mut u = String::new();
    let _ = writeln!(u, "## Dataset\nname: {}\ncolumns:", dataset.name());
    for c in dataset.columns() {
        let _ = writeln!(u, "- {} ({})", c.field, c.column_type());
    }
    u.push_str("\n## Chart\n");
    describe_chart(spec, &mut u);
    u.push_str("\n## Data behind the chart\n```json\n");
    u.push_str(&serde_json::to_string(summary).expect("summary serialises"));
    u.push_str("\n```\n\n## Output\n");
    u.push_str(
        "A JSON array of insights, each {\"category\": \"data_feature\" | \"domain_specific\" | \"drill_down\", \
         \"title\": string, \"observations\": [string], \"involved_fields\": [field], \
         \"value_ranges\": {field: [low, high]} (optional), \"s_vis\": integer 0-10}.\n",
    );
    PromptDocument {
        version: PROMPT_VERSION.into(),
        system_text: INSIGHT_SYSTEM.into(),
        user_text: u,
        expected_schema: ExpectedSchema::InsightBatch,
        payload: json!({
            "dataset": dataset.name(),
            "columns": dataset.summary().columns,
            "summary": summary,
        }),
    }
}

/// Asks the model for insight candidates about the chart's filtered view.
/// An empty view short-circuits to a single zero-score candidate.
pub fn analyze_visualization(
    spec: &ChartSpec,
    dataset: &Dataset,
    adapter: &LlmAdapter,
) -> Result<Vec<InsightCandidate>, InsightError> {
    let mask = bind(spec, dataset)?;
    if mask.count_ones() == 0 {
        return Ok(vec![empty_selection(spec, dataset)]);
    }
    let view = dataset.select(&mask);
    let summary = summarize(&view, spec);
    let prompt = insight_prompt(spec, dataset, &summary);
    let raw = match adapter.complete_structured(&prompt) {
        Ok(StructuredPayload::InsightBatch(items)) => items,
        Ok(_) => unreachable!("parse_structured honours the requested schema"),
        Err(e) if e.is_parse_failure() => return Err(InsightError::UnparseableInsightPayload(e.to_string())),
        Err(e) => return Err(InsightError::Adapter(e)),
    };
    Ok(raw
        .into_iter()
        .map(InsightCandidate::from_raw)
        .filter(|c| {
            let keep = c.category == InsightCategory::DomainSpecific || !c.involved_fields.is_empty();
            if !keep {
                log::warn!("dropping {:?} insight `{}` with no involved fields", c.category, c.title);
            }
            keep
        })
        .collect())
}

// ---------------------------------------------------------------------------
// alignment and ranking

fn mentions(text: &str, field: &str) -> bool {
    let hay = text.to_lowercase();
    let needle = field.to_lowercase();
    if needle.is_empty() {
        return false;
    }
    let boundary = |c: Option<char>| !c.is_some_and(|c| c.is_alphanumeric() || c == '_');
    hay.match_indices(&needle)
        .any(|(i, _)| boundary(hay[..i].chars().next_back()) && boundary(hay[i + needle.len()..].chars().next()))
}

/// Whether any bundle atom on `field` has a value inside `range`.
fn overlaps_on(atoms: &[&Predicate], field: &FieldRef, range: &Interval) -> bool {
    atoms.iter().filter(|a| a.field() == Some(field)).any(|a| match a {
        Predicate::Range { interval, .. } => interval.overlaps(range),
        Predicate::Equals { value, .. } => value.as_f64().is_none_or(|v| range.contains(v)),
        Predicate::InSet { values, .. } => values.iter().any(|v| v.as_f64().is_none_or(|v| range.contains(v))),
        Predicate::Conjunction { .. } => false,
    })
}

/// 1 when the candidate touches a field the analyst has constrained or
/// named, 0 otherwise. When both sides carry a numeric range on the same
/// field the ranges must intersect.
pub fn alignment_flag(candidate: &InsightCandidate, bundle: &IntentBundle) -> u8 {
    let atoms: Vec<&Predicate> = bundle.predicates().flat_map(|p| p.atoms()).collect();
    let mut fields: Vec<&FieldRef> = candidate.involved_fields.iter().collect();
    if let Some(r) = &candidate.value_ranges {
        fields.extend(r.keys().filter(|f| !candidate.involved_fields.contains(f)));
    }
    let instruction = bundle.instruction.as_deref().unwrap_or_default();
    for field in fields {
        if mentions(instruction, field) {
            return 1;
        }
        let on_field: Vec<&Predicate> = atoms.iter().copied().filter(|a| a.field() == Some(field)).collect();
        if on_field.is_empty() {
            continue;
        }
        let own_range = candidate.value_ranges.as_ref().and_then(|r| r.get(field));
        let bundle_has_range = on_field.iter().any(|a| matches!(a, Predicate::Range { .. }));
        match own_range {
            Some(&(lo, hi)) if bundle_has_range => {
                let iv = Interval {
                    low: lo,
                    high: hi,
                    low_inclusive: true,
                    high_inclusive: true,
                };
                if overlaps_on(&on_field, field, &iv) {
                    return 1;
                }
            }
            _ => return 1,
        }
    }
    0
}

/// Order used by the panel: final score, then category, then title.
fn panel_order(a: &RankedInsight, b: &RankedInsight) -> std::cmp::Ordering {
    b.s_final
        .total_cmp(&a.s_final)
        .then(a.candidate.category.cmp(&b.candidate.category))
        .then_with(|| a.candidate.title.cmp(&b.candidate.title))
}

/// Scores every candidate with `s_vis + λ·i_align`, where λ is one more
/// than the batch's highest `s_vis`, and sorts descending.
pub fn rank_insights(candidates: &[InsightCandidate], bundle: &IntentBundle) -> Result<Vec<RankedInsight>, InsightError> {
    let flags: Vec<u8> = candidates.iter().map(|c| alignment_flag(c, bundle)).collect();
    rank_with_flags(candidates, &flags)
}

/// Ranking with precomputed alignment flags.
pub fn rank_with_flags(candidates: &[InsightCandidate], flags: &[u8]) -> Result<Vec<RankedInsight>, InsightError> {
    let max = candidates.iter().map(|c| c.s_vis).max().ok_or(InsightError::EmptyCandidates)?;
    let lambda = max as f64 + 1.0;
    let mut out: Vec<RankedInsight> = candidates
        .iter()
        .zip(flags)
        .map(|(c, &i_align)| RankedInsight {
            candidate: c.clone(),
            i_align,
            s_final: c.s_vis as f64 + lambda * i_align as f64,
        })
        .collect();
    out.sort_by(panel_order);
    Ok(out)
}

// ---------------------------------------------------------------------------
// combined generation

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InsightOutcome {
    pub panel: Option<InsightPanelPayload>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub insight_error: Option<String>,
    pub high_level_dimensions: Vec<ScoredCandidate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recommendation_error: Option<String>,
}

/// Greedy top-k over the chart's current slice, with the path's own fields
/// excluded and relevance taken from the bundle.
pub fn recommend_paths(
    spec: &ChartSpec,
    dataset: &Dataset,
    bundle: &IntentBundle,
    adapter: &LlmAdapter,
    config: &EnumerationConfig,
) -> Result<Vec<ScoredCandidate>, InsightError> {
    let slice = dataset.select(&bind(spec, dataset)?);
    let path = spec.filtered_fields();
    let candidates = enumerate_candidates(&slice, &path, config)?;
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let mut fields: Vec<FieldRef> = Vec::new();
    for c in &candidates {
        for f in c.fields() {
            if !fields.contains(f) {
                fields.push(f.clone());
            }
        }
    }
    let relevance = relevance_coefficients(&fields, bundle, adapter).map_err(InsightError::Adapter)?;
    Ok(greedy_top_k(&slice, &candidates, &RuleSet::default(), &relevance, config.k)?.picks)
}

/// Runs insight analysis and path recommendation side by side. Either part
/// may fail without sinking the other.
pub fn generate_insights(
    spec: &ChartSpec,
    dataset: &Dataset,
    bundle: &IntentBundle,
    adapter: &LlmAdapter,
) -> InsightOutcome {
    let config = EnumerationConfig::default();
    let (insights, recommendations) = std::thread::scope(|s| {
        let insights = s.spawn(|| {
            let candidates = analyze_visualization(spec, dataset, adapter)?;
            let ranked = rank_insights(&candidates, bundle)?;
            Ok::<_, InsightError>(InsightPanelPayload::from_ranked(&ranked, PANEL_TOP_M))
        });
        let recommendations = s.spawn(|| recommend_paths(spec, dataset, bundle, adapter, &config));
        (
            insights.join().expect("insight task panicked"),
            recommendations.join().expect("recommendation task panicked"),
        )
    });
    let (panel, insight_error) = match insights {
        Ok(p) => (Some(p), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (high_level_dimensions, recommendation_error) = match recommendations {
        Ok(d) => (d, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    InsightOutcome {
        panel,
        insight_error,
        high_level_dimensions,
        recommendation_error,
    }
}
