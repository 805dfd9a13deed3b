use std::collections::BTreeSet;
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use super::dimensions::{dimension_pool, DimensionSuggestion};
use super::{
    basic_drill_dimensions, bind, coverage_fallback, validate, validate_structure, ChartSpec, HEURISTIC_TABLE,
};
use crate::clock::{Clock, SystemClock};
use crate::intent::{build_intent_prompt, IntentBundle};
use crate::llm::{LlmAdapter, LlmError, PromptDocument, StructuredPayload};
use crate::tabular::Dataset;
use crate::tree::ExplorationTree;

/// Corrective re-prompts after the first answer.
pub const DEFAULT_MAX_RETRIES: usize = 2;

const OUTPUT_MARKER: &str = "\n## Output\n";

#[derive(Clone)]
pub struct DrillOptions {
    pub max_retries: usize,
    pub clock: Arc<dyn Clock>,
}

impl Default for DrillOptions {
    fn default() -> Self {
        Self {
            max_retries: DEFAULT_MAX_RETRIES,
            clock: Arc::new(SystemClock),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DrillStatus {
    Ok,
    /// Every attempt produced an unusable chart; the tree is untouched.
    RolledBack,
    /// The provider went away after at least one attempt; the tree is
    /// untouched.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DrillResult {
    pub status: DrillStatus,
    pub node_id: Option<String>,
    pub new_spec: Option<ChartSpec>,
    pub basic_dimensions: Vec<DimensionSuggestion>,
    pub hypotheses: Vec<String>,
    pub attempts: usize,
    /// One entry per rejected attempt.
    pub error_trace: Vec<String>,
}

/// The intent prompt extended with the dataset schema, the chart-type
/// constraints and the pool of drill options for the current view.
pub fn drill_prompt(
    bundle: &IntentBundle,
    chart: &ChartSpec,
    dataset: &Dataset,
    pool: &[DimensionSuggestion],
) -> PromptDocument {
    let mut doc = build_intent_prompt(bundle, chart);
    let at = doc.user_text.find(OUTPUT_MARKER).unwrap_or(doc.user_text.len());
    let mut extra = String::from("\n## Dataset\n");
    extra.push_str(&format!("name: {}, rows: {}\n", dataset.name(), dataset.row_count()));
    for c in dataset.columns() {
        extra.push_str(&format!("- {} ({})\n", c.field, c.column_type()));
    }
    extra.push_str("\n## Chart type constraints\nChoose the mark from this table; these are hard constraints:\n");
    extra.push_str(HEURISTIC_TABLE);
    extra.push('\n');
    if !pool.is_empty() {
        extra.push_str("\n## Drill options in the current view\n");
        for d in pool {
            extra.push_str(&format!("- {} ({} rows)\n", d.label, d.coverage));
        }
    }
    doc.user_text.insert_str(at, &extra);
    doc.user_text.push_str(
        "Also list up to three follow-up drill options under \"dimensions\", \
         copied verbatim from the drill options above.\n",
    );
    let payload = doc.payload.as_object_mut().expect("intent payload is an object");
    payload.insert("columns".into(), json!(dataset.summary().columns));
    payload.insert(
        "candidates".into(),
        Value::Array(pool.iter().map(|d| json!({ "label": d.label, "filter": d.filter })).collect()),
    );
    doc
}

struct Accepted {
    spec: ChartSpec,
    hypotheses: Vec<String>,
    dimensions: Vec<String>,
}

/// Checks one answer; Err carries the reasons it was rejected.
fn check_answer(
    parsed: Option<StructuredPayload>,
    parse_error: Option<String>,
    parent: &ChartSpec,
    dataset: &Dataset,
) -> Result<Accepted, String> {
    let payload = match parsed {
        Some(StructuredPayload::ChartSpec(p)) => p,
        Some(_) => unreachable!("parse_structured honours the requested schema"),
        None => return Err(format!("UNPARSEABLE_PAYLOAD: {}", parse_error.unwrap_or_default())),
    };
    let spec = ChartSpec::from_value(&payload.spec).map_err(|e| format!("{}: {e}", e.code()))?;
    let structural = validate_structure(&spec);
    if !structural.ok {
        return Err(structural.trace());
    }
    let semantic = validate(&spec, dataset);
    if !semantic.ok {
        return Err(semantic.trace());
    }
    let mask = bind(&spec, dataset).map_err(|e| format!("{}: {e}", e.code()))?;
    let before = bind(parent, dataset).map_err(|e| format!("{}: {e}", e.code()))?;
    if !mask.is_subset(&before) {
        return Err("DROPPED_FILTER: the new chart shows rows the current chart filters out".into());
    }
    if mask.count_ones() == 0 {
        return Err("EMPTY_RESULT: the filters leave no rows".into());
    }
    Ok(Accepted {
        spec,
        hypotheses: payload.hypotheses,
        dimensions: payload.dimensions,
    })
}

/// Asks the model for the next chart under the active node. Each answer is
/// parsed, validated and bound; a rejected answer is sent back with its
/// error trace, up to `max_retries` times. Only an accepted chart touches
/// the tree. Fails outright only if the very first call cannot reach the
/// provider.
pub fn apply_drill(
    tree: &mut ExplorationTree,
    dataset: &Dataset,
    bundle: &IntentBundle,
    adapter: &LlmAdapter,
    opts: &DrillOptions,
) -> Result<DrillResult, LlmError> {
    let parent_id = tree.active_id().to_string();
    let parent = tree.active().spec.clone();
    let pool = dimension_pool(&parent, dataset).unwrap_or_else(|e| {
        log::warn!("no drill options for the current view: {e}");
        Vec::new()
    });
    let mut prompt = drill_prompt(bundle, &parent, dataset, &pool);
    let mut trace = Vec::new();
    let mut attempts = 0;
    let mut status = DrillStatus::RolledBack;

    while attempts <= opts.max_retries {
        attempts += 1;
        let answer = match adapter.complete(&prompt) {
            Ok(a) => a,
            Err(e) if attempts == 1 => return Err(e),
            Err(e) => {
                trace.push(format!("attempt {attempts}: {e}"));
                status = DrillStatus::Failed;
                break;
            }
        };
        match check_answer(answer.parsed, answer.parse_error, &parent, dataset) {
            Ok(acc) => {
                let old: BTreeSet<String> = parent.transforms.iter().flat_map(|p| p.atoms()).map(|a| a.normalized().key()).collect();
                let labels: Vec<String> = acc
                    .spec
                    .transforms
                    .iter()
                    .flat_map(|p| p.atoms())
                    .filter(|a| !old.contains(&a.normalized().key()))
                    .map(|a| dataset.describe(a))
                    .collect();
                let mut dims = basic_drill_dimensions(&acc.spec, dataset, &acc.dimensions).unwrap_or_default();
                if dims.is_empty() {
                    dims = coverage_fallback(&acc.spec, dataset).unwrap_or_default();
                }
                let node_id = tree
                    .add_child(&parent_id, acc.spec.clone(), labels, opts.clock.now_ms())
                    .expect("active node exists and the spec passed validation");
                return Ok(DrillResult {
                    status: DrillStatus::Ok,
                    node_id: Some(node_id),
                    new_spec: Some(acc.spec),
                    basic_dimensions: dims,
                    hypotheses: acc.hypotheses,
                    attempts,
                    error_trace: trace,
                });
            }
            Err(problem) => {
                log::warn!("drill attempt {attempts} rejected: {problem}");
                trace.push(format!("attempt {attempts}: {problem}"));
                prompt = prompt.with_correction(&problem);
            }
        }
    }

    Ok(DrillResult {
        status,
        node_id: None,
        new_spec: None,
        basic_dimensions: Vec::new(),
        hypotheses: Vec::new(),
        attempts,
        error_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chartspec::{Encoding, Mark, MeasureType};
    use crate::clock::ManualClock;
    use crate::intent::{fuse_intent, InteractionLog};
    use crate::llm::{MockTransport, ProviderConfig, ScriptedTransport};
    use crate::tabular::ColumnData;

    fn data() -> Dataset {
        Dataset::from_columns(
            "d",
            vec![
                ("Region".into(), ColumnData::categorical(["N", "S", "N", "S", "N", "E"])),
                ("Age".into(), ColumnData::numeric([18.0, 25.0, 31.0, 44.0, 52.0, 60.0])),
                ("Job".into(), ColumnData::categorical(["a", "b", "a", "a", "c", "b"])),
            ],
        )
        .unwrap()
    }

    fn tree() -> ExplorationTree {
        let root = ChartSpec::new("d", Mark::Bar)
            .encode("x", Encoding::field("Region", MeasureType::Nominal))
            .encode("y", Encoding::count());
        ExplorationTree::init(root, 0).unwrap()
    }

    fn opts() -> DrillOptions {
        DrillOptions {
            max_retries: DEFAULT_MAX_RETRIES,
            clock: Arc::new(ManualClock::fixed(1_000)),
        }
    }

    fn bad(n: usize) -> Vec<String> {
        vec![r#"{"spec":{"data":{"name":"d"},"mark":"bar","encoding":{"x":{"field":"Nope","type":"nominal"}}}}"#.to_string(); n]
    }

    #[test]
    fn mock_drill_adds_node() {
        let adapter = LlmAdapter::new(ProviderConfig::default(), Arc::new(MockTransport::new()));
        let mut t = tree();
        let b = fuse_intent(&[], &InteractionLog::default(), Some("only Region = N")).unwrap();
        let r = apply_drill(&mut t, &data(), &b, &adapter, &opts()).unwrap();
        assert_eq!(r.status, DrillStatus::Ok);
        assert_eq!(r.attempts, 1);
        let node = t.active();
        assert_eq!(Some(node.id.clone()), r.node_id);
        assert_eq!(node.label, "Region = N");
        assert_eq!(node.created_at, 1_000);
        assert!(!r.basic_dimensions.is_empty() && r.basic_dimensions.len() <= 3);
        assert!(r.basic_dimensions.iter().all(|d| d.field.as_str() != "Region"));
    }

    #[test]
    fn rejected_answers_roll_back() {
        let t0 = tree();
        let before = serde_json::to_string(&t0).unwrap();
        let mut t = t0.clone();
        let transport = Arc::new(ScriptedTransport::new(bad(3)));
        let adapter = LlmAdapter::new(ProviderConfig::default(), transport.clone());
        let r = apply_drill(&mut t, &data(), &IntentBundle::default(), &adapter, &opts()).unwrap();
        assert_eq!(r.status, DrillStatus::RolledBack);
        assert_eq!(r.attempts, 3);
        assert_eq!(r.error_trace.len(), 3);
        assert!(r.error_trace[0].contains("FIELD_NOT_FOUND"));
        assert_eq!(serde_json::to_string(&t).unwrap(), before);
        let prompts = transport.prompts();
        assert!(prompts[1].user_text.contains("## Correction") && prompts[1].user_text.contains("FIELD_NOT_FOUND"));
    }

    #[test]
    fn recovers_on_retry() {
        let mut replies = bad(1);
        replies.push(r#"{"spec":{"data":{"name":"d"},"mark":"bar","encoding":{"x":{"field":"Job","type":"nominal"},"y":{"aggregate":"count","type":"quantitative"}},"transform":[{"filter":"datum.Age >= 30"}]}}"#.into());
        let adapter = LlmAdapter::new(ProviderConfig::default(), Arc::new(ScriptedTransport::new(replies)));
        let mut t = tree();
        let r = apply_drill(&mut t, &data(), &IntentBundle::default(), &adapter, &opts()).unwrap();
        assert_eq!((r.status, r.attempts), (DrillStatus::Ok, 2));
        assert_eq!(t.active().label, "Age >= 30");
        // no proposed dimensions: coverage fallback
        assert_eq!(r.basic_dimensions.len(), 3);
    }

    #[test]
    fn empty_or_widening_answers_are_rejected() {
        let empty = r#"{"spec":{"data":{"name":"d"},"mark":"bar","encoding":{"x":{"field":"Job","type":"nominal"}},"transform":[{"filter":"datum.Age > 100"}]}}"#;
        let adapter = LlmAdapter::new(ProviderConfig::default(), Arc::new(ScriptedTransport::new(vec![empty.to_string(); 3])));
        let mut t = tree();
        let r = apply_drill(&mut t, &data(), &IntentBundle::default(), &adapter, &opts()).unwrap();
        assert_eq!(r.status, DrillStatus::RolledBack);
        assert!(r.error_trace.iter().all(|e| e.contains("EMPTY_RESULT")));

        let mut t = tree();
        let narrowed = t.active().spec.clone().with_filter(crate::tabular::Predicate::equals("Region", "N"));
        let root = t.root_id().to_string();
        t.add_child(&root, narrowed, vec!["Region = N".into()], 1).unwrap();
        let wide = r#"{"spec":{"data":{"name":"d"},"mark":"bar","encoding":{"x":{"field":"Job","type":"nominal"}}}}"#;
        let adapter = LlmAdapter::new(ProviderConfig::default(), Arc::new(ScriptedTransport::new(vec![wide.to_string(); 3])));
        let r = apply_drill(&mut t, &data(), &IntentBundle::default(), &adapter, &opts()).unwrap();
        assert!(r.error_trace[0].contains("DROPPED_FILTER"));
    }

    #[test]
    fn transport_failures() {
        let adapter = LlmAdapter::new(ProviderConfig::default(), Arc::new(ScriptedTransport::default()));
        let mut t = tree();
        let err = apply_drill(&mut t, &data(), &IntentBundle::default(), &adapter, &opts()).unwrap_err();
        assert!(matches!(err, LlmError::AdapterUnavailable(_)));

        let adapter = LlmAdapter::new(ProviderConfig::default(), Arc::new(ScriptedTransport::new(bad(1))));
        let r = apply_drill(&mut t, &data(), &IntentBundle::default(), &adapter, &opts()).unwrap();
        assert_eq!((r.status, r.attempts), (DrillStatus::Failed, 2));
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn prompt_lists_constraints_and_options() {
        let t = tree();
        let pool = dimension_pool(&t.active().spec, &data()).unwrap();
        let doc = drill_prompt(&IntentBundle::default(), &t.active().spec, &data(), &pool);
        let output_at = doc.user_text.find("## Output").unwrap();
        assert!(doc.user_text.find("## Chart type constraints").unwrap() < output_at);
        assert!(doc.user_text.contains("- Region = N (3 rows)"));
        assert!(doc.user_text.ends_with("copied verbatim from the drill options above.\n"));
        assert_eq!(doc.payload["candidates"].as_array().unwrap().len(), pool.len());
    }
}
