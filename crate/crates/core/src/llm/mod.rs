//! Provider-agnostic model access: prompts, transports, structured output
//! parsing and relevance coefficients.

mod http;
mod mock;
mod scripted;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub use http::HttpTransport;
pub use mock::{mock_relevance, token_set, MockTransport};
pub use scripted::ScriptedTransport;

use crate::insight::InsightCategory;
use crate::intent::{IntentBundle, ValueRange};
use crate::rules::RelevanceMap;
use crate::tabular::FieldRef;

/// Bumped whenever prompt templates change.
pub const PROMPT_VERSION: &str = "1";

const RELEVANCE_SYSTEM: &str = include_str!("../../prompts/relevance_system.txt");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("model adapter unavailable: {0}")]
    AdapterUnavailable(String),
    #[error("model call timed out after {0} ms")]
    Timeout(u64),
    #[error("no JSON payload in model output: {0}")]
    UnparseablePayload(String),
    #[error("model output does not match the {schema} schema: {detail}")]
    SchemaMismatch { schema: String, detail: String },
    #[error("no mock fixture for digest {0}")]
    MissingFixture(String),
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
}

impl LlmError {
    pub fn is_parse_failure(&self) -> bool {
        matches!(self, LlmError::UnparseablePayload(_) | LlmError::SchemaMismatch { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasoningLevel {
    Low,
    Medium,
    High,
}

impl ReasoningLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasoningLevel::Low => "low",
            ReasoningLevel::Medium => "medium",
            ReasoningLevel::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub model_id: String,
    pub reasoning_level: ReasoningLevel,
    pub temperature: f64,
    pub seed: u64,
    pub endpoint: String,
    pub timeout_ms: u64,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            model_id: "gpt-4o".into(),
            reasoning_level: ReasoningLevel::Medium,
            temperature: 0.1,
            seed: 42,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            timeout_ms: 60_000,
            api_key: None,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidConfig(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.timeout_ms == 0 {
            return Err(LlmError::InvalidConfig("timeout_ms must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedSchema {
    ChartSpec,
    InsightBatch,
    DimensionList,
    RelevanceMap,
}

impl ExpectedSchema {
    pub fn as_str(self) -> &'static str {
        match self {
            ExpectedSchema::ChartSpec => "chart_spec",
            ExpectedSchema::InsightBatch => "insight_batch",
            ExpectedSchema::DimensionList => "dimension_list",
            ExpectedSchema::RelevanceMap => "relevance_map",
        }
    }
}

/// A prompt plus the structured context it was rendered from. Real
/// providers only see the two text parts; the mock reads `payload`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptDocument {
    pub version: String,
    pub system_text: String,
    pub user_text: String,
    pub expected_schema: ExpectedSchema,
    pub payload: Value,
}

impl PromptDocument {
    /// SHA-256 over schema, system and user text (hex).
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.expected_schema.as_str().as_bytes());
        h.update(b"\n");
        h.update(self.system_text.as_bytes());
        h.update(b"\n");
        h.update(self.user_text.as_bytes());
        hex::encode(h.finalize())
    }

    /// The same prompt with a correction section naming the rejected output's
    /// problem.
    pub fn with_correction(&self, problem: &str) -> PromptDocument {
        let mut p = self.clone();
        p.user_text.push_str("\n## Correction\nYour previous answer was rejected:\n");
        p.user_text.push_str(problem);
        p.user_text.push_str("\nFix these problems and answer again in the requested JSON format.\n");
        if let Value::Object(o) = &mut p.payload {
            let n = o.get("corrections").and_then(Value::as_u64).unwrap_or(0);
            o.insert("corrections".into(), json!(n + 1));
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartPayload {
    #[serde(default)]
    pub hypotheses: Vec<String>,
    pub spec: Value,
    #[serde(default)]
    pub dimensions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawInsight {
    pub category: InsightCategory,
    pub title: String,
    #[serde(default)]
    pub observations: Vec<String>,
    #[serde(default)]
    pub involved_fields: Vec<FieldRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_ranges: Option<ValueRange>,
    pub s_vis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum StructuredPayload {
    ChartSpec(ChartPayload),
    InsightBatch(Vec<RawInsight>),
    DimensionList(Vec<String>),
    RelevanceMap(BTreeMap<String, f64>),
}

impl StructuredPayload {
    pub fn schema(&self) -> ExpectedSchema {
        match self {
            StructuredPayload::ChartSpec(_) => ExpectedSchema::ChartSpec,
            StructuredPayload::InsightBatch(_) => ExpectedSchema::InsightBatch,
            StructuredPayload::DimensionList(_) => ExpectedSchema::DimensionList,
            StructuredPayload::RelevanceMap(_) => ExpectedSchema::RelevanceMap,
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("payload serialises")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionResult {
    pub raw_text: String,
    pub parsed: Option<StructuredPayload>,
    /// Why `parsed` is absent.
    pub parse_error: Option<String>,
    pub latency_ms: u64,
}

/// Finds the first complete JSON object or array in free text, skipping
/// prose and code fences around it.
pub fn extract_first_json(raw: &str) -> Option<Value> {
    raw.char_indices()
        .filter(|(_, c)| *c == '{' || *c == '[')
        .find_map(|(i, _)| serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>().next()?.ok())
}

fn mismatch(schema: ExpectedSchema, detail: impl Into<String>) -> LlmError {
    LlmError::SchemaMismatch {
        schema: schema.as_str().into(),
        detail: detail.into(),
    }
}

fn string_list(v: &Value, schema: ExpectedSchema, what: &str) -> Result<Vec<String>, LlmError> {
    let Some(items) = v.as_array() else {
        return Err(mismatch(schema, format!("`{what}` must be an array")));
    };
    items
        .iter()
        .map(|item| match item {
            Value::String(s) => Ok(s.clone()),
            Value::Object(o) => o
                .get("label")
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| mismatch(schema, format!("`{what}` entries need a label"))),
            _ => Err(mismatch(schema, format!("`{what}` entries must be strings"))),
        })
        .collect()
}

/// Extracts and shape-checks the payload for `schema`.
pub fn parse_structured(raw: &str, schema: ExpectedSchema) -> Result<StructuredPayload, LlmError> {
    let value = extract_first_json(raw).ok_or_else(|| {
        let preview: String = raw.chars().take(80).collect();
        LlmError::UnparseablePayload(preview)
    })?;
    match schema {
        ExpectedSchema::ChartSpec => {
            let obj = value.as_object().ok_or_else(|| mismatch(schema, "expected a JSON object"))?;
            if let Some(spec) = obj.get("spec") {
                if !spec.is_object() {
                    return Err(mismatch(schema, "`spec` must be an object"));
                }
                let hypotheses = match obj.get("hypotheses") {
                    Some(v) => string_list(v, schema, "hypotheses")?,
                    None => Vec::new(),
                };
                let dimensions = match obj.get("dimensions") {
                    Some(v) => string_list(v, schema, "dimensions")?,
                    None => Vec::new(),
                };
                Ok(StructuredPayload::ChartSpec(ChartPayload {
                    hypotheses,
                    spec: spec.clone(),
                    dimensions,
                }))
            } else if obj.contains_key("mark") || obj.contains_key("encoding") {
                Ok(StructuredPayload::ChartSpec(ChartPayload {
                    hypotheses: Vec::new(),
                    spec: value.clone(),
                    dimensions: Vec::new(),
                }))
            } else {
                Err(mismatch(schema, "expected `spec` or a bare chart"))
            }
        }
        ExpectedSchema::InsightBatch => {
            let items = match &value {
                Value::Array(_) => value.clone(),
                Value::Object(o) => o
                    .get("insights")
                    .cloned()
                    .ok_or_else(|| mismatch(schema, "expected an array or `insights`"))?,
                _ => return Err(mismatch(schema, "expected an array")),
            };
            serde_json::from_value::<Vec<RawInsight>>(items)
                .map(StructuredPayload::InsightBatch)
                .map_err(|e| mismatch(schema, e.to_string()))
        }
        ExpectedSchema::DimensionList => {
            let items = match &value {
                Value::Object(o) => o
                    .get("dimensions")
                    .ok_or_else(|| mismatch(schema, "expected an array or `dimensions`"))?,
                v => v,
            };
            string_list(items, schema, "dimensions").map(StructuredPayload::DimensionList)
        }
        ExpectedSchema::RelevanceMap => {
            let obj = match value.get("coefficients") {
                Some(Value::Object(o)) => o,
                _ => value.as_object().ok_or_else(|| mismatch(schema, "expected an object"))?,
            };
            obj.iter()
                .map(|(k, v)| {
                    v.as_f64()
                        .map(|x| (k.clone(), x))
                        .ok_or_else(|| mismatch(schema, format!("coefficient for `{k}` is not a number")))
                })
                .collect::<Result<BTreeMap<_, _>, _>>()
                .map(StructuredPayload::RelevanceMap)
        }
    }
}

/// Carries one prompt to a model and returns its text.
pub trait LlmTransport: Send + Sync {
    fn send(&self, config: &ProviderConfig, prompt: &PromptDocument) -> Result<String, LlmError>;
}

/// Provider settings plus a transport.
#[derive(Clone)]
pub struct LlmAdapter {
    pub config: ProviderConfig,
    transport: Arc<dyn LlmTransport>,
}

impl std::fmt::Debug for LlmAdapter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmAdapter").field("config", &self.config).finish_non_exhaustive()
    }
}

impl LlmAdapter {
    pub fn new(config: ProviderConfig, transport: Arc<dyn LlmTransport>) -> Self {
        Self { config, transport }
    }

    pub fn complete(&self, prompt: &PromptDocument) -> Result<CompletionResult, LlmError> {
        if prompt.user_text.trim().is_empty() {
            return Err(LlmError::InvalidPrompt("user text is empty".into()));
        }
        self.config.validate()?;
        let started = Instant::now();
        let raw_text = self.transport.send(&self.config, prompt)?;
        let latency_ms = started.elapsed().as_millis() as u64;
        let (parsed, parse_error) = match parse_structured(&raw_text, prompt.expected_schema) {
            Ok(p) => (Some(p), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Ok(CompletionResult {
            raw_text,
            parsed,
            parse_error,
            latency_ms,
        })
    }

    /// Completes and parses, re-prompting once with the parse error if the
    /// first answer has no usable payload.
    pub fn complete_structured(&self, prompt: &PromptDocument) -> Result<StructuredPayload, LlmError> {
        let first = self.complete(prompt)?;
        if let Some(p) = first.parsed {
            return Ok(p);
        }
        let problem = first.parse_error.unwrap_or_default();
        log::warn!("structured parse failed, re-prompting: {problem}");
        let second = self.complete(&prompt.with_correction(&problem))?;
        match second.parsed {
            Some(p) => Ok(p),
            None => Err(parse_structured(&second.raw_text, prompt.expected_schema).unwrap_err()),
        }
    }
}

/// One relevance coefficient per field in `[0, 1]`. Without interaction
/// evidence or an instruction every field gets 1.0 and no model call is
/// made; an unusable answer also degrades to 1.0 everywhere.
pub fn relevance_coefficients(
    fields: &[FieldRef],
    bundle: &IntentBundle,
    adapter: &LlmAdapter,
) -> Result<RelevanceMap, LlmError> {
    if fields.is_empty() || bundle.is_cold_start() {
        return Ok(RelevanceMap::uniform(fields));
    }
    let intent_text = bundle.intent_text();
    let mut user = String::from("## Fields\n");
    for f in fields {
        user.push_str(&format!("- {f}\n"));
    }
    user.push_str("\n## Analyst intent\n");
    if let Some(i) = &bundle.instruction {
        user.push_str(&format!("instruction: {i}\n"));
    }
    for w in &bundle.interaction_predicates {
        user.push_str(&format!("interaction: {} (x{})\n", w.predicate, w.repeat_count));
    }
    if let Some(goals) = &bundle.inferred_goals {
        for g in goals {
            user.push_str(&format!("goal: {g}\n"));
        }
    }
    user.push_str("\n## Output\n{\"<field>\": <coefficient in [0, 1]>, ...}\n");
    let prompt = PromptDocument {
        version: PROMPT_VERSION.into(),
        system_text: RELEVANCE_SYSTEM.into(),
        user_text: user,
        expected_schema: ExpectedSchema::RelevanceMap,
        payload: json!({ "fields": fields, "intent_text": intent_text }),
    };
    let answer = match adapter.complete_structured(&prompt) {
        Ok(StructuredPayload::RelevanceMap(m)) => m,
        Ok(_) => unreachable!("parse_structured honours the requested schema"),
        Err(e) if e.is_parse_failure() => {
            log::warn!("relevance answer unusable, using 1.0 for every field: {e}");
            return Ok(RelevanceMap::uniform(fields));
        }
        Err(e) => return Err(e),
    };
    let mut out = RelevanceMap::default();
    for f in fields {
        out.insert(f.clone(), answer.get(f.as_str()).copied().unwrap_or(1.0));
    }
    Ok(out)
}
