use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use drilldown_core::chartspec::{apply_drill, dimension_pool, overview_spec, DrillOptions, DrillResult, DrillStatus};
use drilldown_core::insight::generate_insights;
use drilldown_core::intent::{extract_base_filters, fuse_intent, IntentBundle, IntentError, InteractionEvent, RecordOutcome};
use drilldown_core::llm::ReasoningLevel;
use drilldown_core::tabular::{ingest_csv_with, DatasetSummary, IngestOptions};
use drilldown_core::tree::{BranchDescriptor, BreadcrumbEntry, ExplorationTree};

use crate::error::ApiError;
use crate::state::{AppState, DimensionTag, Session, SessionExport, MAX_DATASETS};

type Reply = Result<(StatusCode, Json<Value>), ApiError>;

fn ok(body: impl Serialize) -> Reply {
    Ok((StatusCode::OK, Json(serde_json::to_value(body).expect("response serialises"))))
}

/// JSON body with catalog errors instead of axum's plain-text rejections.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let slice: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(slice).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/datasets", post(upload_dataset))
        .route("/sessions/{id}/active-dataset", put(set_active_dataset))
        .route("/sessions/{id}/drill", post(drill))
        .route("/sessions/{id}/insights", post(insights))
        .route("/sessions/{id}/breadcrumb", get(breadcrumb))
        .route("/sessions/{id}/branches", get(branches))
        .route("/sessions/{id}/jump", post(jump))
        .route("/sessions/{id}/switch", post(switch))
        .route("/sessions/{id}/reset", post(reset))
        .route("/sessions/{id}/interactions", post(interactions))
        .route("/sessions/{id}/config", put(config))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/import", post(import))
        .route("/sessions/{id}/render-error", post(render_error))
        // the cell cap, not the byte size, bounds uploads
        .layer(DefaultBodyLimit::disable())
        .with_state(state)
}

#[derive(Serialize)]
struct ActiveNode {
    id: String,
    label: String,
    spec: Value,
}

fn active_node(tree: &ExplorationTree) -> ActiveNode {
    let n = tree.active();
    ActiveNode {
        id: n.id.clone(),
        label: n.label.clone(),
        spec: n.spec.to_value(),
    }
}

async fn create_session(State(app): State<Arc<AppState>>) -> Reply {
    let id = app.create_session();
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))))
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Reply {
    let handle = app.session(&id)?;
    let s = handle.state.read();
    ok(json!({
        "session_id": s.id,
        "datasets": s.datasets.iter().map(|d| d.summary()).collect::<Vec<_>>(),
        "active_dataset": s.active_dataset,
        "active_node": s.tree.as_ref().map(active_node),
        "node_count": s.tree.as_ref().map_or(0, ExplorationTree::len),
        "config": s.config_view(),
        "interaction_count": s.log.len(),
        "offered_dimensions": s.offered,
    }))
}

// ---------------------------------------------------------------------------
// datasets

#[derive(Deserialize)]
struct UploadQuery {
    name: Option<String>,
}

fn stem(file_name: &str) -> String {
    let base = file_name.rsplit(['/', '\\']).next().unwrap_or(file_name);
    base.strip_suffix(".csv").or_else(|| base.strip_suffix(".CSV")).unwrap_or(base).to_string()
}

/// Reads `(name, bytes)` from a multipart form's first file part, or from a
/// raw CSV body named by `?name=`.
async fn read_upload(query: UploadQuery, req: Request) -> Result<(String, Bytes), ApiError> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    if !is_multipart {
        let name = query.name.ok_or_else(|| ApiError::bad_request("raw CSV uploads need ?name="))?;
        let bytes = Bytes::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        return Ok((name, bytes));
    }
    let mut form = Multipart::from_request(req, &())
        .await
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::bad_request(e.to_string()))? {
        let Some(file_name) = field.file_name().map(str::to_string) else { continue };
        let name = query.name.clone().unwrap_or_else(|| stem(&file_name));
        let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
        return Ok((name, bytes));
    }
    Err(ApiError::bad_request("multipart form has no file part"))
}

async fn upload_dataset(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<UploadQuery>,
    req: Request,
) -> Reply {
    let handle = app.session(&id)?;
    let (name, bytes) = read_upload(query, req).await?;
    if name.trim().is_empty() {
        return Err(ApiError::bad_request("dataset name is empty"));
    }
    let _permit = handle.try_permit()?;
    {
        let s = handle.state.read();
        if s.dataset(&name).is_none() && s.datasets.len() >= MAX_DATASETS {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "LIMIT_EXCEEDED",
                format!("a session holds at most {MAX_DATASETS} datasets"),
            ));
        }
    }
    let options = IngestOptions {
        max_cells: app.config.max_cells,
    };
    let dataset = tokio::task::spawn_blocking(move || ingest_csv_with(&bytes, &name, &options))
        .await
        .expect("ingest task panicked")?;
    let summary: DatasetSummary = dataset.summary();
    let mut s = handle.state.write();
    let name = dataset.name().to_string();
    let dataset = Arc::new(dataset);
    match s.datasets.iter().position(|d| d.name() == name) {
        Some(i) => s.datasets[i] = dataset.clone(),
        None => s.datasets.push(dataset.clone()),
    }
    let reinit = s.active_dataset.is_none() || s.active_dataset.as_deref() == Some(name.as_str());
    if reinit {
        start_over(&mut s, &name, &dataset, app.clock.now_ms())?;
    }
    s.sweep();
    Ok((
        StatusCode::CREATED,
        Json(json!({ "dataset": summary, "active": s.active_dataset.as_deref() == Some(name.as_str()) })),
    ))
}

/// Points the session at `name` with a fresh overview tree and no history.
fn start_over(s: &mut Session, name: &str, dataset: &drilldown_core::tabular::Dataset, now: i64) -> Result<(), ApiError> {
    s.active_dataset = Some(name.to_string());
    s.tree = Some(ExplorationTree::init(overview_spec(dataset), now)?);
    s.log.clear();
    s.inferred_goals = None;
    s.offered.clear();
    Ok(())
}

#[derive(Deserialize)]
struct ActiveDatasetBody {
    name: String,
}

async fn set_active_dataset(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Reply {
    let handle = app.session(&id)?;
    let req: ActiveDatasetBody = parse(&body)?;
    let _permit = handle.try_permit()?;
    let mut s = handle.state.write();
    let ds = s
        .dataset(&req.name)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "DATASET_NOT_FOUND", format!("no dataset `{}`", req.name)))?;
    start_over(&mut s, &req.name, &ds, app.clock.now_ms())?;
    s.sweep();
    let tree = s.tree.as_ref().expect("just initialised");
    ok(json!({ "active_dataset": req.name, "active_node": active_node(tree) }))
}

// ---------------------------------------------------------------------------
// drill and insights

#[derive(Deserialize, Default)]
struct DrillBody {
    instruction: Option<String>,
    dimension_tag: Option<String>,
}

#[derive(Serialize)]
struct DrillResponse {
    #[serde(flatten)]
    result: DrillResult,
    breadcrumb: Vec<BreadcrumbEntry>,
}

async fn drill(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Reply {
    let handle = app.session(&id)?;
    let req: DrillBody = parse(&body)?;
    let permit = handle.try_permit()?;

    let (dataset, mut tree, bundle, provider) = {
        let s = handle.state.read();
        let (dataset, tree) = s.workspace()?;
        let spec = &tree.active().spec;
        let mut text: Vec<String> = req.instruction.iter().cloned().collect();
        if let Some(tag) = req.dimension_tag.as_deref() {
            let found = s.offered.iter().find(|t| t.label == tag).map(|t| t.label.clone()).or_else(|| {
                dimension_pool(spec, &dataset)
                    .ok()?
                    .into_iter()
                    .find(|d| d.label == tag)
                    .map(|d| d.label)
            });
            let label = found.ok_or_else(|| {
                ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "UNKNOWN_DIMENSION",
                    format!("`{tag}` is not a drill option of the current view"),
                )
            })?;
            text.push(format!("Drill down into {label}"));
        }
        let instruction = (!text.is_empty()).then(|| text.join("\n"));
        let mut bundle = fuse_intent(&extract_base_filters(spec), &s.log, instruction.as_deref())?;
        bundle.inferred_goals = s.inferred_goals.clone();
        (dataset, tree.clone(), bundle, s.provider.clone())
    };

    let adapter = app.adapter(&provider);
    let opts = DrillOptions {
        clock: app.clock.clone(),
        ..DrillOptions::default()
    };
    let (tree, result) = tokio::task::spawn_blocking(move || {
        let r = apply_drill(&mut tree, &dataset, &bundle, &adapter, &opts);
        (tree, r)
    })
    .await
    .expect("drill task panicked");
    let result = result?;

    let mut s = handle.state.write();
    if result.status == DrillStatus::Ok {
        s.tree = Some(tree);
        if !result.hypotheses.is_empty() {
            s.inferred_goals = Some(result.hypotheses.clone());
        }
        s.offered = result
            .basic_dimensions
            .iter()
            .map(|d| DimensionTag {
                label: d.label.clone(),
                filter: d.filter.clone(),
            })
            .collect();
    }
    s.sweep();
    let breadcrumb = s.tree.as_ref().map(ExplorationTree::breadcrumb).unwrap_or_default();
    drop(s);
    drop(permit);
    ok(DrillResponse { result, breadcrumb })
}

async fn insights(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Reply {
    let handle = app.session(&id)?;
    let _permit = handle.try_permit()?;
    let (dataset, spec, bundle, provider) = {
        let s = handle.state.read();
        let (dataset, tree) = s.workspace()?;
        let spec = tree.active().spec.clone();
        let base = extract_base_filters(&spec);
        let mut bundle = match fuse_intent(&base, &s.log, None) {
            Ok(b) => b,
            Err(IntentError::EmptyIntent) => IntentBundle::default(),
            Err(e) => return Err(e.into()),
        };
        bundle.inferred_goals = s.inferred_goals.clone();
        (dataset, spec, bundle, s.provider.clone())
    };
    let adapter = app.adapter(&provider);
    let outcome = tokio::task::spawn_blocking(move || generate_insights(&spec, &dataset, &bundle, &adapter))
        .await
        .expect("insight task panicked");
    if outcome.recommendation_error.is_none() {
        let mut s = handle.state.write();
        s.offered = outcome
            .high_level_dimensions
            .iter()
            .map(|c| DimensionTag {
                label: c.label.clone(),
                filter: c.rule.to_predicate(),
            })
            .collect();
    }
    ok(outcome)
}

// ---------------------------------------------------------------------------
// navigation

async fn breadcrumb(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Reply {
    let handle = app.session(&id)?;
    let s = handle.state.read();
    let (_, tree) = s.workspace()?;
    ok(tree.breadcrumb())
}

async fn branches(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Reply {
    let handle = app.session(&id)?;
    let s = handle.state.read();
    let (_, tree) = s.workspace()?;
    let list: Vec<BranchDescriptor> = tree.branches();
    ok(list)
}

#[derive(Deserialize)]
struct JumpBody {
    node_id: String,
}

#[derive(Deserialize)]
struct SwitchBody {
    leaf_id: String,
}

fn navigation_reply(s: &Session) -> Reply {
    let tree = s.tree.as_ref().ok_or_else(ApiError::no_dataset)?;
    ok(json!({ "active_node": active_node(tree), "breadcrumb": tree.breadcrumb() }))
}

async fn jump(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Reply {
    let handle = app.session(&id)?;
    let req: JumpBody = parse(&body)?;
    let _permit = handle.try_permit()?;
    let mut s = handle.state.write();
    s.tree_mut()?.jump_to(&req.node_id)?;
    s.sweep();
    navigation_reply(&s)
}

async fn switch(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Reply {
    let handle = app.session(&id)?;
    let req: SwitchBody = parse(&body)?;
    let _permit = handle.try_permit()?;
    let mut s = handle.state.write();
    s.tree_mut()?.switch_branch(&req.leaf_id)?;
    s.sweep();
    navigation_reply(&s)
}

async fn reset(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Reply {
    let handle = app.session(&id)?;
    let _permit = handle.try_permit()?;
    let mut s = handle.state.write();
    s.tree_mut()?.reset();
    s.log.clear();
    s.inferred_goals = None;
    s.offered.clear();
    s.sweep();
    navigation_reply(&s)
}

#[derive(Deserialize)]
struct RenderErrorBody {
    node_id: String,
    #[serde(default)]
    message: String,
}

/// The client could not draw the newest chart: drop that node and restore
/// its parent.
async fn render_error(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Reply {
    let handle = app.session(&id)?;
    let req: RenderErrorBody = parse(&body)?;
    let _permit = handle.try_permit()?;
    let mut s = handle.state.write();
    let tree = s.tree_mut()?;
    if tree.active_id() != req.node_id {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "STALE_NODE",
            format!("`{}` is not the active node", req.node_id),
        ));
    }
    let parent = tree
        .active()
        .parent
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "NOT_A_LEAF", "the root cannot be rolled back"))?;
    tree.retract_leaf(&req.node_id, &parent)?;
    log::warn!("client failed to render {}: {}", req.node_id, req.message);
    s.offered.clear();
    s.sweep();
    let tree = s.tree.as_ref().expect("checked above");
    ok(json!({
        "status": DrillStatus::RolledBack,
        "active_node": active_node(tree),
        "breadcrumb": tree.breadcrumb(),
    }))
}

// ---------------------------------------------------------------------------
// interactions and settings

async fn interactions(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Reply {
    let handle = app.session(&id)?;
    let event: InteractionEvent = parse(&body)?;
    let outcome = handle.state.write().log.record(event)?;
    match outcome {
        RecordOutcome::Recorded => ok(json!({ "recorded": true, "dropped": false })),
        RecordOutcome::Dropped { reason } => ok(json!({ "recorded": false, "dropped": true, "reason": reason })),
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigBody {
    model_id: Option<String>,
    reasoning_level: Option<ReasoningLevel>,
    tracking_enabled: Option<bool>,
    temperature: Option<f64>,
    seed: Option<u64>,
    timeout_ms: Option<u64>,
}

async fn config(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Reply {
    let handle = app.session(&id)?;
    let req: ConfigBody = parse(&body)?;
    let mut s = handle.state.write();
    let mut provider = s.provider.clone();
    if let Some(m) = req.model_id {
        if m.trim().is_empty() {
            return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "INVALID_CONFIG", "model_id is empty"));
        }
        provider.model_id = m;
    }
    if let Some(r) = req.reasoning_level {
        provider.reasoning_level = r;
    }
    if let Some(t) = req.temperature {
        provider.temperature = t;
    }
    if let Some(seed) = req.seed {
        provider.seed = seed;
    }
    if let Some(t) = req.timeout_ms {
        provider.timeout_ms = t;
    }
    provider.validate()?;
    s.provider = provider;
    if let Some(on) = req.tracking_enabled {
        s.log.tracking_enabled = on;
    }
    ok(s.config_view())
}

async fn export(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Reply {
    let handle = app.session(&id)?;
    let export = handle.state.read().export();
    ok(export)
}

async fn import(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Reply {
    let handle = app.session(&id)?;
    let export: SessionExport = parse(&body)?;
    let _permit = handle.try_permit()?;
    let mut s = handle.state.write();
    s.import(export);
    s.sweep();
    ok(json!({
        "imported": true,
        "active_node": s.tree.as_ref().map(active_node),
    }))
}
