use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use drilldown_core::clock::Clock;
use drilldown_core::intent::InteractionLog;
use drilldown_core::llm::{LlmAdapter, LlmTransport, ProviderConfig, ReasoningLevel};
use drilldown_core::tabular::{Dataset, Predicate, DEFAULT_MAX_CELLS};
use drilldown_core::tree::ExplorationTree;

use crate::error::ApiError;

/// Uploads allowed per session.
pub const MAX_DATASETS: usize = 10;

/// Settings shared by every session of one server.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_cells: usize,
    /// Starting provider settings for new sessions.
    pub provider: ProviderConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_cells: DEFAULT_MAX_CELLS,
            provider: ProviderConfig::default(),
        }
    }
}

/// A drill option the client may send back by label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionTag {
    pub label: String,
    pub filter: Predicate,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    /// Upload order is kept.
    pub datasets: Vec<Arc<Dataset>>,
    pub active_dataset: Option<String>,
    pub tree: Option<ExplorationTree>,
    pub log: InteractionLog,
    pub provider: ProviderConfig,
    pub inferred_goals: Option<Vec<String>>,
    /// Tags from the latest drill or insight response.
    pub offered: Vec<DimensionTag>,
}

impl Session {
    fn new(id: String, provider: ProviderConfig) -> Self {
        Self {
            id,
            datasets: Vec::new(),
            active_dataset: None,
            tree: None,
            log: InteractionLog::default(),
            provider,
            inferred_goals: None,
            offered: Vec::new(),
        }
    }

    pub fn dataset(&self, name: &str) -> Option<&Arc<Dataset>> {
        self.datasets.iter().find(|d| d.name() == name)
    }

    /// The active dataset and the tree built over it.
    pub fn workspace(&self) -> Result<(Arc<Dataset>, &ExplorationTree), ApiError> {
        let name = self.active_dataset.as_deref().ok_or_else(ApiError::no_dataset)?;
        let ds = self.dataset(name).ok_or_else(ApiError::no_dataset)?;
        let tree = self.tree.as_ref().ok_or_else(ApiError::no_dataset)?;
        Ok((ds.clone(), tree))
    }

    pub fn tree_mut(&mut self) -> Result<&mut ExplorationTree, ApiError> {
        self.tree.as_mut().ok_or_else(ApiError::no_dataset)
    }

    pub fn config_view(&self) -> ConfigView {
        ConfigView {
            model_id: self.provider.model_id.clone(),
            reasoning_level: self.provider.reasoning_level,
            temperature: self.provider.temperature,
            seed: self.provider.seed,
            timeout_ms: self.provider.timeout_ms,
            tracking_enabled: self.log.tracking_enabled,
        }
    }

    pub fn export(&self) -> SessionExport {
        SessionExport {
            session_id: self.id.clone(),
            datasets: self.datasets.iter().map(|d| d.name().to_string()).collect(),
            active_dataset: self.active_dataset.clone(),
            config: self.config_view(),
            tree: self.tree.clone(),
            log: self.log.clone(),
            inferred_goals: self.inferred_goals.clone(),
        }
    }

    /// Replaces tree, log, goals and settings with an export's. Datasets are
    /// not part of an export and stay as they are.
    pub fn import(&mut self, export: SessionExport) {
        let mut log = export.log;
        log.tracking_enabled = export.config.tracking_enabled;
        self.active_dataset = export.active_dataset;
        self.tree = export.tree;
        self.log = log;
        self.provider.model_id = export.config.model_id;
        self.provider.reasoning_level = export.config.reasoning_level;
        self.provider.temperature = export.config.temperature;
        self.provider.seed = export.config.seed;
        self.provider.timeout_ms = export.config.timeout_ms;
        self.inferred_goals = export.inferred_goals;
        self.offered.clear();
    }

    /// Test builds re-check tree invariants after every mutation.
    pub fn sweep(&self) {
        if cfg!(debug_assertions) {
            if let Some(t) = &self.tree {
                if let Err(e) = t.check_invariants() {
                    panic!("session {} tree invariant broken: {e}", self.id);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigView {
    pub model_id: String,
    pub reasoning_level: ReasoningLevel,
    pub temperature: f64,
    pub seed: u64,
    pub timeout_ms: u64,
    pub tracking_enabled: bool,
}

/// Everything needed to resume a session except the raw data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionExport {
    pub session_id: String,
    pub datasets: Vec<String>,
    pub active_dataset: Option<String>,
    pub config: ConfigView,
    pub tree: Option<ExplorationTree>,
    pub log: InteractionLog,
    pub inferred_goals: Option<Vec<String>>,
}

pub struct SessionHandle {
    pub state: RwLock<Session>,
    busy: AtomicBool,
}

/// Held for the duration of one drill or tree-mutating request.
pub struct Permit<'a>(&'a AtomicBool);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

impl SessionHandle {
    fn new(session: Session) -> Self {
        Self {
            state: RwLock::new(session),
            busy: AtomicBool::new(false),
        }
    }

    /// The session's single permit, or `DRILL_IN_FLIGHT`.
    pub fn try_permit(&self) -> Result<Permit<'_>, ApiError> {
        self.busy
            .compare_exchange(false, true, Ordering::Acquire, Ordering::Relaxed)
            .map(|_| Permit(&self.busy))
            .map_err(|_| ApiError::busy())
    }
}

pub struct AppState {
    pub config: ServiceConfig,
    pub transport: Arc<dyn LlmTransport>,
    pub clock: Arc<dyn Clock>,
    sessions: RwLock<BTreeMap<String, Arc<SessionHandle>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(config: ServiceConfig, transport: Arc<dyn LlmTransport>, clock: Arc<dyn Clock>) -> Self {
        Self {
            config,
            transport,
            clock,
            sessions: RwLock::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn create_session(&self) -> String {
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let session = Session::new(id.clone(), self.config.provider.clone());
        self.sessions.write().insert(id.clone(), Arc::new(SessionHandle::new(session)));
        id
    }

    pub fn session(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::session_not_found(id))
    }

    pub fn adapter(&self, provider: &ProviderConfig) -> LlmAdapter {
        LlmAdapter::new(provider.clone(), self.transport.clone())
    }

    pub fn export_all(&self) -> Vec<SessionExport> {
        self.sessions.read().values().map(|h| h.state.read().export()).collect()
    }

    /// Recreates sessions from exports, keeping their ids.
    pub fn restore(&self, exports: Vec<SessionExport>) {
        let mut sessions = self.sessions.write();
        for export in exports {
            let id = export.session_id.clone();
            if let Some(n) = id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                self.next_id.fetch_max(n + 1, Ordering::Relaxed);
            }
            let mut session = Session::new(id.clone(), self.config.provider.clone());
            session.import(export);
            sessions.insert(id, Arc::new(SessionHandle::new(session)));
        }
    }
}
