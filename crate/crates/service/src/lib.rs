//! HTTP session service over the drill-down engine.

pub mod error;
pub mod routes;
pub mod state;

pub use error::ApiError;
pub use routes::router;
pub use state::{AppState, ServiceConfig, SessionExport, MAX_DATASETS};
