use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use drilldown_core::clock::SystemClock;
use drilldown_core::llm::{HttpTransport, LlmTransport, MockTransport, ProviderConfig};
use drilldown_core::tabular::DEFAULT_MAX_CELLS;
use drilldown_service::{router, AppState, ServiceConfig, SessionExport};

#[derive(Parser)]
#[command(name = "drilldown", version, about = "Intent-driven drill-down exploration service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    Mock,
    Http,
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, value_enum, default_value_t = Provider::Mock)]
    provider: Provider,
    /// Scripted answers for the mock provider, `<dir>/<schema>/<digest>.json`.
    #[arg(long)]
    fixtures_dir: Option<PathBuf>,
    /// Refuse fixture-less mock answers instead of synthesising them.
    #[arg(long)]
    strict_fixtures: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_CELLS)]
    max_cells: usize,
    /// Load sessions from this file at start and write them back on shutdown.
    #[arg(long)]
    persist: Option<PathBuf>,
    #[arg(long, env = "DRILLDOWN_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, env = "DRILLDOWN_MODEL")]
    model: Option<String>,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let Command::Serve(args) = Cli::parse().command;

    let mut provider = ProviderConfig::default();
    if let Some(e) = args.endpoint {
        provider.endpoint = e;
    }
    if let Some(m) = args.model {
        provider.model_id = m;
    }
    provider.api_key = std::env::var("DRILLDOWN_API_KEY").ok();
    provider.validate()?;

    let transport: Arc<dyn LlmTransport> = match args.provider {
        Provider::Http => Arc::new(HttpTransport::new()),
        Provider::Mock => {
            let mock = match &args.fixtures_dir {
                Some(dir) => MockTransport::with_fixtures(dir),
                None => MockTransport::new(),
            };
            Arc::new(if args.strict_fixtures { mock.strict() } else { mock })
        }
    };
    let config = ServiceConfig {
        max_cells: args.max_cells,
        provider,
    };
    let state = Arc::new(AppState::new(config, transport, Arc::new(SystemClock)));

    if let Some(path) = args.persist.as_ref().filter(|p| p.is_file()) {
        let exports: Vec<SessionExport> = serde_json::from_slice(&std::fs::read(path)?)?;
        log::info!("restored {} sessions from {}", exports.len(), path.display());
        state.restore(exports);
    }

    let listener = tokio::net::TcpListener::bind(("0.0.0.0", args.port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;

    if let Some(path) = &args.persist {
        std::fs::write(path, serde_json::to_vec_pretty(&state.export_all())?)?;
        log::info!("saved sessions to {}", path.display());
    }
    Ok(())
}
