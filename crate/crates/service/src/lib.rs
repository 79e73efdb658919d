//! HTTP JSON API over the dispatch pipeline.
//!
//! Routes live under `/api`. Reads open their own store handle on a blocking
//! thread; training and dispatch run as jobs on a bounded worker pool and
//! are polled by id. Trained models are files `<plant>.json` in the models
//! directory (see [`model_path`]); cascade links come from an optional
//! lag-report JSON file.

mod error;
mod jobs;
mod routes;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::Router;
use hydrodispatch::datastore::Store;
use hydrodispatch::interdependency::{CascadeLink, LagReport};
use tokio::sync::Semaphore;

pub use error::{ApiError, ApiResult};
pub use jobs::{Job, JobStatus, JobTable, Progress};
pub use routes::{DispatchBody, DispatchResult, LoggedAction, TimeSeries, TrainBody, TrainResult, FIELDS};

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub db_path: PathBuf,
    pub models_dir: PathBuf,
    /// Lag report whose links drive cascade recalibration; none means no links.
    pub links_path: Option<PathBuf>,
    /// Jobs allowed to run at once.
    pub workers: usize,
}

impl ServiceConfig {
    pub fn new(db_path: impl Into<PathBuf>, models_dir: impl Into<PathBuf>) -> Self {
        let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(2).min(4);
        ServiceConfig { db_path: db_path.into(), models_dir: models_dir.into(), links_path: None, workers }
    }
}

/// Model file of `plant` inside `dir`. Characters outside `[A-Za-z0-9 ._-]`
/// become `_`, as does a leading dot.
pub fn model_path(dir: &Path, plant: &str) -> PathBuf {
    let mut name: String = plant
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, ' ' | '.' | '_' | '-') { c } else { '_' })
        .collect();
    if name.is_empty() || name.starts_with('.') {
        name.insert(0, '_');
    }
    dir.join(format!("{name}.json"))
}

pub(crate) struct Inner {
    pub config: ServiceConfig,
    pub dispatch_jobs: JobTable<hydrodispatch::dispatch::DispatchRequest, DispatchResult>,
    pub train_jobs: JobTable<TrainBody, TrainResult>,
    pub pool: Arc<Semaphore>,
    /// Serializes writes: model files and store updates.
    pub write_lock: Mutex<()>,
}

#[derive(Clone)]
pub struct AppState(pub(crate) Arc<Inner>);

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        let workers = config.workers.max(1);
        AppState(Arc::new(Inner {
            config,
            dispatch_jobs: JobTable::new("run"),
            train_jobs: JobTable::new("train"),
            pool: Arc::new(Semaphore::new(workers)),
            write_lock: Mutex::new(()),
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.0.config
    }

    pub(crate) fn open_store(&self) -> hydrodispatch::Result<Store> {
        Store::open(&self.0.config.db_path)
    }

    pub(crate) fn links(&self) -> hydrodispatch::Result<Vec<CascadeLink>> {
        match &self.0.config.links_path {
            None => Ok(Vec::new()),
            Some(p) => {
                let report: LagReport = serde_json::from_str(&std::fs::read_to_string(p)?)?;
                Ok(report.links)
            }
        }
    }

    /// Runs `f` against a fresh store handle on the blocking pool.
    pub(crate) async fn read<T, F>(&self, f: F) -> ApiResult<T>
    where
        T: Send + 'static,
        F: FnOnce(&AppState, &Store) -> ApiResult<T> + Send + 'static,
    {
        let state = self.clone();
        tokio::task::spawn_blocking(move || {
            let store = state.open_store()?;
            f(&state, &store)
        })
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
    }
}

pub fn router(state: AppState) -> Router {
    routes::router(state)
}

/// Serves until Ctrl-C.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    std::fs::create_dir_all(&config.models_dir)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(config)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
