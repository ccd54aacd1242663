//! HTTP service for interactive sessions, plus an in-process bridge adapter.

pub mod adapter;
pub mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tower_http::services::ServeDir;

use cas_core::Error;

pub use adapter::{adapter_router, StubAdapter};
pub use session::{
    Adoption, Choice, ChoiceAck, CreateSession, Created, PendingChoice, PoolView, Session, SessionMode,
    SessionState, SessionStore,
};

/// Environment variable naming the session data directory.
pub const DATA_DIR_ENV: &str = "CAS_DATA_DIR";
/// Environment variable naming the built UI bundle directory.
pub const UI_DIR_ENV: &str = "CAS_UI_DIR";

/// An error response: `{"error": message}` with a status code.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Argument(_) | Error::Data(_) | Error::Embedding(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Config(_) => StatusCode::BAD_REQUEST,
            Error::SamplerExhausted(_) | Error::InspirationFailure(_) => StatusCode::CONFLICT,
            Error::Bridge(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub ui_dir: Option<PathBuf>,
    /// Also serve the bridge endpoints from this adapter.
    pub adapter: Option<StubAdapter>,
}

impl ServiceConfig {
    /// Directories from the environment; data defaults to `./cas-data`.
    pub fn from_env() -> Self {
        Self {
            data_dir: std::env::var_os(DATA_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("cas-data")),
            ui_dir: std::env::var_os(UI_DIR_ENV).map(PathBuf::from),
            adapter: None,
        }
    }
}

type Store = State<Arc<SessionStore>>;

async fn create(State(store): Store, Json(req): Json<CreateSession>) -> Result<Json<Created>, ApiError> {
    tokio::task::spawn_blocking(move || store.create(req))
        .await
        .map_err(|e| ApiError::from(Error::Config(format!("create worker failed: {e}"))))?
        .map(Json)
}

async fn list(State(store): Store) -> Json<Vec<String>> {
    Json(store.ids())
}

async fn state(State(store): Store, Path(id): Path<String>) -> Result<Json<SessionState>, ApiError> {
    Ok(Json(store.get(&id)?.state().await))
}

async fn choice(
    State(store): Store,
    Path(id): Path<String>,
    Json(choice): Json<Choice>,
) -> Result<Json<ChoiceAck>, ApiError> {
    Ok(Json(store.get(&id)?.submit_choice(choice).await?))
}

async fn step(
    State(store): Store,
    Path(id): Path<String>,
) -> Result<Json<cas_core::agent::GenerationRecord>, ApiError> {
    Ok(Json(store.get(&id)?.step().await?))
}

/// Session API router over an opened store.
pub fn router(store: Arc<SessionStore>, config: &ServiceConfig) -> Router {
    let mut app = Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(state))
        .route("/sessions/{id}/choice", post(choice))
        .route("/sessions/{id}/step", post(step))
        .with_state(store);
    if let Some(ui) = &config.ui_dir {
        app = app
            .nest_service("/ui", ServeDir::new(ui))
            .route("/", get(|| async { Redirect::temporary("/ui/") }));
    }
    if let Some(adapter) = &config.adapter {
        app = app.merge(adapter_router(adapter.clone()));
    }
    app
}

/// Open the store and build the full application.
pub fn app(config: &ServiceConfig) -> cas_core::Result<Router> {
    let store = Arc::new(SessionStore::open(&config.data_dir)?);
    Ok(router(store, config))
}

/// Serve until the process is stopped.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> cas_core::Result<()> {
    let app = tokio::task::spawn_blocking(move || app(&config))
        .await
        .map_err(|e| Error::Config(format!("startup failed: {e}")))??;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app).await?;
    Ok(())
}

/// Bind an ephemeral local port and serve `router` on a background runtime thread.
/// Returns the base URL. For tests and offline demos.
pub fn spawn_background(router: Router) -> std::io::Result<String> {
    let std_listener = std::net::TcpListener::bind("127.0.0.1:0")?;
    std_listener.set_nonblocking(true)?;
    let addr = std_listener.local_addr()?;
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .expect("tokio runtime");
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener");
            axum::serve(listener, router).await.expect("server");
        });
    });
    Ok(format!("http://{addr}"))
}
