//! HTTP front end. Models load in the background after the socket is
//! bound; until then every endpoint answers 503.

use std::future::Future;
use std::sync::{Arc, Mutex, OnceLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use penwise::store::Config;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::Notify;

use crate::api::{Kind, SuggestRequest};
use crate::engine::Engine;
use crate::error::ApiError;

pub struct AppState {
    engine: OnceLock<Arc<Engine>>,
    max_body_bytes: usize,
}

impl AppState {
    pub fn loading(max_body_bytes: usize) -> Arc<Self> {
        Arc::new(Self {
            engine: OnceLock::new(),
            max_body_bytes,
        })
    }

    pub fn ready(engine: Engine) -> Arc<Self> {
        let s = Self::loading(engine.config().service.max_body_bytes);
        s.set(engine);
        s
    }

    pub fn set(&self, engine: Engine) {
        let _ = self.engine.set(Arc::new(engine));
    }

    fn engine(&self) -> Result<Arc<Engine>, ApiError> {
        self.engine.get().cloned().ok_or(ApiError::NotReady)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Health {
    pub status: String,
    pub models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsInfo {
    pub model_version: String,
    pub models: Vec<String>,
    pub kinds: Vec<Kind>,
}

pub fn app(state: Arc<AppState>) -> Router {
    let limit = state.max_body_bytes;
    Router::new()
        .route("/v1/suggest", post(suggest))
        .route("/v1/health", get(health))
        .route("/v1/models", get(models))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    match state.engine() {
        Ok(e) => Json(Health {
            status: "ok".into(),
            models: e.model_names().into_iter().map(str::to_string).collect(),
        })
        .into_response(),
        Err(_) => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(Health {
                status: "loading".into(),
                models: Vec::new(),
            }),
        )
            .into_response(),
    }
}

async fn models(State(state): State<Arc<AppState>>) -> Result<Json<ModelsInfo>, ApiError> {
    let e = state.engine()?;
    Ok(Json(ModelsInfo {
        model_version: e.model_version().to_string(),
        models: e.model_names().into_iter().map(str::to_string).collect(),
        kinds: e.enabled_kinds(),
    }))
}

/// Strict request parsing; errors carry the JSON path of the bad field.
pub fn parse_request(body: &[u8]) -> Result<SuggestRequest, ApiError> {
    let mut de = serde_json::Deserializer::from_slice(body);
    let req: SuggestRequest = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let path = (path != ".").then_some(path);
        ApiError::BadRequest {
            msg: e.inner().to_string(),
            path,
        }
    })?;
    de.end().map_err(|e| ApiError::bad_request(e.to_string(), None))?;
    Ok(req)
}

async fn suggest(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let engine = state.engine()?;
    let req = parse_request(&body)?;
    let resp = tokio::task::spawn_blocking(move || engine.suggest(&req))
        .await
        .map_err(|e| ApiError::Internal(format!("request task failed: {e}")))??;
    Ok(Json(resp).into_response())
}

/// Serves on `listener` until `shutdown` resolves. Models named in
/// `config` load in the background; a load failure stops the server and
/// is returned.
pub async fn serve_on(
    listener: TcpListener,
    config: Config,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), String> {
    let state = AppState::loading(config.service.max_body_bytes);
    let failed = Arc::new(Mutex::new(None::<String>));
    let stop = Arc::new(Notify::new());
    {
        let (state, failed, stop) = (state.clone(), failed.clone(), stop.clone());
        tokio::spawn(async move {
            match tokio::task::spawn_blocking(move || Engine::load(&config)).await {
                Ok(Ok(engine)) => {
                    eprintln!("models loaded: {}", engine.model_names().join(", "));
                    state.set(engine);
                }
                Ok(Err(e)) => {
                    *failed.lock().expect("lock") = Some(format!("loading models: {e}"));
                    stop.notify_one();
                }
                Err(e) => {
                    *failed.lock().expect("lock") = Some(format!("loading models: {e}"));
                    stop.notify_one();
                }
            }
        });
    }
    axum::serve(listener, app(state))
        .with_graceful_shutdown(async move {
            tokio::select! {
                _ = shutdown => {}
                _ = stop.notified() => {}
            }
        })
        .await
        .map_err(|e| e.to_string())?;
    let err = failed.lock().expect("lock").take();
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Binds the configured address and serves until Ctrl-C.
pub async fn serve(config: Config) -> Result<(), String> {
    let listener = TcpListener::bind(&config.service.bind)
        .await
        .map_err(|e| format!("binding {}: {e}", config.service.bind))?;
    eprintln!("listening on {}", listener.local_addr().map_err(|e| e.to_string())?);
    serve_on(listener, config, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
