use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use convcurate::interactive::{InteractiveError, SessionStore};
use convcurate::rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub id: Option<String>,
    pub systems: Option<[String; 2]>,
    /// Interleaving seed; defaults to one derived from the id.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostUtterance {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostRatings {
    pub ratings: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub struct ApiError(StatusCode, String);

impl From<InteractiveError> for ApiError {
    fn from(e: InteractiveError) -> Self {
        let status = match &e {
            InteractiveError::UnknownSession(_) => StatusCode::NOT_FOUND,
            InteractiveError::Ordering(_) | InteractiveError::Exists(_) => StatusCode::CONFLICT,
            InteractiveError::IncompleteRatings(_)
            | InteractiveError::Argument(_)
            | InteractiveError::UnknownSystem(_) => StatusCode::BAD_REQUEST,
            InteractiveError::Log(_) | InteractiveError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))
}

/// Runs a store call off the async executor; ranking and log writes block.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, InteractiveError> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map(Json)
        .map_err(ApiError::from)
}

async fn create(State(store): State<Arc<SessionStore>>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        parse(&body)?
    };
    let id = req.id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    if id.is_empty()
        || !id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    {
        return Err(ApiError(
            StatusCode::BAD_REQUEST,
            "session ids use letters, digits, `-` and `_`".into(),
        ));
    }
    let seed = req.seed.unwrap_or_else(|| rng::derive(0, &id));
    let view = blocking(move || store.create(id, req.systems, seed)).await?;
    Ok((StatusCode::CREATED, view).into_response())
}

async fn utterance(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: PostUtterance = parse(&body)?;
    Ok(blocking(move || store.post_utterance(&id, &req.text))
        .await?
        .into_response())
}

async fn ratings(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: PostRatings = parse(&body)?;
    Ok(blocking(move || store.post_ratings(&id, req.ratings))
        .await?
        .into_response())
}

async fn close(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    Ok(blocking(move || store.close(&id)).await?.into_response())
}

async fn view(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    Ok(blocking(move || store.view(&id)).await?.into_response())
}

async fn systems(State(store): State<Arc<SessionStore>>) -> Json<Vec<String>> {
    Json(store.system_names().into_iter().map(String::from).collect())
}

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/systems", get(systems))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(view))
        .route("/sessions/{id}/utterance", post(utterance))
        .route("/sessions/{id}/ratings", post(ratings))
        .route("/sessions/{id}/close", post(close))
        .with_state(store)
}

/// Serves the API until the process ends.
pub async fn serve(store: Arc<SessionStore>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(store)).await
}
