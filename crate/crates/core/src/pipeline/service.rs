//! JSON HTTP API over an opened store.
//!
//! - `GET /api/v1/similar?symbol=&mode=&top=`
//! - `GET /api/v1/symbols`
//! - `GET /api/v1/stats`
//!
//! Errors are `{"error": {"code": ..., "message": ...}}`.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tracing::info;

use super::PipelineError;
use crate::nodestore::NodeStore;
use crate::ranker::{self, RankError, RankMode, RankQuery, RankedList, DEFAULT_TOP_K};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarResult {
    pub rank: usize,
    pub symbol: String,
    pub score: u64,
}

/// Wire form of a [`RankedList`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarResponse {
    pub symbol: String,
    pub mode: String,
    pub nodes_visited: usize,
    pub results: Vec<SimilarResult>,
}

impl From<&RankedList> for SimilarResponse {
    fn from(list: &RankedList) -> Self {
        Self {
            symbol: list.query.symbol.clone(),
            mode: list.query.mode.to_string(),
            nodes_visited: list.nodes_visited,
            results: list
                .entries
                .iter()
                .map(|e| SimilarResult {
                    rank: e.rank,
                    symbol: e.symbol.clone(),
                    score: e.counter,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolsResponse {
    pub symbols: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: ErrorBody,
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request",
            message: message.into(),
        }
    }
}

impl From<RankError> for ApiError {
    fn from(err: RankError) -> Self {
        match err {
            RankError::UnknownSymbol(_) => Self {
                status: StatusCode::NOT_FOUND,
                code: "unknown_symbol",
                message: err.to_string(),
            },
            other => Self::bad_request(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorResponse {
            error: ErrorBody {
                code: self.code.to_string(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

/// Parses `/similar` parameters: `symbol` required, `mode` defaults to
/// inverse, `top` to 20.
pub fn parse_similar_query(params: &HashMap<String, String>) -> Result<RankQuery, ApiError> {
    let symbol = params
        .get("symbol")
        .map(|s| s.trim().to_ascii_uppercase())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| ApiError::bad_request("missing `symbol` parameter"))?;
    let mode = match params.get("mode").map(String::as_str) {
        None | Some("") => RankMode::Inverse,
        Some(m) => m.parse().map_err(ApiError::bad_request)?,
    };
    let top_k = match params.get("top").map(String::as_str) {
        None | Some("") => DEFAULT_TOP_K,
        Some(t) => match t.parse::<usize>() {
            Ok(k) if k > 0 => k,
            _ => return Err(ApiError::bad_request(format!("`top` must be a positive integer, got `{t}`"))),
        },
    };
    Ok(RankQuery { symbol, mode, top_k })
}

async fn similar(
    State(store): State<Arc<NodeStore>>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Json<SimilarResponse>, ApiError> {
    let query = parse_similar_query(&params)?;
    let list = ranker::rank(&store, &query)?;
    Ok(Json(SimilarResponse::from(&list)))
}

async fn symbols(State(store): State<Arc<NodeStore>>) -> Json<SymbolsResponse> {
    Json(SymbolsResponse {
        symbols: store.symbols().map(str::to_string).collect(),
    })
}

async fn stats(State(store): State<Arc<NodeStore>>) -> Response {
    match serde_json::to_value(store.manifest()) {
        Ok(value) => Json(value).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        code: "not_found",
        message: "no such endpoint".into(),
    }
}

pub fn router(store: Arc<NodeStore>) -> Router {
    Router::new()
        .route("/api/v1/similar", get(similar))
        .route("/api/v1/symbols", get(symbols))
        .route("/api/v1/stats", get(stats))
        .fallback(not_found)
        .with_state(store)
}

/// Opens the store read-only and serves it until ctrl-c.
pub async fn serve(store_dir: &Path, bind: &str) -> Result<(), PipelineError> {
    let store = Arc::new(NodeStore::open(store_dir)?);
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|source| PipelineError::Io {
            path: bind.into(),
            source,
        })?;
    let addr = listener.local_addr().map_err(|source| PipelineError::Io {
        path: bind.into(),
        source,
    })?;
    info!(%addr, records = store.manifest().total_records, "serving");
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| PipelineError::Io {
            path: bind.into(),
            source,
        })
}
