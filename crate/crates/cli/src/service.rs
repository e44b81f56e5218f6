//! HTTP API.
//!
//! | route | purpose |
//! |---|---|
//! | `POST /optimize` | optimize a prompt and persist a record |
//! | `POST /compare` | generate and score both images of a record |
//! | `GET /keywords` | the keyword taxonomy, with an ETag |
//! | `GET /records/{id}` | one persisted record |
//! | `GET /health` | liveness |

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nprompt_core::decode::{DecodeError, DecodeParams, HighlightSpan};
use nprompt_core::pipeline::{Category, KeywordTaxonomy};
use nprompt_core::scoring::{map_bounded, preference_probability, ImageRef, ScoringError};
use nprompt_core::{ClauseReport, ClauseSelection, OptimizeError, PromptOptimizer};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ScoringBackends;
use crate::records::{min_max, unix_now, GenerationRecord, ImagePair, RecordError, RecordStore, Scores};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.code, "message": self.message });
        (self.status, Json(body)).into_response()
    }
}

impl From<OptimizeError> for ApiError {
    fn from(e: OptimizeError) -> Self {
        let message = e.to_string();
        if e.is_unsatisfiable() {
            return Self::new(StatusCode::UNPROCESSABLE_ENTITY, "unsatisfiable", message);
        }
        match e {
            OptimizeError::EmptyPrompt => Self::new(StatusCode::BAD_REQUEST, "empty_prompt", message),
            OptimizeError::Clauses(_) | OptimizeError::Constraint(_) => {
                Self::new(StatusCode::BAD_REQUEST, "invalid_selections", message)
            }
            OptimizeError::Decode(DecodeError::InvalidParams(_)) => {
                Self::new(StatusCode::BAD_REQUEST, "invalid_decode_params", message)
            }
            OptimizeError::Decode(_) => Self::new(StatusCode::BAD_GATEWAY, "backend", message),
        }
    }
}

impl From<ScoringError> for ApiError {
    fn from(e: ScoringError) -> Self {
        Self::new(StatusCode::BAD_GATEWAY, "backend", e.to_string())
    }
}

impl From<RecordError> for ApiError {
    fn from(e: RecordError) -> Self {
        match e {
            RecordError::Unknown(_) => Self::new(StatusCode::NOT_FOUND, "unknown_record", e.to_string()),
            other => Self::internal(other.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", e.body_text())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KeywordCategory {
    pub key: String,
    pub name: String,
    pub keywords: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KeywordsResponse {
    pub categories: Vec<KeywordCategory>,
}

impl KeywordsResponse {
    pub fn from_taxonomy(taxonomy: &KeywordTaxonomy) -> Self {
        Self {
            categories: Category::ALL
                .iter()
                .map(|&c| KeywordCategory {
                    key: c.key().into(),
                    name: c.column().into(),
                    keywords: taxonomy.keywords(c).to_vec(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeRequest {
    pub prompt: String,
    #[serde(default)]
    pub selections: Option<ClauseSelection>,
    /// Seeds both clause sampling and decoding; defaults to the server seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub decode_params: Option<DecodeParams>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizeResponse {
    pub record_id: String,
    pub prompt: String,
    pub prefix: String,
    pub optimized_prompt: String,
    pub highlights: Vec<HighlightSpan>,
    pub clause_status: Vec<ClauseReport>,
    pub satisfied: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareRequest {
    pub record_id: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareResponse {
    pub record_id: String,
    pub image_u: ImageRef,
    pub image_o: ImageRef,
    pub pick_u: f64,
    pub pick_o: f64,
    pub aes_u: f64,
    pub aes_o: f64,
    /// Aesthetics min-max normalized over every scored record.
    pub aes_norm_u: f64,
    pub aes_norm_o: f64,
    pub preference_pct: f64,
}

/// Shared, read-mostly service state.
pub struct AppState {
    pub optimizer: PromptOptimizer,
    pub backends: ScoringBackends,
    pub records: RecordStore,
    pub seed: u64,
    pub decode: DecodeParams,
    keywords_body: String,
    keywords_etag: String,
}

impl AppState {
    pub fn new(
        optimizer: PromptOptimizer,
        backends: ScoringBackends,
        records: RecordStore,
        seed: u64,
        decode: DecodeParams,
    ) -> Self {
        let body = serde_json::to_string(&KeywordsResponse::from_taxonomy(optimizer.taxonomy()))
            .expect("taxonomy serializes");
        let digest = Sha256::digest(body.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        Self {
            optimizer,
            backends,
            records,
            seed,
            decode,
            keywords_body: body,
            keywords_etag: format!("\"{hex}\""),
        }
    }

    pub fn keywords_etag(&self) -> &str {
        &self.keywords_etag
    }

    /// Runs the optimization and persists its record.
    pub fn optimize(&self, req: OptimizeRequest) -> Result<OptimizeResponse, ApiError> {
        let seed = req.seed.unwrap_or(self.seed);
        let mut selections = req.selections.unwrap_or_default();
        selections.seed = seed;
        let mut params = req.decode_params.unwrap_or_else(|| self.decode.clone());
        params.seed = seed;
        let out = self.optimizer.optimize(&req.prompt, &selections, &params)?;
        let record = self.records.insert(GenerationRecord {
            id: String::new(),
            timestamp: unix_now(),
            original_prompt: out.prompt.clone(),
            prefix: out.prefix.clone(),
            optimized_prompt: out.optimized_prompt.clone(),
            selections,
            seed,
            decode_params: params,
            highlights: out.highlights.clone(),
            clause_status: out.clause_status.clone(),
            satisfied: out.satisfied,
            images: None,
            scores: None,
        })?;
        tracing::info!(id = %record.id, satisfied = out.satisfied, "optimized");
        Ok(OptimizeResponse {
            record_id: record.id,
            prompt: out.prompt,
            prefix: out.prefix,
            optimized_prompt: out.optimized_prompt,
            highlights: out.highlights,
            clause_status: out.clause_status,
            satisfied: out.satisfied,
            seed,
        })
    }

    /// Generates and scores the original and optimized images of a record.
    pub fn compare(&self, record_id: &str) -> Result<CompareResponse, ApiError> {
        let mut record = self
            .records
            .get(record_id)
            .ok_or_else(|| ApiError::from(RecordError::Unknown(record_id.to_string())))?;
        let b = &self.backends;
        let texts = [record.original_prompt.as_str(), record.optimized_prompt.as_str()];
        let images = map_bounded(&texts, b.max_in_flight, |t| b.images.generate(t, record.seed));
        let [y_u, y_o]: [ImageRef; 2] = images
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?
            .try_into()
            .expect("two images");
        let x = record.original_prompt.as_str();
        let jobs = [
            (b.pick.as_ref(), x, &y_u),
            (b.pick.as_ref(), x, &y_o),
            (b.aesthetics.as_ref(), texts[0], &y_u),
            (b.aesthetics.as_ref(), texts[1], &y_o),
        ];
        let scores = map_bounded(&jobs, b.max_in_flight, |(s, p, img)| s.score(p, img))
            .into_iter()
            .collect::<Result<Vec<f64>, _>>()?;
        let (pick_u, pick_o, aes_u, aes_o) = (scores[0], scores[1], scores[2], scores[3]);
        let preference_pct = (1000.0 * preference_probability(pick_o, pick_u)).round() / 10.0;
        record.images = Some(ImagePair {
            original: y_u.clone(),
            optimized: y_o.clone(),
        });
        record.scores = Some(Scores {
            pick_u,
            pick_o,
            aes_u,
            aes_o,
            preference_pct,
        });
        self.records.update(record)?;
        let range = self.records.aesthetics_range().unwrap_or((aes_u, aes_o));
        Ok(CompareResponse {
            record_id: record_id.to_string(),
            image_u: y_u,
            image_o: y_o,
            pick_u,
            pick_o,
            aes_u,
            aes_o,
            aes_norm_u: min_max(aes_u, range),
            aes_norm_o: min_max(aes_o, range),
            preference_pct,
        })
    }
}

async fn blocking<T, F>(state: Arc<AppState>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&AppState) -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn optimize(
    State(state): State<Arc<AppState>>,
    body: Result<Json<OptimizeRequest>, JsonRejection>,
) -> Result<Json<OptimizeResponse>, ApiError> {
    let Json(req) = body?;
    blocking(state, move |s| s.optimize(req)).await.map(Json)
}

async fn compare(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CompareRequest>, JsonRejection>,
) -> Result<Json<CompareResponse>, ApiError> {
    let Json(req) = body?;
    blocking(state, move |s| s.compare(&req.record_id)).await.map(Json)
}

fn etag_matches(headers: &HeaderMap, etag: &str) -> bool {
    headers
        .get_all(header::IF_NONE_MATCH)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .map(|t| t.trim().trim_start_matches("W/"))
        .any(|t| t == etag || t == "*")
}

async fn keywords(State(state): State<Arc<AppState>>, headers: HeaderMap) -> Response {
    let etag = HeaderValue::from_str(&state.keywords_etag).expect("hex etag is a valid header");
    if etag_matches(&headers, &state.keywords_etag) {
        return (StatusCode::NOT_MODIFIED, [(header::ETAG, etag)]).into_response();
    }
    (
        [
            (header::ETAG, etag),
            (header::CONTENT_TYPE, HeaderValue::from_static("application/json")),
        ],
        state.keywords_body.clone(),
    )
        .into_response()
}

async fn record(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<GenerationRecord>, ApiError> {
    state
        .records
        .get(&id)
        .map(Json)
        .ok_or_else(|| RecordError::Unknown(id).into())
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "records": state.records.len() }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/optimize", post(optimize))
        .route("/compare", post(compare))
        .route("/keywords", get(keywords))
        .route("/records/{id}", get(record))
        .route("/health", get(health))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(state: Arc<AppState>, addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
