//! JSON endpoints.
//!
//! | Method | Path | Success |
//! |---|---|---|
//! | POST | `/inquiries` `{"text"}` | 202 `{"id"}` |
//! | GET | `/inquiries/{id}/results` | 200 `{"id","status","model_version","items"}` |
//! | POST | `/feedback` `{"snippet_id","label","operator_id"}` | 200 `{"remaining","retrain_started"}` |
//! | GET | `/health` | 200 |
//!
//! Errors carry `{"error": message}`: 422 for an empty inquiry or malformed
//! body, 503 without a model, 404 for unknown ids, 409 for a duplicate
//! feedback event and 504 when a request exceeds the configured timeout.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use triage_core::triage::{OperatorLabel, TriageResult};

use crate::app::{App, AppError, InquiryRecord, InquiryStatus};

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let status = match &self {
            AppError::EmptyInquiry => StatusCode::UNPROCESSABLE_ENTITY,
            AppError::NoModel => StatusCode::SERVICE_UNAVAILABLE,
            AppError::UnknownInquiry(_) | AppError::UnknownSnippet(_) => StatusCode::NOT_FOUND,
            AppError::Feedback(_) => StatusCode::CONFLICT,
            AppError::Config(_) | AppError::Startup(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        error(status, &self.to_string())
    }
}

fn error(status: StatusCode, message: &str) -> Response {
    (status, Json(json!({ "error": message }))).into_response()
}

#[derive(Deserialize)]
struct InquiryBody {
    text: String,
}

#[derive(Deserialize)]
struct FeedbackBody {
    snippet_id: String,
    label: String,
    operator_id: String,
    timestamp: Option<DateTime<Utc>>,
}

/// One ranked result as served to the operator.
#[derive(Clone, Debug, Deserialize, PartialEq, Serialize)]
pub struct ResultItem {
    pub id: String,
    pub query: String,
    pub engine: String,
    pub url: String,
    pub title: String,
    pub snippet_text: String,
    pub theme: Option<String>,
    pub p: f64,
    pub verdict: String,
    pub model_version: String,
}

impl ResultItem {
    fn new(r: &TriageResult, model_version: &str) -> Self {
        ResultItem {
            id: r.snippet.id.clone(),
            query: r.snippet.query.clone(),
            engine: r.snippet.engine.clone(),
            url: r.snippet.url.clone(),
            title: r.snippet.title.clone(),
            snippet_text: r.snippet.snippet_text.clone(),
            theme: r.snippet.theme.map(|t| t.to_string()),
            p: r.probability,
            verdict: r.verdict.to_string(),
            model_version: model_version.to_string(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq, Serialize)]
pub struct ResultsBody {
    pub id: u64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_version: Option<String>,
    pub queries: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub items: Option<Vec<ResultItem>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl From<&InquiryRecord> for ResultsBody {
    fn from(rec: &InquiryRecord) -> Self {
        let items = (rec.status == InquiryStatus::Classified).then(|| {
            let version = rec.model_version.as_deref().unwrap_or_default();
            rec.results.iter().map(|r| ResultItem::new(r, version)).collect()
        });
        ResultsBody {
            id: rec.id,
            status: rec.status.as_str().to_string(),
            model_version: rec.model_version.clone(),
            queries: rec.queries.clone(),
            items,
            error: rec.error.clone(),
        }
    }
}

async fn post_inquiry(State(app): State<Arc<App>>, body: Bytes) -> Response {
    let text = match serde_json::from_slice::<InquiryBody>(&body) {
        Ok(b) => b.text,
        Err(_) if body.iter().all(u8::is_ascii_whitespace) => String::new(),
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, &format!("invalid body: {e}")),
    };
    match app.submit_inquiry(&text) {
        Ok(id) => {
            let worker = app.clone();
            tokio::task::spawn_blocking(move || worker.process_inquiry(id));
            (StatusCode::ACCEPTED, Json(json!({ "id": id }))).into_response()
        }
        Err(e) => e.into_response(),
    }
}

async fn get_results(State(app): State<Arc<App>>, Path(id): Path<String>) -> Response {
    let record = id.parse::<u64>().ok().and_then(|id| app.inquiry(id));
    match record {
        Some(rec) => Json(ResultsBody::from(&rec)).into_response(),
        None => error(StatusCode::NOT_FOUND, &format!("unknown inquiry {id}")),
    }
}

async fn post_feedback(State(app): State<Arc<App>>, body: Bytes) -> Response {
    let body: FeedbackBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, &format!("invalid body: {e}")),
    };
    let label: OperatorLabel = match body.label.parse() {
        Ok(l) => l,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, &e),
    };
    let timestamp = body.timestamp.unwrap_or_else(Utc::now);
    let worker = app.clone();
    let recorded = tokio::task::spawn_blocking(move || {
        worker.record_feedback(&body.snippet_id, label, &body.operator_id, timestamp)
    })
    .await;
    match recorded {
        Ok(Ok((ack, retrain_at))) => {
            if let Some(count) = retrain_at {
                let worker = app.clone();
                tokio::task::spawn_blocking(move || worker.retrain(count));
            }
            Json(json!({ "remaining": ack.remaining, "retrain_started": ack.retrain_started })).into_response()
        }
        Ok(Err(e)) => e.into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, &e.to_string()),
    }
}

async fn health(State(app): State<Arc<App>>) -> Response {
    let r = app.retrain_status();
    Json(json!({
        "status": "ok",
        "model_version": app.model_version(),
        "retrain_in_progress": r.in_progress,
        "retrains_completed": r.completed,
        "last_retrain_error": r.last_error,
        "decisions_since_retrain": r.decisions_since_retrain,
        "retrain_threshold": app.config().retrain_threshold,
    }))
    .into_response()
}

async fn deadline(State(app): State<Arc<App>>, req: Request, next: Next) -> Response {
    match tokio::time::timeout(app.config().request_timeout(), next.run(req)).await {
        Ok(response) => response,
        Err(_) => error(StatusCode::GATEWAY_TIMEOUT, "request timed out"),
    }
}

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/inquiries", post(post_inquiry))
        .route("/inquiries/{id}/results", get(get_results))
        .route("/feedback", post(post_feedback))
        .route("/health", get(health))
        .layer(middleware::from_fn_with_state(app.clone(), deadline))
        .with_state(app)
}
