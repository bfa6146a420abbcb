use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;

use crate::api::*;
use crate::error::ServiceError;
use crate::service::Service;

type Reply<T> = Result<Json<T>, ServiceError>;

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::Validation(format!("invalid request body: {e}")))
}

/// Run a service call off the async executor.
async fn blocking<T: Send + 'static>(
    svc: &Arc<Service>,
    f: impl FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
) -> Reply<T> {
    let svc = svc.clone();
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
        .map(Json)
}

async fn create_session(State(svc): State<Arc<Service>>) -> Reply<SessionResponse> {
    blocking(&svc, |s| s.create_session()).await
}

async fn prompt(
    State(svc): State<Arc<Service>>,
    query: Result<Query<SessionQuery>, QueryRejection>,
) -> Reply<PromptResponse> {
    let Ok(Query(q)) = query else {
        return Err(ServiceError::UnknownSession);
    };
    blocking(&svc, move |s| s.prompt(&q.session_id)).await
}

async fn topic(State(svc): State<Arc<Service>>, body: Bytes) -> Reply<PromptResponse> {
    let req: TopicRequest = parse(&body)?;
    blocking(&svc, move |s| s.select_topic(&req)).await
}

async fn question(State(svc): State<Arc<Service>>, body: Bytes) -> Reply<QuestionResponse> {
    let req: QuestionRequest = parse(&body)?;
    blocking(&svc, move |s| s.ask(&req)).await
}

async fn feedback(State(svc): State<Arc<Service>>, body: Bytes) -> Reply<Ack> {
    let req: FeedbackRequest = parse(&body)?;
    blocking(&svc, move |s| s.submit_feedback(&req)).await
}

async fn annotation(State(svc): State<Arc<Service>>, body: Bytes) -> Reply<Ack> {
    let req: AnnotationRequest = parse(&body)?;
    blocking(&svc, move |s| s.submit_annotation(&req)).await
}

async fn round(State(svc): State<Arc<Service>>) -> Json<RoundStatus> {
    Json(svc.status())
}

async fn advance(State(svc): State<Arc<Service>>, body: Bytes) -> Reply<AdvanceResponse> {
    let req: AdvanceRequest = if body.iter().all(u8::is_ascii_whitespace) { AdvanceRequest::default() } else { parse(&body)? };
    blocking(&svc, move |s| s.advance(req.trainer)).await
}

async fn not_found() -> ServiceError {
    ServiceError::NotFound("no such endpoint".into())
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/prompt", get(prompt))
        .route("/topic", post(topic))
        .route("/question", post(question))
        .route("/feedback", post(feedback))
        .route("/annotation", post(annotation))
        .route("/admin/round", get(round))
        .route("/admin/advance", post(advance))
        .fallback(not_found)
        .with_state(service)
}

/// Serve until the listener fails, expiring idle sessions in the background.
pub async fn serve(listener: tokio::net::TcpListener, service: Arc<Service>) -> std::io::Result<()> {
    let reaper = service.clone();
    let every = reaper.config().session_timeout().div_f64(4.0).clamp(Duration::from_millis(10), Duration::from_secs(60));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        loop {
            tick.tick().await;
            let svc = reaper.clone();
            match tokio::task::spawn_blocking(move || svc.expire_idle()).await {
                Ok(Ok(n)) if n > 0 => log::info!("expired {n} pending questions"),
                Ok(Err(e)) => log::error!("session expiry failed: {e}"),
                _ => {}
            }
        }
    });
    axum::serve(listener, router(service)).await
}
