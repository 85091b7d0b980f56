//! HTTP/WebSocket control plane used by the dashboard.

use std::sync::atomic::Ordering;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gestop_core::datasets::{read_static_csv, DatasetError};
use gestop_core::executor::{ActionMapping, MappingError};
use gestop_core::model::GestureKind;
use gestop_core::nn::save_model;
use gestop_core::recognizer::Models;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;

use crate::daemon::{Recording, Shared};
use crate::events::WsEvent;
use crate::training::{load_dynamic, metrics_path, train_dynamic, train_static};

type AppState = Arc<Shared>;

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn bad_request(msg: impl Into<String>) -> Self {
        Self(StatusCode::BAD_REQUEST, msg.into())
    }

    fn conflict(msg: impl Into<String>) -> Self {
        Self(StatusCode::CONFLICT, msg.into())
    }

    fn internal(msg: impl Into<String>) -> Self {
        Self(StatusCode::INTERNAL_SERVER_ERROR, msg.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<MappingError> for ApiError {
    fn from(e: MappingError) -> Self {
        ApiError::bad_request(e.to_string())
    }
}

impl From<DatasetError> for ApiError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(e) => ApiError::internal(e.to_string()),
            other => ApiError::bad_request(other.to_string()),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/config", get(get_config).put(put_config))
        .route("/labels", get(get_labels))
        .route("/status", get(get_status))
        .route("/record/start", post(record_start))
        .route("/record/stop", post(record_stop))
        .route("/retrain", post(retrain))
        .route("/signal", post(set_signal))
        .route("/events", get(events))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState) {
    let mut shutdown = state.shutdown.subscribe();
    let app = router(state);
    let result = axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            let _ = shutdown.wait_for(|v| *v).await;
        })
        .await;
    if let Err(e) = result {
        log::error!("control plane: {e}");
    }
}

async fn get_config(State(s): State<AppState>) -> Json<Value> {
    Json(s.executor.mapping().to_json())
}

/// Validates the whole table before swapping; a rejected table leaves the
/// active mapping untouched.
async fn put_config(State(s): State<AppState>, body: String) -> Result<Json<Value>, ApiError> {
    let mapping = ActionMapping::parse(&body)?;
    let json = mapping.to_json();
    std::fs::write(&s.config.mapping, mapping.to_json_string())
        .map_err(|e| ApiError::internal(format!("cannot persist mapping: {e}")))?;
    s.executor.swap_mapping(mapping);
    log::info!("mapping replaced via control plane");
    Ok(Json(json))
}

async fn get_labels(State(s): State<AppState>) -> Json<Value> {
    let models = s.models.load();
    Json(json!({
        "static": models.static_model.labels,
        "dynamic": models.dynamic_model.labels,
    }))
}

async fn get_status(State(s): State<AppState>) -> Json<Value> {
    Json(serde_json::to_value(s.status()).expect("status serializes"))
}

#[derive(Debug, Deserialize)]
struct RecordStart {
    kind: String,
    label: String,
}

async fn record_start(
    State(s): State<AppState>,
    Json(req): Json<RecordStart>,
) -> Result<Json<Value>, ApiError> {
    let kind: GestureKind = req
        .kind
        .parse()
        .map_err(|e: String| ApiError::bad_request(e))?;
    let label = req.label.trim().to_string();
    if label.is_empty() {
        return Err(ApiError::bad_request("label must not be empty"));
    }
    {
        let mut rec = s.recording.lock().expect("recording lock");
        if let Some(current) = rec.as_ref() {
            return Err(ApiError::conflict(format!(
                "already recording '{}'",
                current.label
            )));
        }
        *rec = Some(Recording::new(
            kind,
            label.clone(),
            s.config.recognizer.min_segment_frames,
        ));
    }
    s.publish_status(Some(format!("recording {kind} '{label}'")));
    Ok(Json(json!({ "kind": kind.to_string(), "label": label })))
}

async fn record_stop(State(s): State<AppState>) -> Result<Json<Value>, ApiError> {
    let shared = s.clone();
    let done = tokio::task::spawn_blocking(move || shared.stop_recording())
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let status = done.ok_or_else(|| ApiError::conflict("not recording"))??;
    s.publish_status(Some(format!(
        "recorded {} '{}' sample(s)",
        status.count, status.label
    )));
    Ok(Json(
        serde_json::to_value(status).expect("status serializes"),
    ))
}

#[derive(Debug, Deserialize)]
struct RetrainRequest {
    kind: String,
}

/// Retrains the chosen network from scratch on everything recorded so far,
/// streaming per-epoch progress, then swaps the new model in.
async fn retrain(
    State(s): State<AppState>,
    Json(req): Json<RetrainRequest>,
) -> Result<Json<Value>, ApiError> {
    let kind: GestureKind = req
        .kind
        .parse()
        .map_err(|e: String| ApiError::bad_request(e))?;
    {
        let mut busy = s.retraining.lock().expect("retrain lock");
        if let Some(k) = busy.as_ref() {
            return Err(ApiError::conflict(format!(
                "{k} retraining already running"
            )));
        }
        *busy = Some(kind.to_string());
    }
    s.publish_status(Some(format!("retraining {kind} model")));
    let shared = s.clone();
    // The flag is cleared by the worker so an abandoned request cannot wedge it.
    let result = tokio::task::spawn_blocking(move || {
        let out = run_retrain(&shared, kind);
        *shared.retraining.lock().expect("retrain lock") = None;
        out
    })
    .await;
    let body = result.map_err(|e| ApiError::internal(e.to_string()))??;
    s.publish_status(Some(format!("{kind} model retrained")));
    Ok(Json(body))
}

fn run_retrain(s: &Shared, kind: GestureKind) -> Result<Value, ApiError> {
    let opts = s.config.training;
    let kind_name = kind.to_string();
    let progress = |m: &gestop_core::nn::EpochMetrics| s.publish(&WsEvent::training(&kind_name, m));
    let current = s.models.load_full();
    let (labels, val_accuracy, epochs, models) = match kind {
        GestureKind::Static => {
            let samples = read_static_csv(s.config.static_data())?;
            let trained = train_static(&samples, &opts, progress)?;
            let models = Models::new(
                trained.model.clone(),
                current.dynamic_model.clone(),
                s.config.none_scale,
            )
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
            save_model(&trained.model, &s.config.static_model)
                .map_err(|e| ApiError::internal(e.to_string()))?;
            write_metrics(&s.config.static_model, &trained.report)?;
            (
                trained.model.labels.clone(),
                trained.val_accuracy(),
                trained.report.history.len(),
                models,
            )
        }
        GestureKind::Dynamic => {
            let samples = load_dynamic(&s.config.dynamic_data())?;
            let trained = train_dynamic(&samples, &opts, progress)?;
            let models = Models::new(
                current.static_model.clone(),
                trained.model.clone(),
                s.config.none_scale,
            )
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
            save_model(&trained.model, &s.config.dynamic_model)
                .map_err(|e| ApiError::internal(e.to_string()))?;
            write_metrics(&s.config.dynamic_model, &trained.report)?;
            (
                trained.model.labels.clone(),
                trained.val_accuracy(),
                trained.report.history.len(),
                models,
            )
        }
    };
    s.models.store(Arc::new(models));
    log::info!(
        "{kind} model retrained: {} labels, val accuracy {val_accuracy:?}",
        labels.len()
    );
    Ok(json!({
        "kind": kind.to_string(),
        "labels": labels,
        "epochs": epochs,
        "val_accuracy": val_accuracy,
    }))
}

fn write_metrics(
    model_path: &std::path::Path,
    report: &gestop_core::nn::TrainReport,
) -> Result<(), ApiError> {
    std::fs::write(metrics_path(model_path), report.to_csv())
        .map_err(|e| ApiError::internal(e.to_string()))
}

/// Accepts `"on"`/`"off"` as plain text or a JSON string, a JSON boolean,
/// or `{"on": bool}`.
fn parse_signal(body: &str) -> Option<bool> {
    let word = |w: &str| match w.trim().to_ascii_lowercase().as_str() {
        "on" => Some(true),
        "off" => Some(false),
        _ => None,
    };
    match serde_json::from_str::<Value>(body) {
        Ok(Value::Bool(b)) => Some(b),
        Ok(Value::String(s)) => word(&s),
        Ok(Value::Object(o)) => match o.get("on").or_else(|| o.get("signal")) {
            Some(Value::Bool(b)) => Some(*b),
            Some(Value::String(s)) => word(s),
            _ => None,
        },
        _ => word(body),
    }
}

/// While on, every ingress frame is treated as signal-marked; while off,
/// frames keep the producer's own flag.
async fn set_signal(State(s): State<AppState>, body: String) -> Result<Json<Value>, ApiError> {
    let on =
        parse_signal(&body).ok_or_else(|| ApiError::bad_request("expected \"on\" or \"off\""))?;
    s.signal_on.store(on, Ordering::Relaxed);
    Ok(Json(json!({ "signal": if on { "on" } else { "off" } })))
}

async fn events(ws: WebSocketUpgrade, State(s): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| event_session(socket, s))
}

async fn event_session(mut socket: WebSocket, s: AppState) {
    let mut rx = s.events.subscribe();
    let mut shutdown = s.shutdown.subscribe();
    let hello = WsEvent::Status(s.status()).to_json();
    if socket.send(Message::Text(hello)).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(text) => {
                    if socket.send(Message::Text(text.to_string())).await.is_err() {
                        break;
                    }
                }
                Err(RecvError::Lagged(n)) => {
                    s.dropped_events.fetch_add(n, Ordering::Relaxed);
                }
                Err(RecvError::Closed) => break,
            },
            incoming = socket.recv() => match incoming {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => break,
                Some(Ok(_)) => {}
            },
            _ = shutdown.changed() => break,
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}
