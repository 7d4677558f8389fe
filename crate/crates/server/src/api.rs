//! HTTP routes. Long-running work answers 202 and reports through the
//! session event stream.

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use conceptkit::editor::{EditKind, EditTransaction};
use conceptkit::model::SessionRecord;
use conceptkit::{SessionId, SessionState, SketchDocument, TxId};
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::broadcast;

use crate::app::{png, App, EditRequest, Slot};
use crate::store::{EventMessage, Job, SessionDoc, StoreError};

pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    detail: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, detail: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            detail: detail.into(),
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", what)
    }

    fn conflict(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "Conflict", detail)
    }

    fn unprocessable(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "Unprocessable", detail)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Store", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.kind, "detail": self.detail }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::unprocessable(e.to_string()))
}

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/sketch", put(put_sketch).get(get_sketch))
        .route("/sessions/{id}/brief", post(post_brief))
        .route("/sessions/{id}/select", post(post_select))
        .route("/sessions/{id}/chart", get(get_chart))
        .route("/sessions/{id}/regions", get(get_regions))
        .route("/sessions/{id}/overlay", get(get_overlay))
        .route("/sessions/{id}/edits", post(post_edit))
        .route("/sessions/{id}/image", get(get_image))
        .route("/sessions/{id}/candidates/{index}/image", get(get_candidate_image))
        .route("/sessions/{id}/events", get(get_events))
        .with_state(app)
}

async fn slot(app: &App, id: &str) -> ApiResult<Arc<Slot>> {
    app.slot(&SessionId::new(id))?
        .ok_or_else(|| ApiError::not_found(format!("session {id}")))
}

fn require_idle(doc: &SessionDoc) -> ApiResult<()> {
    match &doc.job {
        Some(job) => Err(ApiError::conflict(format!("session is busy: {job:?}"))),
        None => Ok(()),
    }
}

fn require_allows(doc: &SessionDoc, event: &str) -> ApiResult<()> {
    if SessionRecord::allows(doc.state, event) {
        Ok(())
    } else {
        Err(ApiError::conflict(format!("{event} is not allowed in state {}", doc.state)))
    }
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

fn spawn_job(app: &Arc<App>, slot: Arc<Slot>, job: impl FnOnce(&App, &Slot) + Send + 'static) {
    let app = app.clone();
    tokio::task::spawn_blocking(move || job(&app, &slot));
}

async fn create_session(State(app): State<Arc<App>>) -> ApiResult<impl IntoResponse> {
    let id = app.create()?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "session_id": id, "state": SessionState::Drafting })),
    ))
}

fn tx_summary(t: &EditTransaction) -> serde_json::Value {
    json!({
        "id": t.id,
        "kind": t.kind,
        "component": t.component,
        "function": t.function,
        "from_solution": t.from_solution,
        "to_solution": t.to_solution,
        "verdict": t.verdict,
        "prompt": t.prompt,
        "base_version": t.base_version,
        "result_version": t.result_version,
        "status": t.status,
        "error": t.error,
    })
}

async fn get_session(State(app): State<Arc<App>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let slot = slot(&app, &id).await?;
    let doc = slot.doc.lock().await;
    Ok(Json(json!({
        "session_id": doc.session_id,
        "state": doc.state,
        "job": doc.job,
        "version": doc.selected.as_ref().map(|s| s.version),
        "image_hash": app.image_for_version(&doc, None),
        "versions": doc.versions,
        "brief": doc.brief,
        "candidates": doc.candidates,
        "selected_index": doc.selected_index,
        "pairs": doc.selected.as_ref().map(|s| &s.pairs),
        "history": doc.history,
        "transactions": doc.transactions.iter().map(tx_summary).collect::<Vec<_>>(),
        "last_seq": doc.last_seq(),
    })))
}

async fn put_sketch(State(app): State<Arc<App>>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let sketch: SketchDocument = parse(&body)?;
    sketch.validate().map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let slot = slot(&app, &id).await?;
    let mut doc = slot.doc.lock().await;
    if doc.state > SessionState::Generated {
        return Err(ApiError::conflict(format!("sketch is frozen in state {}", doc.state)));
    }
    require_idle(&doc)?;
    doc.sketch = Some(sketch);
    app.store.save(&doc)?;
    Ok(Json(json!({ "strokes": doc.sketch.as_ref().map_or(0, |s| s.strokes.len()) })))
}

async fn get_sketch(State(app): State<Arc<App>>, Path(id): Path<String>) -> ApiResult<Response> {
    let slot = slot(&app, &id).await?;
    let doc = slot.doc.lock().await;
    let sketch = doc.sketch.as_ref().ok_or_else(|| ApiError::not_found("no sketch"))?;
    let raster = sketch.raster().map_err(|e| ApiError::unprocessable(e.to_string()))?;
    Ok(png_response(png(raster)))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct BriefBody {
    transcript: String,
    audio_base64: Option<String>,
    candidates: Option<usize>,
    size: Option<u32>,
}

async fn post_brief(State(app): State<Arc<App>>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let body: BriefBody = parse(&body)?;
    let count = body.candidates.unwrap_or(app.config.candidates);
    let size = body.size.unwrap_or_else(|| app.default_size());
    if count == 0 || count > 8 {
        return Err(ApiError::unprocessable("candidates must be between 1 and 8"));
    }
    if !(16..=2048).contains(&size) {
        return Err(ApiError::unprocessable("size must be between 16 and 2048"));
    }
    let slot = slot(&app, &id).await?;
    {
        let doc = slot.doc.lock().await;
        require_allows(&doc, "ConceptsGenerated")?;
        require_idle(&doc)?;
    }
    let mut transcript = body.transcript.trim().to_owned();
    if let Some(audio) = &body.audio_base64 {
        let bytes = B64.decode(audio).map_err(|e| ApiError::unprocessable(format!("audio_base64: {e}")))?;
        let app2 = app.clone();
        let heard = tokio::task::spawn_blocking(move || app2.transcribe(&bytes))
            .await
            .expect("transcription task")
            .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, e.kind(), e.to_string()))?;
        transcript = [transcript, heard].join(" ").trim().to_owned();
    }
    let mut doc = slot.doc.lock().await;
    require_allows(&doc, "ConceptsGenerated")?;
    require_idle(&doc)?;
    let has_sketch = doc.sketch.as_ref().is_some_and(|s| !s.strokes.is_empty());
    if transcript.is_empty() && !has_sketch {
        return Err(ApiError::unprocessable("a brief needs a transcript, audio or a sketch"));
    }
    doc.job = Some(Job::Brief);
    app.store.save(&doc)?;
    drop(doc);
    let t = transcript.clone();
    spawn_job(&app, slot, move |app, slot| app.run_brief(slot, t, count, size));
    Ok((StatusCode::ACCEPTED, Json(json!({ "job": "brief", "transcript": transcript }))))
}

#[derive(Debug, Deserialize)]
struct SelectBody {
    index: usize,
}

async fn post_select(State(app): State<Arc<App>>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let body: SelectBody = parse(&body)?;
    let slot = slot(&app, &id).await?;
    let mut doc = slot.doc.lock().await;
    require_allows(&doc, "ConceptDecomposed")?;
    require_idle(&doc)?;
    match doc.candidates.get(body.index) {
        Some(c) if c.record.is_some() => {}
        Some(_) => return Err(ApiError::unprocessable(format!("candidate {} failed to generate", body.index))),
        None => return Err(ApiError::unprocessable(format!("no candidate {}", body.index))),
    }
    doc.job = Some(Job::Select { index: body.index });
    app.store.save(&doc)?;
    drop(doc);
    let index = body.index;
    spawn_job(&app, slot, move |app, slot| app.run_select(slot, index));
    Ok((StatusCode::ACCEPTED, Json(json!({ "job": "select", "index": index }))))
}

async fn get_chart(State(app): State<Arc<App>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let slot = slot(&app, &id).await?;
    let doc = slot.doc.lock().await;
    let chart = doc
        .chart
        .as_ref()
        .ok_or_else(|| ApiError::conflict(format!("no chart in state {}", doc.state)))?;
    Ok(Json(serde_json::to_value(chart).expect("chart serializes")))
}

async fn get_regions(State(app): State<Arc<App>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let slot = slot(&app, &id).await?;
    let doc = slot.doc.lock().await;
    if doc.regions.is_empty() {
        return Err(ApiError::conflict(format!("no regions in state {}", doc.state)));
    }
    Ok(Json(json!({ "legend": doc.legend, "regions": doc.regions })))
}

async fn get_overlay(State(app): State<Arc<App>>, Path(id): Path<String>) -> ApiResult<Response> {
    let slot = slot(&app, &id).await?;
    let hash = slot.doc.lock().await.overlay_hash.clone();
    let hash = hash.ok_or_else(|| ApiError::not_found("no overlay"))?;
    Ok(png_response(app.blob(&hash)?))
}

async fn post_edit(State(app): State<Arc<App>>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let request: EditRequest = parse(&body)?;
    let slot = slot(&app, &id).await?;
    let mut doc = slot.doc.lock().await;
    require_allows(&doc, "EditAccepted")?;
    if let Some(t) = doc.pending_tx() {
        return Err(ApiError::conflict(format!("edit {} is still pending", t.id)));
    }
    require_idle(&doc)?;
    let chart = doc.chart.as_ref().expect("decomposed session has a chart");
    let (kind, component) = match &request {
        EditRequest::Recommendation { function, chosen } => {
            let (component, entry) = chart
                .find(function)
                .ok_or_else(|| ApiError::unprocessable(format!("function {function:?} is not in the chart")))?;
            if !entry.alternatives.contains(chosen) {
                return Err(ApiError::unprocessable(format!("{chosen:?} is not an alternative for {function:?}")));
            }
            (EditKind::Recommendation, component.to_owned())
        }
        EditRequest::Sketch { component, strokes, transcript } => {
            if strokes.is_empty() && transcript.trim().is_empty() {
                return Err(ApiError::unprocessable("a sketch edit needs strokes or a transcript"));
            }
            (EditKind::Sketch, component.clone())
        }
    };
    if !doc.regions.iter().any(|r| r.class_label == component) {
        return Err(ApiError::unprocessable(format!("component {component:?} has no region")));
    }
    let tx_id = TxId(uuid::Uuid::new_v4().simple().to_string());
    let base = doc.selected.as_ref().map_or(1, |s| s.version);
    let mut tx = EditTransaction::pending(tx_id.clone(), kind, &component, base);
    if let EditRequest::Recommendation { function, chosen } = &request {
        let (_, entry) = chart.find(function).expect("checked above");
        tx.function = function.clone();
        tx.from_solution = entry.current.clone();
        tx.to_solution = chosen.clone();
    }
    doc.transactions.push(tx);
    doc.job = Some(Job::Edit { tx: tx_id.clone() });
    app.store.save(&doc)?;
    drop(doc);
    let t = tx_id.clone();
    spawn_job(&app, slot, move |app, slot| app.run_edit(slot, t, request));
    Ok((StatusCode::ACCEPTED, Json(json!({ "tx_id": tx_id, "status": "Pending" }))))
}

async fn get_image(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let version = match q.get("version") {
        Some(v) => Some(v.parse::<usize>().map_err(|_| ApiError::unprocessable("version must be an integer"))?),
        None => None,
    };
    let slot = slot(&app, &id).await?;
    let hash = {
        let doc = slot.doc.lock().await;
        app.image_for_version(&doc, version)
    };
    let hash = hash.ok_or_else(|| ApiError::not_found(format!("image version {version:?}")))?;
    Ok(png_response(app.blob(&hash)?))
}

async fn get_candidate_image(
    State(app): State<Arc<App>>,
    Path((id, index)): Path<(String, usize)>,
) -> ApiResult<Response> {
    let slot = slot(&app, &id).await?;
    let hash = {
        let doc = slot.doc.lock().await;
        doc.candidates
            .get(index)
            .and_then(|c| c.record.as_ref())
            .map(|r| r.image_hash.clone())
    };
    let hash = hash.ok_or_else(|| ApiError::not_found(format!("candidate {index}")))?;
    Ok(png_response(app.blob(&hash)?))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    after: Option<u64>,
    #[serde(default = "yes")]
    follow: bool,
}

fn yes() -> bool {
    true
}

fn sse_event(e: &EventMessage) -> Result<Event, Infallible> {
    Ok(Event::default()
        .id(e.seq.to_string())
        .event(format!("{:?}", e.kind))
        .json_data(e)
        .expect("event serializes"))
}

/// Replays stored events after `after` (or `Last-Event-ID`), then follows
/// live ones unless `follow=false`.
async fn get_events(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let after = q.after.or_else(|| {
        headers
            .get("last-event-id")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse().ok())
    });
    let after = after.unwrap_or(0);
    let slot = slot(&app, &id).await?;
    let (replay, rx) = {
        let doc = slot.doc.lock().await;
        let replay: Vec<EventMessage> = doc.events.iter().filter(|e| e.seq > after).cloned().collect();
        (replay, slot.events.subscribe())
    };
    let last = replay.last().map_or(after, |e| e.seq);
    let replayed = stream::iter(replay.iter().map(sse_event).collect::<Vec<_>>());
    let live = stream::unfold((rx, last), |(mut rx, last)| async move {
        loop {
            match rx.recv().await {
                Ok(e) if e.seq <= last => continue,
                Ok(e) => {
                    let seq = e.seq;
                    return Some((sse_event(&e), (rx, seq)));
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "event subscriber lagged");
                    continue;
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    let live = if q.follow { live.boxed() } else { stream::empty().boxed() };
    Ok(Sse::new(replayed.chain(live)).keep_alive(KeepAlive::default()))
}
