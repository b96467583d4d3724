//! Local HTTP control plane on the loopback interface.
//!
//! Share-creating and share-modifying routes answer with the entry and its
//! [`FeedbackMessage`] together. Destructive routes answer 428 unless the
//! request carries `confirm=true`.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::{Component, PathBuf};
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{ConnectInfo, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::daemon::Node;
use crate::discovery::PeerInfo;
use crate::events::{EventFilter, EventKind, Outcome, SubscriptionError};
use crate::feedback::{describe_share, FeedbackMessage};
use crate::mode::{Action, PermissionMode};
use crate::registry::{RegistryError, ShareEntry};
use crate::wire::client::{self, RemoteError, RemoteReply};

pub const HEARTBEAT_INTERVAL: Duration = Duration::from_secs(10);

type AppState = Arc<Node>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "malformed", message)
    }

    fn confirmation_required(what: &str) -> Self {
        Self::new(
            StatusCode::PRECONDITION_REQUIRED,
            "confirmation_required",
            format!("{what} is destructive; repeat with confirm=true"),
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({ "error": self.code, "message": self.message })),
        )
            .into_response()
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let (status, code) = match &e {
            RegistryError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            RegistryError::UnknownShare(_) => (StatusCode::NOT_FOUND, "unknown_share"),
            RegistryError::NotAFile(_) => (StatusCode::BAD_REQUEST, "not_a_file"),
            RegistryError::AlreadyShared { .. } => (StatusCode::CONFLICT, "already_shared"),
            RegistryError::BadStore(_) | RegistryError::Io(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "io_error")
            }
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<RemoteError> for ApiError {
    fn from(e: RemoteError) -> Self {
        let status = match e {
            RemoteError::Local(_) | RemoteError::MissingPath(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::BAD_GATEWAY,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

/// Omitted mode means read.
fn parse_mode(mode: Option<&str>) -> Result<PermissionMode, ApiError> {
    match mode {
        None => Ok(PermissionMode::default()),
        Some(m) => m
            .parse()
            .map_err(|e: crate::mode::ParseModeError| ApiError::bad_request(e.to_string())),
    }
}

pub fn router(node: Arc<Node>) -> Router {
    Router::new()
        .route("/v1/shares", get(list_shares).post(create_share))
        .route("/v1/shares/{id}", patch(update_share).delete(delete_share))
        .route("/v1/peers", get(list_peers))
        .route("/v1/peers/{id}/files", get(browse_peer))
        .route("/v1/transfers", axum::routing::post(transfer))
        .route("/v1/events", get(list_events))
        .route("/v1/events/stream", get(stream_events))
        .route("/v1/status", get(status))
        .fallback(static_asset)
        .layer(middleware::from_fn(require_loopback))
        .with_state(node)
}

async fn require_loopback(request: Request, next: Next) -> Response {
    let remote = request
        .extensions()
        .get::<ConnectInfo<SocketAddr>>()
        .map(|c| c.0);
    match remote {
        Some(addr) if addr.ip().is_loopback() => next.run(request).await,
        _ => ApiError::new(
            StatusCode::FORBIDDEN,
            "forbidden",
            "control API is loopback-only",
        )
        .into_response(),
    }
}

#[derive(Serialize)]
struct ShareWithFeedback {
    entry: ShareEntry,
    feedback: FeedbackMessage,
}

impl From<ShareEntry> for ShareWithFeedback {
    fn from(entry: ShareEntry) -> Self {
        let feedback = describe_share(&entry);
        Self { entry, feedback }
    }
}

async fn list_shares(State(node): State<AppState>) -> Json<Vec<ShareEntry>> {
    Json(node.registry.list_shares())
}

#[derive(Deserialize)]
struct CreateShare {
    path: PathBuf,
    mode: Option<String>,
}

async fn create_share(
    State(node): State<AppState>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let req: CreateShare = parse_body(&body)?;
    let mode = parse_mode(req.mode.as_deref())?;
    if !req.path.is_absolute() {
        return Err(ApiError::bad_request("path must be absolute"));
    }
    let entry = node.registry.add_share(&req.path, mode)?;
    Ok((StatusCode::CREATED, Json(ShareWithFeedback::from(entry))))
}

#[derive(Deserialize)]
struct UpdateShare {
    mode: Option<String>,
}

async fn update_share(
    State(node): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ShareWithFeedback>, ApiError> {
    let req: UpdateShare = parse_body(&body)?;
    let mode = parse_mode(req.mode.as_deref())?;
    Ok(Json(node.registry.set_mode(&id, mode)?.into()))
}

#[derive(Deserialize)]
struct Confirm {
    #[serde(default)]
    confirm: bool,
}

async fn delete_share(
    State(node): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<Confirm>,
) -> Result<Json<serde_json::Value>, ApiError> {
    if !q.confirm {
        return Err(ApiError::confirmation_required("unsharing"));
    }
    let entry = node.registry.remove_share(&id)?;
    Ok(Json(json!({ "entry": entry })))
}

#[derive(Serialize)]
pub struct PeerView {
    pub peer_id: String,
    pub display_name: String,
    pub address: String,
    pub port: u16,
    pub share_count: u64,
    pub last_seen_secs_ago: f64,
}

impl From<&PeerInfo> for PeerView {
    fn from(p: &PeerInfo) -> Self {
        Self {
            peer_id: p.peer_id.clone(),
            display_name: p.display_name.clone(),
            address: p.address.to_string(),
            port: p.port,
            share_count: p.share_count,
            last_seen_secs_ago: p.last_seen.elapsed().as_secs_f64(),
        }
    }
}

async fn list_peers(State(node): State<AppState>) -> Json<Vec<PeerView>> {
    Json(node.peers.peers().iter().map(PeerView::from).collect())
}

fn find_peer(node: &Node, id: &str) -> Result<PeerInfo, ApiError> {
    node.peers.resolve(id).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_peer",
            format!("no peer {id}"),
        )
    })
}

async fn browse_peer(
    State(node): State<AppState>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    let peer = find_peer(&node, &id)?;
    let entries = client::list_remote(peer.socket_addr(), &node.identity).await?;
    Ok(Json(entries))
}

#[derive(Deserialize)]
struct TransferRequest {
    peer_id: String,
    action: String,
    share_id: String,
    local_path: Option<PathBuf>,
    #[serde(default)]
    confirm: bool,
}

async fn transfer(
    State(node): State<AppState>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ApiError> {
    let req: TransferRequest = parse_body(&body)?;
    let action = match req.action.as_str() {
        "get" => Action::Get,
        "put" => Action::Put,
        "delete" => Action::Delete,
        other => return Err(ApiError::bad_request(format!("unknown action {other:?}"))),
    };
    // Checked before anything else so a refused request has no effect at all.
    if action.is_mutating() && !req.confirm {
        return Err(ApiError::confirmation_required(action.as_str()));
    }
    if matches!(action, Action::Get | Action::Put) {
        match &req.local_path {
            None => return Err(ApiError::bad_request(format!("{action} needs local_path"))),
            Some(p) if !p.is_absolute() => {
                return Err(ApiError::bad_request("local_path must be absolute"))
            }
            Some(_) => {}
        }
    }
    let peer = find_peer(&node, &req.peer_id)?;
    let reply = client::perform_remote(
        peer.socket_addr(),
        &node.identity,
        action,
        &req.share_id,
        req.local_path.as_deref(),
    )
    .await?;
    let bytes = match reply {
        RemoteReply::Fetched { bytes } | RemoteReply::Replaced { bytes } => Some(bytes),
        _ => None,
    };
    Ok(Json(json!({
        "peer_id": peer.peer_id,
        "action": action,
        "share_id": req.share_id,
        "bytes": bytes,
    })))
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    since: u64,
    what: Option<EventKind>,
    outcome: Option<Outcome>,
    share_id: Option<String>,
    peer_id: Option<String>,
    limit: Option<usize>,
}

async fn list_events(
    State(node): State<AppState>,
    Query(q): Query<EventsQuery>,
) -> impl IntoResponse {
    let filter = EventFilter {
        what: q.what,
        outcome: q.outcome,
        share_id: q.share_id,
        peer_id: q.peer_id,
    };
    Json(node.events.read(q.since, &filter, q.limit))
}

#[derive(Deserialize)]
struct StreamQuery {
    #[serde(default)]
    since: u64,
}

/// One JSON record per line, then live records as they happen. Lines
/// starting with `:` are heartbeats.
async fn stream_events(State(node): State<AppState>, Query(q): Query<StreamQuery>) -> Response {
    let sub = node.events.subscribe(q.since);
    let mut heartbeat = tokio::time::interval(HEARTBEAT_INTERVAL);
    heartbeat.reset();
    let lines = futures::stream::unfold(Some((sub, heartbeat)), |state| async move {
        let (mut sub, mut heartbeat) = state?;
        let line = tokio::select! {
            biased;
            next = sub.next() => match next {
                Ok(Some(record)) => {
                    let mut line = serde_json::to_vec(&record).expect("event records serialize");
                    line.push(b'\n');
                    line
                }
                Ok(None) => return None,
                Err(SubscriptionError::Lagged { last_seq }) => {
                    tracing::info!(last_seq, "dropping slow event stream subscriber");
                    return None;
                }
            },
            _ = heartbeat.tick() => b": heartbeat\n".to_vec(),
        };
        Some((
            Ok::<_, Infallible>(Bytes::from(line)),
            Some((sub, heartbeat)),
        ))
    });
    Response::builder()
        .header(header::CONTENT_TYPE, "application/x-ndjson")
        .header(header::CACHE_CONTROL, "no-cache")
        .body(Body::from_stream(lines))
        .expect("static response parts are valid")
}

async fn status(State(node): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "peer_id": node.identity.peer_id,
        "name": node.identity.display_name,
        "wire_port": node.identity.port,
        "api_port": node.api_port,
        "degraded_audit": node.events.is_degraded(),
        "uptime_secs": node.started.elapsed().as_secs(),
        "counters": {
            "events": node.events.len(),
            "last_seq": node.events.last_seq(),
            "shares": node.registry.len(),
            "peers": node.peers.peers().len(),
            "malformed_datagrams": node.peers.malformed_count(),
            "announcements_sent": node.discovery_stats.sent.load(Ordering::Relaxed),
            "datagrams_received": node.discovery_stats.received.load(Ordering::Relaxed),
        }
    }))
}

const PLACEHOLDER_PAGE: &str = "<!doctype html><html><head><title>peershare</title></head>\
<body><h1>peershare</h1><p>The dashboard is not installed. Start the daemon with \
<code>--ui-dir</code> pointing at the built dashboard, or use the <code>/v1</code> API.</p></body></html>";

fn content_type(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") | Some("mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("ico") => "image/x-icon",
        _ => "application/octet-stream",
    }
}

async fn static_asset(State(node): State<AppState>, uri: axum::http::Uri) -> Response {
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel_path = std::path::Path::new(rel);
    if rel_path
        .components()
        .any(|c| !matches!(c, Component::Normal(_)))
    {
        return StatusCode::NOT_FOUND.into_response();
    }
    let Some(dir) = &node.ui_dir else {
        return if rel == "index.html" {
            (
                [(header::CONTENT_TYPE, "text/html; charset=utf-8")],
                PLACEHOLDER_PAGE,
            )
                .into_response()
        } else {
            StatusCode::NOT_FOUND.into_response()
        };
    };
    let full = dir.join(rel_path);
    match tokio::fs::read(&full).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&full))], bytes).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}
