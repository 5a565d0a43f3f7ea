//! HTTP service for the detector wire protocol, answering from the mock
//! detector.
//!
//! A PNG carries no camera or depth, so the service renders the views it
//! expects ahead of time and looks each incoming image up by its SHA-256.
//! Images it has not rendered are rejected with 422.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::oneshot;

use zerokey::gateway::{
    DetectorBackend, GatewayError, MockDetector, PointResponse, WireRequest, LIST_KEYPOINTS_PROMPT,
};
use zerokey::mesh::TriangleMesh;
use zerokey::pipeline::{render_views, PipelineSettings};
use zerokey::render::{RenderedView, ShadeStyle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamesResponse {
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub struct MockService {
    mesh: TriangleMesh,
    detector: MockDetector,
    labels: Vec<String>,
    views: RwLock<HashMap<String, RenderedView>>,
    requests: AtomicUsize,
    next_label: AtomicUsize,
    /// Answer this many requests with 503 before serving normally.
    fail_first: AtomicUsize,
}

fn digest(png: &[u8]) -> String {
    hex::encode(Sha256::digest(png))
}

impl MockService {
    /// `labels` answer marker descriptions in rotation; when empty the first
    /// keypoint's name is used.
    pub fn new(mesh: TriangleMesh, detector: MockDetector, labels: Vec<String>) -> Self {
        Self {
            mesh,
            detector,
            labels,
            views: RwLock::new(HashMap::new()),
            requests: AtomicUsize::new(0),
            next_label: AtomicUsize::new(0),
            fail_first: AtomicUsize::new(0),
        }
    }

    pub fn with_failures(self, n: usize) -> Self {
        self.fail_first.store(n, Ordering::SeqCst);
        self
    }

    /// Renders the views a client with these settings will send. An image
    /// already known keeps its first registration.
    pub fn register_views(&self, settings: &PipelineSettings) -> zerokey::pipeline::Result<usize> {
        let cameras = settings.cameras()?;
        let views = render_views(&self.mesh, &cameras, &ShadeStyle::default());
        let n = views.len();
        for v in views {
            self.register_view(v);
        }
        Ok(n)
    }

    pub fn register_view(&self, view: RenderedView) {
        let key = digest(view.png_bytes());
        self.views.write().expect("view table").entry(key).or_insert(view);
    }

    pub fn known_views(&self) -> usize {
        self.views.read().expect("view table").len()
    }

    /// Requests received, including rejected ones.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn injected_failure(&self) -> bool {
        self.fail_first
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
    }

    fn lookup(&self, image_b64: &str) -> Result<RenderedView, ApiError> {
        let png = base64::engine::general_purpose::STANDARD
            .decode(image_b64)
            .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("image is not base64: {e}")))?;
        self.views
            .read()
            .expect("view table")
            .get(&digest(&png))
            .cloned()
            .ok_or_else(|| ApiError(StatusCode::UNPROCESSABLE_ENTITY, "image was not rendered by this service".into()))
    }

    pub fn point(&self, req: &WireRequest) -> Result<PointResponse, ApiError> {
        let view = self.lookup(&req.image)?;
        self.detector.point(&view, &req.prompt).map_err(|e| match e {
            GatewayError::UnknownPrompt(_) => ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
            other => ApiError(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        })
    }

    pub fn describe(&self, req: &WireRequest) -> Result<NamesResponse, ApiError> {
        self.lookup_any(&req.image)?;
        let names: Vec<String> = if req.prompt.starts_with(LIST_KEYPOINTS_PROMPT) {
            self.detector.config().keypoints.iter().map(|k| k.name.clone()).collect()
        } else if self.labels.is_empty() {
            self.detector.config().keypoints.iter().take(1).map(|k| k.name.clone()).collect()
        } else {
            let i = self.next_label.fetch_add(1, Ordering::SeqCst) % self.labels.len();
            vec![self.labels[i].clone()]
        };
        Ok(NamesResponse { names })
    }

    /// Marker images are not pre-rendered, so describe only checks that the
    /// payload is a PNG.
    fn lookup_any(&self, image_b64: &str) -> Result<(), ApiError> {
        let png = base64::engine::general_purpose::STANDARD
            .decode(image_b64)
            .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("image is not base64: {e}")))?;
        if !png.starts_with(b"\x89PNG\r\n\x1a\n") {
            return Err(ApiError(StatusCode::BAD_REQUEST, "image is not a PNG".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct ApiError(pub StatusCode, pub String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

async fn point_handler(
    State(svc): State<Arc<MockService>>,
    Json(req): Json<WireRequest>,
) -> Result<Json<PointResponse>, ApiError> {
    svc.requests.fetch_add(1, Ordering::SeqCst);
    if svc.injected_failure() {
        return Err(ApiError(StatusCode::SERVICE_UNAVAILABLE, "injected failure".into()));
    }
    let s = svc.clone();
    tokio::task::spawn_blocking(move || s.point(&req))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map(Json)
}

async fn describe_handler(
    State(svc): State<Arc<MockService>>,
    Json(req): Json<WireRequest>,
) -> Result<Json<NamesResponse>, ApiError> {
    svc.requests.fetch_add(1, Ordering::SeqCst);
    if svc.injected_failure() {
        return Err(ApiError(StatusCode::SERVICE_UNAVAILABLE, "injected failure".into()));
    }
    svc.describe(&req).map(Json)
}

pub fn router(service: Arc<MockService>) -> Router {
    Router::new()
        .route("/point", post(point_handler))
        .route("/describe", post(describe_handler))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(service)
}

/// A server running on its own thread and runtime; stops when dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves in the background.
pub fn spawn(service: Arc<MockService>, addr: SocketAddr) -> std::io::Result<ServerHandle> {
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let local = std_listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener");
            let shutdown = async {
                let _ = rx.await;
            };
            if let Err(e) = axum::serve(listener, router(service)).with_graceful_shutdown(shutdown).await {
                log::error!("server stopped: {e}");
            }
        });
    });
    Ok(ServerHandle {
        addr: local,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
