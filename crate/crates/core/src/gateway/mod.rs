//! Text-prompted 2D point detectors: a remote HTTP endpoint, a deterministic
//! mock simulator, and a content-addressed record/replay store.
//!
//! Detections use percent coordinates in [0,100] of the image width and
//! height. [`percent_to_pixel`] maps them back to continuous pixel-index
//! coordinates where integer values are pixel centers.

mod catalog;
mod mock;
mod namer;
mod remote;
mod replay;

use serde::{Deserialize, Serialize};

use crate::render::RenderedView;

pub use catalog::{load_catalogs, parse_catalogs, CatalogEntry, PromptCatalog};
pub use mock::{MockDetector, MockDetectorConfig, MockKeypoint, MockKeypointSpec, MockSpec};
pub use namer::{
    list_candidate_keypoints, majority_label, FileNamer, MockNamer, NamerBackend, RemoteNamer, DESCRIBE_MARKER_PROMPT,
    LIST_KEYPOINTS_PROMPT,
};
pub use remote::{RemoteConfig, RemoteDetector, DETECTOR_URL_ENV};
pub use replay::{replay_key, ReplayMode, ReplayStore};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("detector endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("detector request timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("malformed detector response ({reason}): {payload}")]
    ProtocolError { reason: String, payload: String },
    #[error("prompt not known to the mock detector: {0}")]
    UnknownPrompt(String),
    #[error("replay store has no entry {key} for prompt {prompt:?}")]
    CacheMiss { key: String, prompt: String },
    #[error("namer returned no names")]
    EmptyResponse,
    #[error("invalid prompt catalog: {0}")]
    Catalog(String),
    #[error("invalid mock configuration: {0}")]
    MockConfig(String),
    #[error("replay store i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::EndpointUnreachable(_) | GatewayError::Timeout(_))
    }
}

pub type Result<T> = std::result::Result<T, GatewayError>;

pub const GLOBAL_PROMPT: &str = "Point to all salient points in this image.";

/// "Point to the {name} in this image." The article is not doubled when the
/// name already carries it.
pub fn point_prompt(name: &str) -> String {
    let name = name.trim();
    if name.to_lowercase().starts_with("the ") {
        format!("Point to {name} in this image.")
    } else {
        format!("Point to the {name} in this image.")
    }
}

/// Inverse of [`point_prompt`]; `None` for any other text.
pub fn prompt_subject(prompt: &str) -> Option<&str> {
    let inner = prompt.trim().strip_prefix("Point to ")?.strip_suffix(" in this image.")?;
    Some(inner.strip_prefix("the ").unwrap_or(inner))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WirePoint {
    pub x: f64,
    pub y: f64,
}

/// Response body of the point endpoint: `{"points":[{"x":..,"y":..}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResponse {
    pub points: Vec<WirePoint>,
}

/// Request body of both the point and describe endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    /// Base64-encoded PNG.
    pub image: String,
    pub prompt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorTag {
    Remote,
    Mock,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub prompt_id: String,
    pub view_id: usize,
    pub x: f64,
    pub y: f64,
    pub tag: DetectorTag,
    /// The backend answered outside [0,100] and the value was clamped.
    #[serde(default)]
    pub clamped: bool,
}

pub trait DetectorBackend: Send + Sync {
    fn point(&self, view: &RenderedView, prompt: &str) -> Result<PointResponse>;
    fn tag(&self) -> DetectorTag;
}

impl<T: DetectorBackend + ?Sized> DetectorBackend for Box<T> {
    fn point(&self, view: &RenderedView, prompt: &str) -> Result<PointResponse> {
        (**self).point(view, prompt)
    }
    fn tag(&self) -> DetectorTag {
        (**self).tag()
    }
}

impl<T: DetectorBackend + ?Sized> DetectorBackend for std::sync::Arc<T> {
    fn point(&self, view: &RenderedView, prompt: &str) -> Result<PointResponse> {
        (**self).point(view, prompt)
    }
    fn tag(&self) -> DetectorTag {
        (**self).tag()
    }
}

/// One query against `backend`; coordinates outside [0,100] are clamped and
/// flagged, non-finite ones are a protocol error.
pub fn query_points(
    backend: &dyn DetectorBackend,
    view: &RenderedView,
    prompt_id: &str,
    prompt: &str,
) -> Result<Vec<Detection2D>> {
    let response = backend.point(view, prompt)?;
    let tag = backend.tag();
    response
        .points
        .iter()
        .map(|p| {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(GatewayError::ProtocolError {
                    reason: "non-finite coordinate".into(),
                    payload: serde_json::to_string(&response).unwrap_or_default(),
                });
            }
            let (x, y) = (p.x.clamp(0.0, 100.0), p.y.clamp(0.0, 100.0));
            let clamped = x != p.x || y != p.y;
            if clamped {
                log::warn!("view {} prompt {prompt_id}: clamped ({}, {}) into range", view.view_id, p.x, p.y);
            }
            Ok(Detection2D {
                prompt_id: prompt_id.to_string(),
                view_id: view.view_id,
                x,
                y,
                tag,
                clamped,
            })
        })
        .collect()
}

/// Percent coordinate to continuous pixel index: `x/100·w − 0.5`, clamped to
/// `[0, w−1]`.
pub fn percent_to_pixel(x: f64, y: f64, width: u32, height: u32) -> (f64, f64) {
    (
        (x / 100.0 * width as f64 - 0.5).clamp(0.0, width as f64 - 1.0),
        (y / 100.0 * height as f64 - 0.5).clamp(0.0, height as f64 - 1.0),
    )
}

/// Continuous image-plane coordinate (pixel edges at integers) to percent.
pub fn image_to_percent(u: f64, v: f64, width: u32, height: u32) -> (f64, f64) {
    (
        (u / width as f64 * 100.0).clamp(0.0, 100.0),
        (v / height as f64 * 100.0).clamp(0.0, 100.0),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum CellOutcome {
    Detections { detections: Vec<Detection2D> },
    Empty,
    Skipped { reason: String },
}

/// Result of one (view, prompt) query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCell {
    pub view_id: usize,
    pub prompt_id: String,
    #[serde(flatten)]
    pub outcome: CellOutcome,
}

/// A prompt as sent to the detector, with the id it is reported under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub text: String,
}

/// Queries every (prompt, view) pair with at most `max_in_flight` requests
/// outstanding. Failures become `Skipped` cells; a cache miss aborts, since
/// replay must never silently lose data. Cells come back sorted by prompt
/// order then view order whatever order the responses arrived in.
pub fn query_all(
    backend: &dyn DetectorBackend,
    views: &[RenderedView],
    prompts: &[Prompt],
    max_in_flight: usize,
) -> Result<Vec<QueryCell>> {
    use rayon::prelude::*;

    let jobs: Vec<(usize, usize)> = (0..prompts.len())
        .flat_map(|p| (0..views.len()).map(move |v| (p, v)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<Result<QueryCell>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, v)| {
                let (prompt, view) = (&prompts[p], &views[v]);
                let outcome = match query_points(backend, view, &prompt.id, &prompt.text) {
                    Ok(d) if d.is_empty() => CellOutcome::Empty,
                    Ok(detections) => CellOutcome::Detections { detections },
                    Err(e @ GatewayError::CacheMiss { .. }) => return Err(e),
                    Err(e) => {
                        log::warn!("view {} prompt {}: skipped: {e}", view.view_id, prompt.id);
                        CellOutcome::Skipped { reason: e.to_string() }
                    }
                };
                Ok(QueryCell {
                    view_id: view.view_id,
                    prompt_id: prompt.id.clone(),
                    outcome,
                })
            })
            .collect()
    });
    results.into_iter().collect()
}
