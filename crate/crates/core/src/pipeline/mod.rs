//! End-to-end orchestration: render, query, lift, aggregate. Also the
//! file-level entry points behind the command-line tool.

mod config;
mod experiments;
mod output;

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backproject::{lift_detection, BackprojectError, LiftedPoint};
use crate::cluster::{aggregate, ClusterError, HdbscanParams, Keep, KeypointPrediction, Method, PointSet};
use crate::eval::EvalError;
use crate::gateway::{query_all, CellOutcome, DetectorBackend, GatewayError, Prompt, QueryCell, GLOBAL_PROMPT};
use crate::mesh::{MeshError, TriangleMesh};
use crate::render::{self, render, Camera, RenderError, RenderedView, ShadeStyle};

pub use config::{DetectorSpec, PromptSource, RunConfig};
pub use experiments::{
    run_ablation, simulate, write_simulation_csv, AblationAxis, AblationResult, AblationVariant, SimulationCell,
    SimulationSweep,
};
pub use output::{
    load_predictions, run_pipeline, CellSummary, OutcomeCounts, PredictionsFile, RunManifest, SCHEMA_VERSION,
};

/// Prompt id under which global-mode detections are grouped.
pub const GLOBAL_PROMPT_ID: &str = "global";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Config,
    Load,
    Render,
    Prompts,
    Detect,
    Lift,
    Aggregate,
    Evaluate,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Render => "render",
            Stage::Prompts => "prompts",
            Stage::Detect => "detect",
            Stage::Lift => "lift",
            Stage::Aggregate => "aggregate",
            Stage::Evaluate => "evaluate",
            Stage::Write => "write",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ErrorSource {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Backproject(#[from] BackprojectError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Eval(Box<EvalError>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An error with the stage, view and prompt it happened in.
#[derive(Debug, thiserror::Error)]
pub struct PipelineError {
    pub stage: Stage,
    pub view: Option<usize>,
    pub prompt: Option<String>,
    #[source]
    pub source: ErrorSource,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage", self.stage)?;
        if let Some(v) = self.view {
            write!(f, ", view {v}")?;
        }
        if let Some(p) = &self.prompt {
            write!(f, ", prompt {p}")?;
        }
        write!(f, ": {}", self.source)
    }
}

impl PipelineError {
    pub fn new(stage: Stage, source: impl Into<ErrorSource>) -> Self {
        Self {
            stage,
            view: None,
            prompt: None,
            source: source.into(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self::new(Stage::Config, ErrorSource::Config(msg.into()))
    }

    pub fn eval(e: EvalError) -> Self {
        Self::new(Stage::Evaluate, ErrorSource::Eval(Box::new(e)))
    }

    pub fn at_view(mut self, view: usize) -> Self {
        self.view = Some(view);
        self
    }

    pub fn at_prompt(mut self, prompt: &str) -> Self {
        self.prompt = Some(prompt.to_string());
        self
    }

    /// 2 for bad configuration or inputs, 3 for backend failure, 4 for a
    /// ground-truth/mesh mismatch, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match &self.source {
            ErrorSource::Config(_) | ErrorSource::Mesh(_) | ErrorSource::Render(_) => 2,
            ErrorSource::Gateway(GatewayError::Catalog(_) | GatewayError::MockConfig(_)) => 2,
            ErrorSource::Gateway(_) => 3,
            ErrorSource::Eval(e) => match e.as_ref() {
                EvalError::MeshMismatch(_) => 4,
                EvalError::Gateway(_) => 3,
                EvalError::Pipeline(p) => p.exit_code(),
                _ => 2,
            },
            ErrorSource::Backproject(_) | ErrorSource::Cluster(_) => 2,
            ErrorSource::Io(_) => 1,
        }
    }
}

impl From<EvalError> for ErrorSource {
    fn from(e: EvalError) -> Self {
        ErrorSource::Eval(Box::new(e))
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    /// One prompt per keypoint name.
    #[default]
    PerPoint,
    /// A single "all salient points" prompt per view.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationSettings {
    pub method: Method,
    pub k: usize,
    /// `None` means `max(3, ⌈views/8⌉)`.
    pub min_cluster_size: Option<usize>,
    pub keep: Keep,
}

impl Default for AggregationSettings {
    fn default() -> Self {
        Self {
            method: Method::Hdbscan,
            k: 3,
            min_cluster_size: None,
            keep: Keep::Best,
        }
    }
}

/// Everything that shapes a run apart from the inputs themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub views: usize,
    pub image_size: u32,
    pub distance: f64,
    pub fov_deg: f64,
    /// Back-projection window size h (odd).
    pub patch: usize,
    pub max_in_flight: usize,
    pub prompt_mode: PromptMode,
    pub aggregation: AggregationSettings,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            views: 26,
            image_size: render::DEFAULT_IMAGE_SIZE,
            distance: render::DEFAULT_DISTANCE,
            fov_deg: render::DEFAULT_FOV_DEG,
            patch: 5,
            max_in_flight: 8,
            prompt_mode: PromptMode::PerPoint,
            aggregation: AggregationSettings::default(),
        }
    }
}

impl PipelineSettings {
    pub fn validate(&self) -> Result<()> {
        if self.views == 0 {
            return Err(PipelineError::config("views must be at least 1"));
        }
        if self.patch == 0 || self.patch % 2 == 0 {
            return Err(PipelineError::config(format!("patch size must be odd, got {}", self.patch)));
        }
        if self.max_in_flight == 0 {
            return Err(PipelineError::config("max_in_flight must be at least 1"));
        }
        if self.aggregation.k == 0 || self.aggregation.min_cluster_size.is_some_and(|m| m < 2) {
            return Err(PipelineError::config("need k >= 1 and min_cluster_size >= 2"));
        }
        Ok(())
    }

    /// Clustering parameters. Global mode keeps every cluster, since one
    /// prompt then stands for all keypoints.
    pub fn hdbscan_params(&self) -> HdbscanParams {
        let a = &self.aggregation;
        HdbscanParams {
            k: a.k,
            min_cluster_size: a.min_cluster_size.unwrap_or_else(|| crate::cluster::default_min_cluster_size(self.views)),
            keep: match self.prompt_mode {
                PromptMode::Global => Keep::All,
                PromptMode::PerPoint => a.keep,
            },
        }
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        render::generate_views(self.views, self.distance, self.image_size, self.fov_deg)
            .map_err(|e| PipelineError::new(Stage::Config, e))
    }

    /// The prompts actually sent: the given ones, or the single global prompt.
    pub fn effective_prompts(&self, prompts: &[Prompt]) -> Vec<Prompt> {
        match self.prompt_mode {
            PromptMode::PerPoint => prompts.to_vec(),
            PromptMode::Global => vec![Prompt {
                id: GLOBAL_PROMPT_ID.into(),
                text: GLOBAL_PROMPT.into(),
            }],
        }
    }
}

pub fn render_views(mesh: &TriangleMesh, cameras: &[Camera], style: &ShadeStyle) -> Vec<RenderedView> {
    cameras
        .par_iter()
        .enumerate()
        .map(|(i, cam)| render(mesh, cam, style, i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LiftStats {
    pub detections: usize,
    pub lifted: usize,
    /// Detections whose window held no surface pixel.
    pub background: usize,
}

#[derive(Debug, Clone)]
pub struct DetectOutput {
    /// One record per prompt, in prompt order.
    pub predictions: Vec<KeypointPrediction>,
    /// One cell per (prompt, view).
    pub cells: Vec<QueryCell>,
    pub lift: LiftStats,
}

/// Queries every prompt in every view, lifts the detections and aggregates
/// per prompt. Prompts without any lifted point get an empty record.
pub fn detect_on_views(
    mesh: &TriangleMesh,
    views: &[RenderedView],
    backend: &dyn DetectorBackend,
    prompts: &[Prompt],
    settings: &PipelineSettings,
) -> Result<DetectOutput> {
    let cells = query_all(backend, views, prompts, settings.max_in_flight).map_err(|e| {
        let err = PipelineError::new(Stage::Detect, ErrorSource::Gateway(e));
        match &err.source {
            ErrorSource::Gateway(GatewayError::CacheMiss { prompt, .. }) => {
                let p = prompt.clone();
                err.at_prompt(&p)
            }
            _ => err,
        }
    })?;

    let detections: Vec<_> = cells
        .iter()
        .filter_map(|c| match &c.outcome {
            CellOutcome::Detections { detections } => Some(detections.iter()),
            _ => None,
        })
        .flatten()
        .collect();
    let lifted: Vec<Option<LiftedPoint>> = detections
        .par_iter()
        .map(|d| {
            lift_detection(mesh, &views[d.view_id], d, settings.patch).map_err(|e| {
                PipelineError::new(Stage::Lift, e)
                    .at_view(d.view_id)
                    .at_prompt(&d.prompt_id)
            })
        })
        .collect::<Result<_>>()?;
    let stats = LiftStats {
        detections: detections.len(),
        lifted: lifted.iter().flatten().count(),
        background: lifted.iter().filter(|l| l.is_none()).count(),
    };

    let mut groups: BTreeMap<String, Vec<LiftedPoint>> = BTreeMap::new();
    for p in lifted.into_iter().flatten() {
        groups.entry(p.prompt_id.clone()).or_default().push(p);
    }
    let params = settings.hdbscan_params();
    let method = settings.aggregation.method;
    let predictions = prompts
        .par_iter()
        .map(|prompt| match groups.get(&prompt.id) {
            Some(points) if !points.is_empty() => {
                let set = PointSet {
                    prompt_id: prompt.id.clone(),
                    points: points.clone(),
                };
                aggregate(mesh, &set, method, &params)
                    .map_err(|e| PipelineError::new(Stage::Aggregate, e).at_prompt(&prompt.id))
            }
            _ => Ok(KeypointPrediction {
                prompt_id: prompt.id.clone(),
                keypoints: Vec::new(),
                method,
                degraded: false,
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectOutput {
        predictions,
        cells,
        lift: stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Timings {
    pub render_ms: f64,
    pub detect_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub predictions: Vec<KeypointPrediction>,
    pub prompts: Vec<Prompt>,
    pub cells: Vec<QueryCell>,
    pub lift: LiftStats,
    pub timings: Timings,
}

/// The whole pipeline on an already normalized mesh.
pub fn run_on_mesh(
    mesh: &TriangleMesh,
    backend: &dyn DetectorBackend,
    prompts: &[Prompt],
    settings: &PipelineSettings,
) -> Result<RunOutput> {
    settings.validate()?;
    let cameras = settings.cameras()?;
    let t0 = Instant::now();
    let views = render_views(mesh, &cameras, &ShadeStyle::default());
    let render_ms = t0.elapsed().as_secs_f64() * 1e3;
    let prompts = settings.effective_prompts(prompts);
    let t1 = Instant::now();
    let out = detect_on_views(mesh, &views, backend, &prompts, settings)?;
    Ok(RunOutput {
        predictions: out.predictions,
        prompts,
        cells: out.cells,
        lift: out.lift,
        timings: Timings {
            render_ms,
            detect_ms: t1.elapsed().as_secs_f64() * 1e3,
        },
    })
}
