use std::io::Write;

use serde::Serialize;

use super::{run_on_mesh, PipelineError, PipelineSettings, PromptMode, Result, Stage};
use crate::cluster::Method;
use crate::eval::{compute_iou, EvalReport, GroundTruthSet};
use crate::gateway::{point_prompt, DetectorBackend, MockDetector, MockDetectorConfig, Prompt};
use crate::mesh::TriangleMesh;

/// One ablation axis and the values it takes; everything else stays fixed.
#[derive(Debug, Clone, PartialEq)]
pub enum AblationAxis {
    Views(Vec<usize>),
    Aggregation(Vec<Method>),
    PromptMode(Vec<PromptMode>),
    Patch(Vec<usize>),
}

impl AblationAxis {
    /// `name` is one of views, aggregation, prompt-mode, patch; `values` is
    /// comma-separated.
    pub fn parse(name: &str, values: &str) -> Result<Self> {
        let items: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if items.is_empty() {
            return Err(PipelineError::config(format!("no values for ablation axis {name}")));
        }
        let bad = |v: &str| PipelineError::config(format!("bad value {v:?} for ablation axis {name}"));
        let nums = || items.iter().map(|v| v.parse::<usize>().map_err(|_| bad(v))).collect::<Result<Vec<_>>>();
        Ok(match name {
            "views" => Self::Views(nums()?),
            "patch" => Self::Patch(nums()?),
            "aggregation" => Self::Aggregation(
                items
                    .iter()
                    .map(|v| match *v {
                        "mean" => Ok(Method::Mean),
                        "hdbscan" => Ok(Method::Hdbscan),
                        _ => Err(bad(v)),
                    })
                    .collect::<Result<_>>()?,
            ),
            "prompt-mode" | "prompt_mode" => Self::PromptMode(
                items
                    .iter()
                    .map(|v| match *v {
                        "per-point" => Ok(PromptMode::PerPoint),
                        "global" => Ok(PromptMode::Global),
                        _ => Err(bad(v)),
                    })
                    .collect::<Result<_>>()?,
            ),
            _ => return Err(PipelineError::config(format!("unknown ablation axis {name}"))),
        })
    }

    fn variants(&self, base: &PipelineSettings) -> Vec<(String, PipelineSettings)> {
        let with = |f: &dyn Fn(&mut PipelineSettings)| {
            let mut s = base.clone();
            f(&mut s);
            s
        };
        match self {
            Self::Views(v) => v.iter().map(|&n| (format!("views={n}"), with(&|s| s.views = n))).collect(),
            Self::Patch(v) => v.iter().map(|&h| (format!("patch={h}"), with(&|s| s.patch = h))).collect(),
            Self::Aggregation(v) => v
                .iter()
                .map(|&m| {
                    let name = match m {
                        Method::Mean => "mean",
                        Method::Hdbscan => "hdbscan",
                    };
                    (format!("aggregation={name}"), with(&|s| s.aggregation.method = m))
                })
                .collect(),
            Self::PromptMode(v) => v
                .iter()
                .map(|&m| {
                    let name = match m {
                        PromptMode::PerPoint => "per-point",
                        PromptMode::Global => "global",
                    };
                    (format!("prompt_mode={name}"), with(&|s| s.prompt_mode = m))
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationVariant {
    pub label: String,
    pub settings: PipelineSettings,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub variants: Vec<AblationVariant>,
}

#[derive(Serialize)]
struct AblationRow<'a> {
    variant: &'a str,
    threshold: f64,
    iou: f64,
    tp: usize,
    n_pred: usize,
    n_gt: usize,
}

impl AblationResult {
    /// `variant,threshold,iou,tp,n_pred,n_gt`, one row per variant and threshold.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for v in &self.variants {
            let r = &v.report;
            for (i, &threshold) in r.thresholds.iter().enumerate() {
                w.serialize(AblationRow {
                    variant: &v.label,
                    threshold,
                    iou: r.iou[i],
                    tp: r.tp[i],
                    n_pred: r.n_pred,
                    n_gt: r.n_gt,
                })
                .map_err(std::io::Error::other)?;
            }
        }
        w.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Runs the pipeline once per axis value and scores each run against `gt`.
/// In global mode all keypoints come back under one synthetic prompt and are
/// matched to the ground truth by distance alone.
pub fn run_ablation(
    mesh: &TriangleMesh,
    backend: &dyn DetectorBackend,
    prompts: &[Prompt],
    base: &PipelineSettings,
    axis: &AblationAxis,
    gt: &GroundTruthSet,
    thresholds: &[f64],
) -> Result<AblationResult> {
    let mut variants = Vec::new();
    for (label, settings) in axis.variants(base) {
        log::info!("ablation variant {label}");
        let out = run_on_mesh(mesh, backend, prompts, &settings)?;
        let mut report = compute_iou(mesh, &out.predictions, gt, thresholds).map_err(PipelineError::eval)?;
        report.metadata.aggregation = serde_json::to_value(settings.hdbscan_params()).ok();
        variants.push(AblationVariant { label, settings, report });
    }
    Ok(AblationResult { variants })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSweep {
    pub sigmas: Vec<f64>,
    pub outlier_rates: Vec<f64>,
    pub views: Vec<usize>,
}

/// Recovery statistics for one (sigma, outlier rate, views) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationCell {
    pub sigma: f64,
    pub outlier_rate: f64,
    pub views: usize,
    /// Geodesic error to the mock's keypoint, over recovered keypoints;
    /// infinite when nothing was recovered.
    pub mean_error: f64,
    pub p95_error: f64,
    pub miss_rate: f64,
    /// Some prompt fell back from clustering to the mean.
    pub degraded: bool,
    /// Pixel footprint at the camera distance, for scale.
    pub footprint: f64,
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::INFINITY;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Runs the mock detector over a sweep of noise levels and view counts and
/// measures how far each recovered keypoint lands from the mock's own.
pub fn simulate(
    mesh: &TriangleMesh,
    mock: &MockDetectorConfig,
    base: &PipelineSettings,
    sweep: &SimulationSweep,
) -> Result<Vec<SimulationCell>> {
    if mock.keypoints.is_empty() {
        return Err(PipelineError::config("mock spec defines no keypoints"));
    }
    let prompts: Vec<Prompt> = mock
        .keypoints
        .iter()
        .map(|k| Prompt {
            id: k.id.clone(),
            text: point_prompt(&k.name),
        })
        .collect();
    let mut cells = Vec::new();
    for &views in &sweep.views {
        for &outlier in &sweep.outlier_rates {
            for &sigma in &sweep.sigmas {
                let cfg = MockDetectorConfig {
                    sigma,
                    outlier,
                    ..mock.clone()
                };
                let det = MockDetector::new(cfg).map_err(|e| PipelineError::new(Stage::Config, e))?;
                let settings = PipelineSettings {
                    views,
                    prompt_mode: PromptMode::PerPoint,
                    ..base.clone()
                };
                let out = run_on_mesh(mesh, &det, &prompts, &settings)?;
                let mut errors: Vec<f64> = mock
                    .keypoints
                    .iter()
                    .zip(&out.predictions)
                    .filter_map(|(k, p)| p.keypoints.first().map(|best| mesh.geodesic_distance(&best.anchor, &k.anchor)))
                    .collect();
                errors.sort_by(f64::total_cmp);
                let n = mock.keypoints.len();
                let cam = &settings.cameras()?[0];
                cells.push(SimulationCell {
                    sigma,
                    outlier_rate: outlier,
                    views,
                    mean_error: if errors.is_empty() {
                        f64::INFINITY
                    } else {
                        errors.iter().sum::<f64>() / errors.len() as f64
                    },
                    p95_error: percentile(&errors, 0.95),
                    miss_rate: (n - errors.len()) as f64 / n as f64,
                    degraded: out.predictions.iter().any(|p| p.degraded),
                    footprint: cam.pixel_footprint(cam.distance()),
                });
            }
        }
    }
    Ok(cells)
}

/// `sigma,outlier_rate,views,mean_error,p95_error,miss_rate,degraded,footprint`.
pub fn write_simulation_csv<W: Write>(cells: &[SimulationCell], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in cells {
        w.serialize(c).map_err(std::io::Error::other)?;
    }
    w.flush()
}
