use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::gateway::{majority_label, point_prompt, DetectorBackend, NamerBackend, Prompt, DESCRIBE_MARKER_PROMPT};
use crate::mesh::{SurfacePoint, TriangleMesh};
use crate::pipeline::{detect_on_views, render_views, PipelineError, PipelineSettings, PromptMode};
use crate::render::{render_with_marker, ShadeStyle};

const ROUNDTRIP_PROMPT_ID: &str = "roundtrip";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoundtripConfig {
    pub settings: PipelineSettings,
    pub marker_radius_px: f64,
    /// How many marker-visible views the namer is asked about.
    pub namer_views: usize,
    pub category: Option<String>,
}

impl Default for RoundtripConfig {
    fn default() -> Self {
        Self {
            settings: PipelineSettings::default(),
            marker_radius_px: 4.0,
            namer_views: 4,
            category: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundtripResult {
    pub label: String,
    pub predicted: Option<SurfacePoint>,
    /// Euclidean distance from the marked point; infinite when nothing was found.
    pub error: f64,
    /// Views the namer was shown.
    pub named_in: Vec<usize>,
}

/// Names a marked point, then finds it again from that name alone.
pub fn describability_roundtrip(
    mesh: &TriangleMesh,
    p: &SurfacePoint,
    namer: &dyn NamerBackend,
    detector: &dyn DetectorBackend,
    config: &RoundtripConfig,
) -> Result<RoundtripResult> {
    let settings = PipelineSettings {
        prompt_mode: PromptMode::PerPoint,
        ..config.settings.clone()
    };
    settings.validate().map_err(Box::new)?;
    let cameras = settings.cameras().map_err(Box::new)?;
    let style = ShadeStyle::default();

    let marked: Vec<_> = cameras
        .iter()
        .enumerate()
        .map(|(i, cam)| render_with_marker(mesh, cam, &style, i, p, config.marker_radius_px))
        .filter(|m| m.visible)
        .take(config.namer_views.max(1))
        .collect();
    if marked.is_empty() {
        return Err(EvalError::MarkerInvisible);
    }
    let mut answers = Vec::new();
    for m in &marked {
        let names = namer.describe(&m.view, DESCRIBE_MARKER_PROMPT, config.category.as_deref())?;
        if let Some(first) = names.into_iter().map(|n| n.trim().to_string()).find(|n| !n.is_empty()) {
            answers.push(first);
        }
    }
    let label = majority_label(&answers).ok_or(EvalError::NoLabel)?;
    log::debug!("round trip label {label:?} from {} answers", answers.len());

    let views = render_views(mesh, &cameras, &style);
    let prompts = [Prompt {
        id: ROUNDTRIP_PROMPT_ID.into(),
        text: point_prompt(&label),
    }];
    let out = detect_on_views(mesh, &views, detector, &prompts, &settings).map_err(|e: PipelineError| Box::new(e))?;
    let predicted = out.predictions[0].keypoints.first().map(|k| k.anchor);
    let error = predicted.map_or(f64::INFINITY, |q| (q.position - p.position).norm());
    Ok(RoundtripResult {
        label,
        predicted,
        error,
        named_in: marked.iter().map(|m| m.view.view_id).collect(),
    })
}

/// Fraction of round trips with error below each threshold.
pub fn saliency_curve(errors: &[f64], thresholds: &[f64]) -> Vec<(f64, f64)> {
    thresholds
        .iter()
        .map(|&t| {
            let hit = errors.iter().filter(|&&e| e < t).count();
            let frac = if errors.is_empty() { 0.0 } else { hit as f64 / errors.len() as f64 };
            (t, frac)
        })
        .collect()
}
