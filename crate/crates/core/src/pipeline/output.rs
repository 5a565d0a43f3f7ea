use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{run_on_mesh, ErrorSource, LiftStats, PipelineError, Result, RunConfig, RunOutput, Stage};
use crate::cluster::{Keypoint, KeypointPrediction, Method};
use crate::eval::EvalError;
use crate::gateway::{CellOutcome, GatewayError, Prompt, QueryCell};
use crate::mesh::{Normalization, TriangleMesh};
use crate::render::{render_with_marker, ShadeStyle};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointRecord {
    pub xyz: [f64; 3],
    pub face: usize,
    pub barycentric: [f64; 3],
    pub stability: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub text: String,
    pub method: Method,
    pub degraded: bool,
    pub keypoints: Vec<KeypointRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub convention: String,
    pub center: [f64; 3],
    pub scale: f64,
}

/// The predictions JSON. Holds nothing run-specific beyond the inputs, so
/// identical runs give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionsFile {
    pub schema_version: u32,
    pub model_id: String,
    pub normalization: NormalizationRecord,
    pub prompts: Vec<PromptRecord>,
}

impl PredictionsFile {
    pub fn new(model_id: &str, norm: &Normalization, prompts: &[Prompt], predictions: &[KeypointPrediction]) -> Self {
        let text_of = |id: &str| prompts.iter().find(|p| p.id == id).map(|p| p.text.clone()).unwrap_or_default();
        Self {
            schema_version: SCHEMA_VERSION,
            model_id: model_id.to_string(),
            normalization: NormalizationRecord {
                convention: Normalization::CONVENTION.to_string(),
                center: norm.center,
                scale: norm.scale,
            },
            prompts: predictions
                .iter()
                .map(|p| PromptRecord {
                    id: p.prompt_id.clone(),
                    text: text_of(&p.prompt_id),
                    method: p.method,
                    degraded: p.degraded,
                    keypoints: p
                        .keypoints
                        .iter()
                        .map(|k| KeypointRecord {
                            xyz: k.anchor.position.coords.into(),
                            face: k.anchor.face,
                            barycentric: k.anchor.barycentric,
                            stability: k.stability,
                            support: k.support,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("predictions serialize");
        s.push('\n');
        s
    }

    /// Rebuilds anchors on `mesh` from face and barycentrics; the stored xyz
    /// must agree within 1e-6.
    pub fn to_predictions(&self, mesh: &TriangleMesh) -> std::result::Result<Vec<KeypointPrediction>, EvalError> {
        self.prompts
            .iter()
            .map(|p| {
                let keypoints = p
                    .keypoints
                    .iter()
                    .map(|k| {
                        let bad = |why: String| EvalError::MeshMismatch(format!("prompt {}: {why}", p.id));
                        if k.face >= mesh.face_count() {
                            return Err(bad(format!("face {} not on mesh", k.face)));
                        }
                        let anchor = mesh.surface_point(k.face, k.barycentric).map_err(|e| bad(e.to_string()))?;
                        let off = (anchor.position.coords - nalgebra::Vector3::from(k.xyz)).norm();
                        if off > 1e-6 {
                            return Err(bad(format!("stored xyz is {off:.3e} from its face point")));
                        }
                        Ok(Keypoint {
                            anchor,
                            stability: k.stability,
                            support: k.support,
                        })
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                Ok(KeypointPrediction {
                    prompt_id: p.id.clone(),
                    keypoints,
                    method: p.method,
                    degraded: p.degraded,
                })
            })
            .collect()
    }
}

pub fn load_predictions(
    path: &Path,
    mesh: &TriangleMesh,
) -> std::result::Result<(PredictionsFile, Vec<KeypointPrediction>), EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Parse(format!("{}: {e}", path.display())))?;
    let file: PredictionsFile = serde_json::from_str(&text).map_err(|e| EvalError::Parse(e.to_string()))?;
    let preds = file.to_predictions(mesh)?;
    Ok((file, preds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub view_id: usize,
    pub prompt_id: String,
    /// `detections`, `empty` or `skipped`.
    pub outcome: String,
    pub points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct OutcomeCounts {
    pub cells: usize,
    pub detections: usize,
    pub empty: usize,
    pub skipped: usize,
    /// Fraction of cells without any detection.
    pub miss_rate: f64,
    pub all_missed: bool,
}

impl OutcomeCounts {
    pub fn from_cells(cells: &[QueryCell]) -> Self {
        let mut c = OutcomeCounts {
            cells: cells.len(),
            ..Default::default()
        };
        for cell in cells {
            match cell.outcome {
                CellOutcome::Detections { .. } => c.detections += 1,
                CellOutcome::Empty => c.empty += 1,
                CellOutcome::Skipped { .. } => c.skipped += 1,
            }
        }
        let missed = c.empty + c.skipped;
        c.miss_rate = if c.cells == 0 { 0.0 } else { missed as f64 / c.cells as f64 };
        c.all_missed = missed == c.cells;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub model_id: String,
    pub config: RunConfig,
    pub timings_ms: BTreeMap<String, f64>,
    pub counts: OutcomeCounts,
    pub cells: Vec<CellSummary>,
    pub lift: LiftStats,
    pub inputs: BTreeMap<String, FileDigest>,
    pub outputs: BTreeMap<String, FileDigest>,
}

fn digest(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::new(Stage::Write, e))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn summarize(cells: &[QueryCell]) -> Vec<CellSummary> {
    cells
        .iter()
        .map(|c| {
            let (outcome, points, reason) = match &c.outcome {
                CellOutcome::Detections { detections } => ("detections", detections.len(), None),
                CellOutcome::Empty => ("empty", 0, None),
                CellOutcome::Skipped { reason } => ("skipped", 0, Some(reason.clone())),
            };
            CellSummary {
                view_id: c.view_id,
                prompt_id: c.prompt_id.clone(),
                outcome: outcome.into(),
                points,
                reason,
            }
        })
        .collect()
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| PipelineError::new(Stage::Write, e))
}

/// Marker overlays: each keypoint drawn in the first view that sees it.
fn write_overlays(
    dir: &Path,
    mesh: &TriangleMesh,
    config: &RunConfig,
    predictions: &[KeypointPrediction],
) -> Result<Vec<PathBuf>> {
    let cameras = config.settings.cameras()?;
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::new(Stage::Write, e))?;
    let mut written = Vec::new();
    for p in predictions {
        for (k, kp) in p.keypoints.iter().enumerate() {
            let hit = cameras.iter().enumerate().find_map(|(i, cam)| {
                let m = render_with_marker(mesh, cam, &ShadeStyle::default(), i, &kp.anchor, 4.0);
                m.visible.then_some(m.view)
            });
            if let Some(view) = hit {
                let path = dir.join(format!("{}_{k}.png", file_safe(&p.prompt_id)));
                write(&path, view.png_bytes())?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// Runs a config end to end and writes `predictions.json`, `manifest.json`
/// and optional overlays into the output directory.
pub fn run_pipeline(config: &RunConfig) -> Result<(Vec<KeypointPrediction>, RunManifest)> {
    config.validate()?;
    let t0 = Instant::now();
    let (mesh, norm) = config.load_mesh()?;
    let load_ms = t0.elapsed().as_secs_f64() * 1e3;
    let detector = config.build_detector(&mesh)?;
    let prompts = config.resolve_prompts(&mesh)?;
    if prompts.is_empty() {
        return Err(PipelineError::config("no prompts to run"));
    }
    let RunOutput {
        predictions,
        prompts,
        cells,
        lift,
        timings,
    } = run_on_mesh(&mesh, detector.as_ref(), &prompts, &config.settings)?;

    let out_dir = &config.output_dir;
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::new(Stage::Write, e))?;
    let model_id = config.model_id();
    let pred_path = out_dir.join("predictions.json");
    write(&pred_path, PredictionsFile::new(&model_id, &norm, &prompts, &predictions).to_json().as_bytes())?;

    let mut outputs = BTreeMap::new();
    outputs.insert("predictions".to_string(), digest(&pred_path)?);
    if config.overlays {
        for path in write_overlays(&out_dir.join("overlays"), &mesh, config, &predictions)? {
            let name = format!("overlay/{}", path.file_name().unwrap_or_default().to_string_lossy());
            outputs.insert(name, digest(&path)?);
        }
    }
    let mut inputs = BTreeMap::new();
    for (name, path) in config.input_files() {
        inputs.insert(name, digest(&path)?);
    }
    let counts = OutcomeCounts::from_cells(&cells);
    if counts.all_missed {
        log::warn!("detector returned nothing for all {} cells", counts.cells);
    }
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        model_id,
        config: config.clone(),
        timings_ms: BTreeMap::from([
            ("load".to_string(), load_ms),
            ("render".to_string(), timings.render_ms),
            ("detect_lift_aggregate".to_string(), timings.detect_ms),
        ]),
        counts,
        cells: summarize(&cells),
        lift,
        inputs,
        outputs,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&out_dir.join("manifest.json"), json.as_bytes())?;
    // Single failures are skipped, but a backend that answered nothing at all
    // is a failed run. The manifest above still records every reason.
    if manifest.counts.cells > 0 && manifest.counts.skipped == manifest.counts.cells {
        let first = manifest.cells.iter().find_map(|c| c.reason.clone()).unwrap_or_default();
        return Err(PipelineError::new(
            Stage::Detect,
            ErrorSource::Gateway(GatewayError::EndpointUnreachable(format!(
                "all {} detector queries failed; first: {first}",
                manifest.counts.cells
            ))),
        ));
    }
    Ok((predictions, manifest))
}
