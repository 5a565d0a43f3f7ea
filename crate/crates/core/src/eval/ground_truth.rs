use std::collections::HashSet;
use std::path::Path;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::mesh::{Normalization, SurfacePoint, TriangleMesh};

/// Snap distance (normalized units) above which a warning is recorded.
pub const MISMATCH_WARN: f64 = 0.01;
/// Snap distance above which loading fails.
pub const MISMATCH_ERROR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtKeypoint {
    pub id: u32,
    pub anchor: SurfacePoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSet {
    pub model_id: String,
    pub category: String,
    pub keypoints: Vec<GtKeypoint>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Frame the file's `xyz` values are expressed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GtFrame {
    /// Already in the normalized mesh frame.
    Normalized,
    /// In the raw mesh frame; the transform maps them onto the normalized mesh.
    Original(Normalization),
}

#[derive(Deserialize)]
struct RawKeypoint {
    #[serde(alias = "semantic_id")]
    id: u32,
    #[serde(default)]
    xyz: Option<[f64; 3]>,
    #[serde(default)]
    vertex_index: Option<usize>,
}

#[derive(Deserialize)]
struct RawModel {
    model_id: String,
    #[serde(default, alias = "class_id")]
    category: String,
    keypoints: Vec<RawKeypoint>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawFile {
    Many(Vec<RawModel>),
    One(RawModel),
}

/// Parses ground truth for one model and snaps every keypoint onto `mesh`.
/// A file holding several models needs `model_id` to pick one.
pub fn parse_ground_truth(text: &str, mesh: &TriangleMesh, model_id: Option<&str>, frame: GtFrame) -> Result<GroundTruthSet> {
    let raw: RawFile = serde_json::from_str(text).map_err(|e| EvalError::Parse(e.to_string()))?;
    let model = match (raw, model_id) {
        (RawFile::One(m), None) => m,
        (RawFile::One(m), Some(id)) if m.model_id == id => m,
        (RawFile::Many(ms), Some(id)) => ms
            .into_iter()
            .find(|m| m.model_id == id)
            .ok_or_else(|| EvalError::Parse(format!("model {id} not in ground truth file")))?,
        (RawFile::Many(mut ms), None) if ms.len() == 1 => ms.remove(0),
        (RawFile::Many(_), None) => return Err(EvalError::Parse("several models in file; choose one by id".into())),
        (RawFile::One(m), Some(id)) => {
            return Err(EvalError::Parse(format!("file holds model {}, not {id}", m.model_id)))
        }
    };

    let mut seen = HashSet::new();
    let mut warnings = Vec::new();
    let mut keypoints = Vec::with_capacity(model.keypoints.len());
    for k in &model.keypoints {
        if !seen.insert(k.id) {
            return Err(EvalError::Parse(format!("duplicate keypoint id {}", k.id)));
        }
        let anchor = match (k.vertex_index, k.xyz) {
            (Some(v), _) => mesh
                .vertex_surface_point(v)
                .ok_or_else(|| EvalError::MeshMismatch(format!("keypoint {}: vertex {v} not on mesh", k.id)))?,
            (None, Some(xyz)) => {
                let p = match frame {
                    GtFrame::Normalized => Point3::from(xyz),
                    GtFrame::Original(n) => n.apply(&Point3::from(xyz)),
                };
                let anchor = mesh
                    .nearest_surface_point(&p)
                    .ok_or_else(|| EvalError::MeshMismatch("mesh is empty".into()))?;
                let snap = (anchor.position - p).norm();
                if snap > MISMATCH_ERROR {
                    return Err(EvalError::MeshMismatch(format!(
                        "keypoint {} lies {snap:.4} from the surface (limit {MISMATCH_ERROR})",
                        k.id
                    )));
                }
                if snap > MISMATCH_WARN {
                    let msg = format!("keypoint {} snapped {snap:.4} onto the surface", k.id);
                    log::warn!("{}: {msg}", model.model_id);
                    warnings.push(msg);
                }
                anchor
            }
            (None, None) => return Err(EvalError::Parse(format!("keypoint {} has neither xyz nor vertex_index", k.id))),
        };
        keypoints.push(GtKeypoint { id: k.id, anchor });
    }
    Ok(GroundTruthSet {
        model_id: model.model_id,
        category: model.category,
        keypoints,
        warnings,
    })
}

pub fn load_ground_truth(path: &Path, mesh: &TriangleMesh, model_id: Option<&str>, frame: GtFrame) -> Result<GroundTruthSet> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Parse(format!("{}: {e}", path.display())))?;
    parse_ground_truth(&text, mesh, model_id, frame)
}
