//! Fusing per-prompt lifted points into keypoints: the plain mean and
//! HDBSCAN with stability-ranked clusters.

mod hdbscan;

use std::collections::BTreeSet;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::backproject::LiftedPoint;
use crate::mesh::{SurfacePoint, TriangleMesh};

pub use hdbscan::{core_distance, hdbscan, lambda_of, mutual_reachability, Cluster, ClusterResult};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ClusterError {
    #[error("no points to cluster")]
    EmptyInput,
    #[error("invalid clustering parameters: {0}")]
    InvalidParams(String),
    #[error("k = {k} needs more than {n} points")]
    InsufficientPoints { k: usize, n: usize },
    #[error("point set is empty")]
    EmptySet,
    #[error("mesh is empty")]
    EmptyMesh,
}

pub type Result<T> = std::result::Result<T, ClusterError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    pub prompt_id: String,
    pub points: Vec<LiftedPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mean,
    #[default]
    Hdbscan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Keep {
    #[default]
    Best,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub anchor: SurfacePoint,
    pub stability: f64,
    /// Number of distinct views among the contributing points.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointPrediction {
    pub prompt_id: String,
    /// Sorted by descending stability.
    pub keypoints: Vec<Keypoint>,
    pub method: Method,
    /// HDBSCAN labeled everything as noise and the mean was used instead.
    pub degraded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HdbscanParams {
    pub k: usize,
    pub min_cluster_size: usize,
    pub keep: Keep,
}

impl HdbscanParams {
    pub fn for_views(views: usize) -> Self {
        Self {
            k: 3,
            min_cluster_size: default_min_cluster_size(views),
            keep: Keep::Best,
        }
    }
}

/// `max(3, ⌈views/8⌉)`.
pub fn default_min_cluster_size(views: usize) -> usize {
    views.div_ceil(8).max(3)
}

fn centroid<'a>(pts: impl Iterator<Item = &'a Point3<f64>>) -> Point3<f64> {
    let (sum, n) = pts.fold((Vector3::zeros(), 0usize), |(s, n), p| (s + p.coords, n + 1));
    Point3::from(sum / n as f64)
}

fn distinct_views<'a>(pts: impl Iterator<Item = &'a LiftedPoint>) -> usize {
    pts.map(|p| p.view_id).collect::<BTreeSet<_>>().len()
}

pub fn aggregate_mean(mesh: &TriangleMesh, set: &PointSet) -> Result<KeypointPrediction> {
    if set.points.is_empty() {
        return Err(ClusterError::EmptySet);
    }
    let mean = centroid(set.points.iter().map(|p| &p.position));
    let anchor = mesh.nearest_surface_point(&mean).ok_or(ClusterError::EmptyMesh)?;
    Ok(KeypointPrediction {
        prompt_id: set.prompt_id.clone(),
        keypoints: vec![Keypoint {
            anchor,
            stability: 1.0,
            support: distinct_views(set.points.iter()),
        }],
        method: Method::Mean,
        degraded: false,
    })
}

pub fn aggregate_hdbscan(mesh: &TriangleMesh, set: &PointSet, params: &HdbscanParams) -> Result<KeypointPrediction> {
    if set.points.is_empty() {
        return Err(ClusterError::EmptySet);
    }
    let positions: Vec<Point3<f64>> = set.points.iter().map(|p| p.position).collect();
    let result = hdbscan(&positions, params.k, params.min_cluster_size)?;
    if result.clusters.is_empty() {
        log::debug!("prompt {}: all {} points are noise, using the mean", set.prompt_id, positions.len());
        let mut fallback = aggregate_mean(mesh, set)?;
        fallback.method = Method::Hdbscan;
        fallback.degraded = true;
        return Ok(fallback);
    }
    let mut keypoints = result
        .clusters
        .iter()
        .map(|c| {
            let center = centroid(c.members.iter().map(|&i| &positions[i]));
            Ok(Keypoint {
                anchor: mesh.nearest_surface_point(&center).ok_or(ClusterError::EmptyMesh)?,
                stability: c.stability,
                support: distinct_views(c.members.iter().map(|&i| &set.points[i])),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    keypoints.sort_by(|a, b| b.stability.total_cmp(&a.stability));
    if params.keep == Keep::Best {
        keypoints.truncate(1);
    }
    Ok(KeypointPrediction {
        prompt_id: set.prompt_id.clone(),
        keypoints,
        method: Method::Hdbscan,
        degraded: false,
    })
}

pub fn aggregate(mesh: &TriangleMesh, set: &PointSet, method: Method, params: &HdbscanParams) -> Result<KeypointPrediction> {
    match method {
        Method::Mean => aggregate_mean(mesh, set),
        Method::Hdbscan => aggregate_hdbscan(mesh, set, params),
    }
}
