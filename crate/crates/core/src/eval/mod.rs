//! Geodesic IoU scoring and the describability round trip.

mod ground_truth;
mod roundtrip;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::KeypointPrediction;
use crate::mesh::{Normalization, SurfacePoint, TriangleMesh};

pub use ground_truth::{load_ground_truth, parse_ground_truth, GroundTruthSet, GtFrame, GtKeypoint, MISMATCH_ERROR, MISMATCH_WARN};
pub use roundtrip::{describability_roundtrip, saliency_curve, RoundtripConfig, RoundtripResult};

/// The threshold grid of the benchmark table: 0.001, then 0.01 to 0.10.
pub const TABLE_THRESHOLDS: [f64; 11] = [0.001, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10];

pub const MATCHING_RULE: &str = "one-to-one greedy in ascending geodesic distance, strict d < threshold";
pub const IOU_FORMULA: &str = "TP / (|pred| + |gt| - TP), counts summed over models";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("ground truth has no keypoints")]
    EmptyGroundTruth,
    #[error("ground truth does not fit the mesh: {0}")]
    MeshMismatch(String),
    #[error("ground truth parse error: {0}")]
    Parse(String),
    #[error("thresholds must be finite, positive and strictly ascending")]
    InvalidThresholds,
    #[error("marker is not visible in any view")]
    MarkerInvisible,
    #[error("namer returned no usable label")]
    NoLabel,
    #[error(transparent)]
    Gateway(#[from] crate::gateway::GatewayError),
    #[error(transparent)]
    Pipeline(#[from] Box<crate::pipeline::PipelineError>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalOptions {
    /// Leave out predictions whose clustering fell back to the mean.
    pub exclude_degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBreakdown {
    pub model_id: String,
    pub iou: Vec<f64>,
    pub tp: Vec<usize>,
    pub n_pred: usize,
    pub n_gt: usize,
    pub mean_edge_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetadata {
    pub normalization: String,
    pub matching: String,
    pub iou_formula: String,
    pub mean_edge_length: f64,
    pub exclude_degraded: bool,
    #[serde(default)]
    pub aggregation: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub iou: Vec<f64>,
    pub tp: Vec<usize>,
    pub n_pred: usize,
    pub n_gt: usize,
    pub models: Vec<ModelBreakdown>,
    pub metadata: EvalMetadata,
}

/// One model's inputs to [`evaluate_models`].
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub mesh: &'a TriangleMesh,
    pub predictions: &'a [KeypointPrediction],
    pub gt: &'a GroundTruthSet,
}

fn check_thresholds(t: &[f64]) -> Result<()> {
    if t.is_empty() || t.iter().any(|x| !x.is_finite() || *x <= 0.0) || t.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::InvalidThresholds);
    }
    Ok(())
}

/// Greedy one-to-one matching on a precomputed distance table: pairs with
/// `d < tau` taken in ascending (distance, pred, gt) order.
pub fn greedy_match_count(dist: &[Vec<f64>], tau: f64) -> usize {
    let mut pairs: Vec<(f64, usize, usize)> = dist
        .iter()
        .enumerate()
        .flat_map(|(p, row)| row.iter().enumerate().map(move |(g, &d)| (d, p, g)))
        .filter(|&(d, _, _)| d < tau)
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let n_gt = dist.first().map_or(0, |r| r.len());
    let mut used_p = vec![false; dist.len()];
    let mut used_g = vec![false; n_gt];
    let mut tp = 0;
    for (_, p, g) in pairs {
        if !used_p[p] && !used_g[g] {
            used_p[p] = true;
            used_g[g] = true;
            tp += 1;
        }
    }
    tp
}

pub fn iou(tp: usize, n_pred: usize, n_gt: usize) -> f64 {
    let union = n_pred + n_gt - tp;
    if union == 0 {
        0.0
    } else {
        tp as f64 / union as f64
    }
}

fn predicted_points(predictions: &[KeypointPrediction], opts: &EvalOptions) -> Vec<SurfacePoint> {
    predictions
        .iter()
        .filter(|p| !(opts.exclude_degraded && p.degraded))
        .flat_map(|p| p.keypoints.iter().map(|k| k.anchor))
        .collect()
}

fn evaluate_one(input: &ModelInput, thresholds: &[f64], opts: &EvalOptions) -> Result<ModelBreakdown> {
    let gt = input.gt;
    if gt.keypoints.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    for k in &gt.keypoints {
        input
            .mesh
            .validate_surface_point(&k.anchor, 1e-6)
            .map_err(|e| EvalError::MeshMismatch(format!("{}: keypoint {}: {e}", gt.model_id, k.id)))?;
    }
    let preds = predicted_points(input.predictions, opts);
    for p in &preds {
        input
            .mesh
            .validate_surface_point(p, 1e-6)
            .map_err(|e| EvalError::MeshMismatch(format!("{}: prediction: {e}", gt.model_id)))?;
    }
    let dist: Vec<Vec<f64>> = preds
        .par_iter()
        .map(|p| gt.keypoints.iter().map(|g| input.mesh.geodesic_distance(p, &g.anchor)).collect())
        .collect();
    let tp: Vec<usize> = thresholds.iter().map(|&t| greedy_match_count(&dist, t)).collect();
    Ok(ModelBreakdown {
        model_id: gt.model_id.clone(),
        iou: tp.iter().map(|&t| iou(t, preds.len(), gt.keypoints.len())).collect(),
        tp,
        n_pred: preds.len(),
        n_gt: gt.keypoints.len(),
        mean_edge_length: input.mesh.mean_edge_length(),
    })
}

/// IoU per threshold for a single model.
pub fn compute_iou(
    mesh: &TriangleMesh,
    predictions: &[KeypointPrediction],
    gt: &GroundTruthSet,
    thresholds: &[f64],
) -> Result<EvalReport> {
    evaluate_models(&[ModelInput { mesh, predictions, gt }], thresholds, &EvalOptions::default())
}

/// Evaluates models in parallel and sums TP, |pred| and |gt| over them
/// before taking the ratio.
pub fn evaluate_models(inputs: &[ModelInput], thresholds: &[f64], opts: &EvalOptions) -> Result<EvalReport> {
    check_thresholds(thresholds)?;
    if inputs.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    let models = inputs
        .par_iter()
        .map(|m| evaluate_one(m, thresholds, opts))
        .collect::<Result<Vec<_>>>()?;
    let n_pred = models.iter().map(|m| m.n_pred).sum();
    let n_gt = models.iter().map(|m| m.n_gt).sum();
    let tp: Vec<usize> = (0..thresholds.len()).map(|i| models.iter().map(|m| m.tp[i]).sum()).collect();
    let mean_edge_length = models.iter().map(|m| m.mean_edge_length).sum::<f64>() / models.len() as f64;
    Ok(EvalReport {
        thresholds: thresholds.to_vec(),
        iou: tp.iter().map(|&t| iou(t, n_pred, n_gt)).collect(),
        tp,
        n_pred,
        n_gt,
        models,
        metadata: EvalMetadata {
            normalization: Normalization::CONVENTION.to_string(),
            matching: MATCHING_RULE.to_string(),
            iou_formula: IOU_FORMULA.to_string(),
            mean_edge_length,
            exclude_degraded: opts.exclude_degraded,
            aggregation: None,
        },
    })
}

#[derive(Serialize)]
struct CsvRow {
    threshold: f64,
    iou: f64,
    tp: usize,
    n_pred: usize,
    n_gt: usize,
}

impl EvalReport {
    /// One row per threshold: `threshold,iou,tp,n_pred,n_gt`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for (i, &threshold) in self.thresholds.iter().enumerate() {
            w.serialize(CsvRow {
                threshold,
                iou: self.iou[i],
                tp: self.tp[i],
                n_pred: self.n_pred,
                n_gt: self.n_gt,
            })
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{Keypoint, Method};
    use crate::mesh::primitives;
    use nalgebra::Point3;
    use proptest::prelude::*;

    fn plane() -> TriangleMesh {
        // fine grid so edge-graph geodesics on the plane are close to Euclidean
        let n = 40;
        let mut v = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                v.push(Point3::new(-1.0 + 2.0 * i as f64 / n as f64, -1.0 + 2.0 * j as f64 / n as f64, 0.0));
            }
        }
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut f = Vec::new();
        for j in 0..n {
            for i in 0..n {
                f.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                f.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
        TriangleMesh::new(v, f).unwrap()
    }

    fn at(mesh: &TriangleMesh, x: f64, y: f64) -> SurfacePoint {
        mesh.nearest_surface_point(&Point3::new(x, y, 0.0)).unwrap()
    }

    fn preds(points: &[SurfacePoint]) -> Vec<KeypointPrediction> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| KeypointPrediction {
                prompt_id: i.to_string(),
                keypoints: vec![Keypoint { anchor: *p, stability: 1.0, support: 1 }],
                method: Method::Hdbscan,
                degraded: false,
            })
            .collect()
    }

    fn gt(points: &[SurfacePoint]) -> GroundTruthSet {
        GroundTruthSet {
            model_id: "m".into(),
            category: "c".into(),
            keypoints: points
                .iter()
                .enumerate()
                .map(|(i, p)| GtKeypoint { id: i as u32, anchor: *p })
                .collect(),
            warnings: vec![],
        }
    }

    #[test]
    fn identical_sets_score_one() {
        let m = plane();
        let pts: Vec<_> = [(0.0, 0.0), (0.5, 0.5), (-0.5, 0.2), (0.7, -0.7), (-0.9, -0.1)]
            .iter()
            .map(|&(x, y)| at(&m, x, y))
            .collect();
        let r = compute_iou(&m, &preds(&pts), &gt(&pts), &TABLE_THRESHOLDS).unwrap();
        assert!(r.iou.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn three_pred_four_gt_two_matches() {
        let m = plane();
        let g: Vec<_> = [(-0.8, -0.8), (0.8, -0.8), (0.8, 0.8), (-0.8, 0.8)].iter().map(|&(x, y)| at(&m, x, y)).collect();
        // two predictions 0.02 from a gt, one far from everything
        let p = vec![at(&m, -0.78, -0.8), at(&m, 0.8, -0.78), at(&m, 0.0, 0.0)];
        // brute-force pairing: count gts within 0.1 of each pred
        let close: usize = p
            .iter()
            .filter(|pp| g.iter().any(|gg| m.geodesic_distance(pp, gg) < 0.1))
            .count();
        assert_eq!(close, 2);
        let r = compute_iou(&m, &preds(&p), &gt(&g), &[0.1]).unwrap();
        assert_eq!(r.tp, [2]);
        assert_eq!(r.iou, [0.4]);
    }

    #[test]
    fn far_predictions_score_zero() {
        let m = plane();
        let r = compute_iou(&m, &preds(&[at(&m, 0.9, 0.9)]), &gt(&[at(&m, -0.9, -0.9)]), &TABLE_THRESHOLDS).unwrap();
        assert!(r.iou.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn errors() {
        let m = plane();
        let p = preds(&[at(&m, 0.0, 0.0)]);
        assert!(matches!(compute_iou(&m, &p, &gt(&[]), &[0.1]), Err(EvalError::EmptyGroundTruth)));
        assert!(matches!(
            compute_iou(&m, &p, &gt(&[at(&m, 0.0, 0.0)]), &[0.1, 0.05]),
            Err(EvalError::InvalidThresholds)
        ));
        let sphere = primitives::icosphere(1);
        let off = gt(&[at(&m, 0.3, 0.3)]);
        assert!(matches!(compute_iou(&sphere, &[], &off, &[0.1]), Err(EvalError::MeshMismatch(_))));
    }

    #[test]
    fn degraded_rows_can_be_excluded() {
        let m = plane();
        let mut p = preds(&[at(&m, 0.0, 0.0), at(&m, 0.5, 0.5)]);
        p[1].degraded = true;
        let g = gt(&[at(&m, 0.0, 0.0)]);
        let input = [ModelInput { mesh: &m, predictions: &p, gt: &g }];
        let all = evaluate_models(&input, &[0.05], &EvalOptions::default()).unwrap();
        let clean = evaluate_models(&input, &[0.05], &EvalOptions { exclude_degraded: true }).unwrap();
        assert_eq!((all.n_pred, clean.n_pred), (2, 1));
        assert_eq!(clean.iou, [1.0]);
    }

    #[test]
    fn csv_layout() {
        let m = plane();
        let pts = [at(&m, 0.0, 0.0)];
        let r = compute_iou(&m, &preds(&pts), &gt(&pts), &[0.01, 0.1]).unwrap();
        let csv = r.to_csv_string();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "threshold,iou,tp,n_pred,n_gt");
        assert_eq!(lines[1], "0.01,1.0,1,1,1");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn sums_before_ratio_across_models() {
        let m = plane();
        let a = [at(&m, 0.0, 0.0)];
        let b = [at(&m, 0.5, 0.5), at(&m, -0.5, -0.5)];
        let (pa, ga) = (preds(&a), gt(&a));
        let (pb, gb) = (preds(&b[..1]), gt(&b));
        let r = evaluate_models(
            &[
                ModelInput { mesh: &m, predictions: &pa, gt: &ga },
                ModelInput { mesh: &m, predictions: &pb, gt: &gb },
            ],
            &[0.05],
            &EvalOptions::default(),
        )
        .unwrap();
        // TP 2, |pred| 2, |gt| 3
        assert_eq!(r.iou, [2.0 / 3.0]);
        assert_eq!(r.models.len(), 2);
    }

    /// Exhaustive maximum matching for small tables.
    fn best_matching(dist: &[Vec<f64>], tau: f64) -> usize {
        fn rec(dist: &[Vec<f64>], tau: f64, p: usize, used: &mut Vec<bool>) -> usize {
            if p == dist.len() {
                return 0;
            }
            let mut best = rec(dist, tau, p + 1, used);
            for g in 0..used.len() {
                if !used[g] && dist[p][g] < tau {
                    used[g] = true;
                    best = best.max(1 + rec(dist, tau, p + 1, used));
                    used[g] = false;
                }
            }
            best
        }
        let n_gt = dist.first().map_or(0, |r| r.len());
        rec(dist, tau, 0, &mut vec![false; n_gt])
    }

    fn arb_table() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..=8, 1usize..=8).prop_flat_map(|(p, g)| prop::collection::vec(prop::collection::vec(0.0..0.12f64, g), p))
    }

    proptest! {
        #[test]
        fn greedy_properties(dist in arb_table()) {
            let n_pred = dist.len();
            let n_gt = dist[0].len();
            let transposed: Vec<Vec<f64>> = (0..n_gt).map(|g| (0..n_pred).map(|p| dist[p][g]).collect()).collect();
            let mut prev = 0.0;
            for &tau in &TABLE_THRESHOLDS {
                let tp = greedy_match_count(&dist, tau);
                let v = iou(tp, n_pred, n_gt);
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert!(v >= prev);
                prev = v;
                prop_assert!(tp <= best_matching(&dist, tau));
                // swapping roles gives the same score
                prop_assert_eq!(tp, greedy_match_count(&transposed, tau));
                if v == 1.0 {
                    prop_assert!(n_pred == n_gt && best_matching(&dist, tau) == n_pred);
                }
            }
        }
    }
}
