//! Indexed triangle meshes: validation, canonical normalization, closest-point
//! queries and edge-graph geodesics.

mod bvh;
mod geodesic;
mod io;
pub mod primitives;

use std::path::PathBuf;
use std::sync::OnceLock;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use geodesic::EdgeGraph;
pub use io::{load_mesh, parse_obj, parse_ply, write_marker_obj, MeshFormat};

/// Tolerance for barycentric validity checks.
pub const BARYCENTRIC_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("degenerate mesh: all vertices coincide")]
    DegenerateMesh,
    #[error("invalid face {face}: {reason}")]
    InvalidFace { face: usize, reason: String },
    #[error("invalid surface point: {0}")]
    InvalidSurfacePoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MeshError>;

/// An indexed triangle surface with per-face unit normals.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
    normals: Vec<Vector3<f64>>,
    graph: OnceLock<EdgeGraph>,
    bvh: OnceLock<bvh::FaceBvh>,
}

impl TriangleMesh {
    /// Builds a mesh, rejecting out-of-range indices and faces that repeat a
    /// vertex. An empty face list is allowed here; loaders reject it.
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i >= vertices.len()) {
                return Err(MeshError::InvalidFace {
                    face: fi,
                    reason: format!("vertex index {bad} out of range ({} vertices)", vertices.len()),
                });
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::InvalidFace {
                    face: fi,
                    reason: format!("repeated vertex in {f:?}"),
                });
            }
        }
        if let Some(v) = vertices.iter().position(|v| !v.coords.iter().all(|c| c.is_finite())) {
            return Err(MeshError::InvalidFace {
                face: usize::MAX,
                reason: format!("vertex {v} has non-finite coordinates"),
            });
        }
        let normals = faces
            .iter()
            .map(|f| face_normal(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]))
            .collect();
        Ok(Self {
            vertices,
            faces,
            normals,
            graph: OnceLock::new(),
            bvh: OnceLock::new(),
        })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new()).expect("empty mesh is valid")
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, face: usize) -> [Point3<f64>; 3] {
        let f = self.faces[face];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    /// Mean length over unique undirected edges.
    pub fn mean_edge_length(&self) -> f64 {
        self.edge_graph().mean_edge_length()
    }

    /// Edge adjacency with Euclidean weights, built on first use.
    pub fn edge_graph(&self) -> &EdgeGraph {
        self.graph.get_or_init(|| EdgeGraph::build(self))
    }

    /// Surface point at the given barycentric coordinates of `face`.
    pub fn surface_point(&self, face: usize, barycentric: [f64; 3]) -> Result<SurfacePoint> {
        if face >= self.faces.len() {
            return Err(MeshError::InvalidSurfacePoint(format!(
                "face {face} out of range ({} faces)",
                self.faces.len()
            )));
        }
        let sum: f64 = barycentric.iter().sum();
        if barycentric.iter().any(|&b| !(b >= -BARYCENTRIC_TOL)) || (sum - 1.0).abs() > BARYCENTRIC_TOL {
            return Err(MeshError::InvalidSurfacePoint(format!(
                "barycentric coordinates {barycentric:?} are not a convex combination"
            )));
        }
        let bary = clean_barycentric(barycentric);
        Ok(SurfacePoint {
            face,
            barycentric: bary,
            position: self.interpolate(face, bary),
        })
    }

    /// Surface point sitting exactly on vertex `vertex`, anchored to the first
    /// face that references it.
    pub fn vertex_surface_point(&self, vertex: usize) -> Option<SurfacePoint> {
        self.faces.iter().enumerate().find_map(|(fi, f)| {
            let slot = f.iter().position(|&v| v == vertex)?;
            let mut bary = [0.0; 3];
            bary[slot] = 1.0;
            Some(SurfacePoint {
                face: fi,
                barycentric: bary,
                position: self.vertices[vertex],
            })
        })
    }

    fn interpolate(&self, face: usize, bary: [f64; 3]) -> Point3<f64> {
        let [a, b, c] = self.triangle(face);
        Point3::from(a.coords * bary[0] + b.coords * bary[1] + c.coords * bary[2])
    }

    /// Closest point on one specific face.
    pub fn closest_on_face(&self, face: usize, p: &Point3<f64>) -> SurfacePoint {
        let [a, b, c] = self.triangle(face);
        let bary = clean_barycentric(closest_barycentric(p, &a, &b, &c));
        SurfacePoint {
            face,
            barycentric: bary,
            position: self.interpolate(face, bary),
        }
    }

    /// Exact closest point over the whole surface. Ties resolve to the lowest
    /// face index. Returns `None` only for a mesh without faces.
    pub fn nearest_surface_point(&self, p: &Point3<f64>) -> Option<SurfacePoint> {
        let bvh = self.bvh.get_or_init(|| {
            let tris: Vec<_> = (0..self.faces.len()).map(|f| self.triangle(f)).collect();
            bvh::FaceBvh::build(&tris)
        });
        bvh.nearest(p, |face| {
            let sp = self.closest_on_face(face, p);
            ((sp.position - p).norm_squared(), sp)
        })
        .map(|(_, _, sp)| sp)
    }

    /// Checks that a surface point is consistent with this mesh.
    pub fn validate_surface_point(&self, sp: &SurfacePoint, tol: f64) -> Result<()> {
        let rebuilt = self.surface_point(sp.face, sp.barycentric)?;
        let err = (rebuilt.position - sp.position).norm();
        if err > tol {
            return Err(MeshError::InvalidSurfacePoint(format!(
                "position is {err:.3e} away from its barycentric reconstruction"
            )));
        }
        Ok(())
    }

    /// Approximate on-surface distance; see [`EdgeGraph`] for the scheme.
    pub fn geodesic_distance(&self, a: &SurfacePoint, b: &SurfacePoint) -> f64 {
        geodesic::geodesic_distance(self, a, b)
    }

    /// Applies `f` to every vertex, keeping topology.
    pub fn map_vertices(&self, f: impl Fn(&Point3<f64>) -> Point3<f64>) -> Self {
        Self::new(self.vertices.iter().map(f).collect(), self.faces.clone())
            .expect("topology unchanged")
    }
}

fn face_normal(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Vector3<f64> {
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    if len > 0.0 && len.is_finite() {
        n / len
    } else {
        // zero-area face; any unit vector keeps the invariant
        Vector3::z()
    }
}

fn clean_barycentric(b: [f64; 3]) -> [f64; 3] {
    let c = [b[0].max(0.0), b[1].max(0.0), b[2].max(0.0)];
    let s = c[0] + c[1] + c[2];
    if s > 0.0 {
        [c[0] / s, c[1] / s, c[2] / s]
    } else {
        [1.0, 0.0, 0.0]
    }
}

/// Barycentric coordinates of the point of triangle `abc` closest to `p`
/// (Voronoi-region walk over vertices, edges and interior).
pub(crate) fn closest_barycentric(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> [f64; 3] {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = va + vb + vc;
    if denom.abs() > 0.0 && denom.is_finite() {
        let v = vb / denom;
        let w = vc / denom;
        return [1.0 - v - w, v, w];
    }
    closest_on_edges(p, a, b, c)
}

// Fallback for collinear triangles.
fn closest_on_edges(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> [f64; 3] {
    let seg = |s: &Point3<f64>, e: &Point3<f64>| {
        let d = e - s;
        let len2 = d.norm_squared();
        let t = if len2 > 0.0 { ((p - s).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
        (t, (s + d * t - p).norm_squared())
    };
    let (t0, d0) = seg(a, b);
    let (t1, d1) = seg(b, c);
    let (t2, d2) = seg(c, a);
    if d0 <= d1 && d0 <= d2 {
        [1.0 - t0, t0, 0.0]
    } else if d1 <= d2 {
        [0.0, 1.0 - t1, t1]
    } else {
        [t2, 0.0, 1.0 - t2]
    }
}

/// A point on a specific face, stored with its barycentric coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub face: usize,
    pub barycentric: [f64; 3],
    #[serde(with = "point_serde")]
    pub position: Point3<f64>,
}

mod point_serde {
    use nalgebra::Point3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &Point3<f64>, s: S) -> Result<S::Ok, S::Error> {
        [p.x, p.y, p.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Point3<f64>, D::Error> {
        let [x, y, z] = <[f64; 3]>::deserialize(d)?;
        Ok(Point3::new(x, y, z))
    }
}

/// Similarity transform applied by [`normalize_mesh`]: `p' = (p - center) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: [f64; 3],
    pub scale: f64,
}

impl Normalization {
    /// Human-readable convention tag written into output headers.
    pub const CONVENTION: &'static str = "bbox-midpoint-centered, unit bounding-sphere radius";

    pub fn identity() -> Self {
        Self {
            center: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::new(
            (p.x - self.center[0]) * self.scale,
            (p.y - self.center[1]) * self.scale,
            (p.z - self.center[2]) * self.scale,
        )
    }
}

/// Centers the mesh on its bounding-box midpoint and scales the farthest
/// vertex to distance 1.
pub fn normalize_mesh(mesh: &TriangleMesh) -> Result<(TriangleMesh, Normalization)> {
    if mesh.vertices.is_empty() || mesh.faces.is_empty() {
        return Err(MeshError::EmptyMesh);
    }
    let mut lo = mesh.vertices[0];
    let mut hi = mesh.vertices[0];
    for v in &mesh.vertices {
        for k in 0..3 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    let center = Point3::from((lo.coords + hi.coords) * 0.5);
    let radius = mesh
        .vertices
        .iter()
        .map(|v| (v - center).norm())
        .fold(0.0_f64, f64::max);
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(MeshError::DegenerateMesh);
    }
    let scale = 1.0 / radius;
    // Already canonical: return unchanged so repeated normalization is exact.
    if center.coords.norm() <= 1e-12 && (scale - 1.0).abs() <= 1e-12 {
        return Ok((mesh.clone(), Normalization::identity()));
    }
    let norm = Normalization {
        center: [center.x, center.y, center.z],
        scale,
    };
    Ok((mesh.map_vertices(|p| norm.apply(p)), norm))
}

/// Merges vertices closer than `tolerance` (opt-in; changes topology).
pub fn weld_vertices(mesh: &TriangleMesh, tolerance: f64) -> TriangleMesh {
    use std::collections::HashMap;
    let cell = tolerance.max(f64::MIN_POSITIVE);
    let key = |p: &Point3<f64>| {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    let mut remap = vec![0usize; mesh.vertices.len()];
    let mut kept: Vec<Point3<f64>> = Vec::new();
    for (i, v) in mesh.vertices.iter().enumerate() {
        let (kx, ky, kz) = key(v);
        let mut found = None;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = grid.get(&(kx + dx, ky + dy, kz + dz)) {
                        if let Some(&j) = list.iter().find(|&&j| (kept[j] - v).norm() <= tolerance) {
                            found = Some(j);
                            break 'search;
                        }
                    }
                }
            }
        }
        remap[i] = found.unwrap_or_else(|| {
            kept.push(*v);
            grid.entry((kx, ky, kz)).or_default().push(kept.len() - 1);
            kept.len() - 1
        });
    }
    let faces = mesh
        .faces
        .iter()
        .map(|f| [remap[f[0]], remap[f[1]], remap[f[2]]])
        .filter(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2])
        .collect();
    TriangleMesh::new(kept, faces).expect("welded faces are valid")
}
