use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{SurfacePoint, TriangleMesh};

/// Undirected edge graph of a mesh in CSR form, weighted by Euclidean edge
/// length.
///
/// Geodesic distances snap both endpoints to the nearest vertex of their
/// face, run Dijkstra between the snapped vertices and add the two snapping
/// offsets. Points on the same face use the straight in-face segment instead.
/// The approximation overestimates true geodesics; its error scales with the
/// mean edge length.
#[derive(Debug, Clone)]
pub struct EdgeGraph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
    mean_edge: f64,
}

impl EdgeGraph {
    pub(super) fn build(mesh: &TriangleMesh) -> Self {
        let n = mesh.vertex_count();
        let mut edges: Vec<(usize, usize)> = Vec::with_capacity(mesh.face_count() * 3);
        for f in mesh.faces() {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                edges.push((a.min(b), a.max(b)));
            }
        }
        edges.sort_unstable();
        edges.dedup();

        let verts = mesh.vertices();
        let mut degree = vec![0usize; n + 1];
        for &(a, b) in &edges {
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut fill = offsets.clone();
        let mut targets = vec![0usize; offsets[n]];
        let mut weights = vec![0.0; offsets[n]];
        let mut total = 0.0;
        for &(a, b) in &edges {
            let w = (verts[a] - verts[b]).norm();
            total += w;
            targets[fill[a]] = b;
            weights[fill[a]] = w;
            fill[a] += 1;
            targets[fill[b]] = a;
            weights[fill[b]] = w;
            fill[b] += 1;
        }
        let mean_edge = if edges.is_empty() { 0.0 } else { total / edges.len() as f64 };
        Self {
            offsets,
            targets,
            weights,
            mean_edge,
        }
    }

    pub fn mean_edge_length(&self) -> f64 {
        self.mean_edge
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[v]..self.offsets[v + 1];
        self.targets[range.clone()].iter().copied().zip(self.weights[range].iter().copied())
    }

    /// Shortest edge-path length from `source` to `target`, `+inf` when they
    /// lie on different components.
    pub fn shortest_path(&self, source: usize, target: usize) -> f64 {
        if source == target {
            return 0.0;
        }
        let n = self.offsets.len() - 1;
        let mut dist = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(State { cost: 0.0, vertex: source });
        while let Some(State { cost, vertex }) = heap.pop() {
            if vertex == target {
                return cost;
            }
            if cost > dist[vertex] {
                continue;
            }
            for (next, w) in self.neighbors(vertex) {
                let c = cost + w;
                if c < dist[next] {
                    dist[next] = c;
                    heap.push(State { cost: c, vertex: next });
                }
            }
        }
        f64::INFINITY
    }

    /// Single-source distances to every vertex.
    pub fn distances_from(&self, source: usize) -> Vec<f64> {
        let n = self.offsets.len() - 1;
        let mut dist = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(State { cost: 0.0, vertex: source });
        while let Some(State { cost, vertex }) = heap.pop() {
            if cost > dist[vertex] {
                continue;
            }
            for (next, w) in self.neighbors(vertex) {
                let c = cost + w;
                if c < dist[next] {
                    dist[next] = c;
                    heap.push(State { cost: c, vertex: next });
                }
            }
        }
        dist
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct State {
    cost: f64,
    vertex: usize,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, then vertex index for determinism
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Nearest vertex of the point's own face and the distance to it.
pub(crate) fn snap_to_vertex(mesh: &TriangleMesh, p: &SurfacePoint) -> (usize, f64) {
    let f = mesh.faces()[p.face];
    let verts = mesh.vertices();
    let mut best = (f[0], (verts[f[0]] - p.position).norm());
    for &v in &f[1..] {
        let d = (verts[v] - p.position).norm();
        if d < best.1 || (d == best.1 && v < best.0) {
            best = (v, d);
        }
    }
    best
}

pub(super) fn geodesic_distance(mesh: &TriangleMesh, a: &SurfacePoint, b: &SurfacePoint) -> f64 {
    if a.face == b.face {
        return (a.position - b.position).norm();
    }
    let (va, oa) = snap_to_vertex(mesh, a);
    let (vb, ob) = snap_to_vertex(mesh, b);
    // Canonical orientation keeps the floating-point sum symmetric.
    let (s, os, t, ot) = if va <= vb { (va, oa, vb, ob) } else { (vb, ob, va, oa) };
    let path = mesh.edge_graph().shortest_path(s, t);
    os + path + ot
}
