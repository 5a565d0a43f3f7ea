use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::{ClusterError, Result};

/// Lambda of a merge distance; zero distances map to a large finite value.
pub fn lambda_of(distance: f64) -> f64 {
    1.0 / distance.max(1e-12)
}

/// Distance from `points[index]` to its `k`-th nearest other point.
pub fn core_distance(points: &[Point3<f64>], index: usize, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(ClusterError::InvalidParams("k must be >= 1".into()));
    }
    if k >= points.len() {
        return Err(ClusterError::InsufficientPoints { k, n: points.len() });
    }
    Ok(core_distances(points, k)[index])
}

pub(crate) fn core_distances(points: &[Point3<f64>], k: usize) -> Vec<f64> {
    (0..points.len())
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..points.len())
                .filter(|&j| j != i)
                .map(|j| ((points[i] - points[j]).norm(), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d[k - 1].0
        })
        .collect()
}

/// `max(core_k(i), core_k(j), |p_i − p_j|)`.
pub fn mutual_reachability(points: &[Point3<f64>], i: usize, j: usize, k: usize) -> Result<f64> {
    let ci = core_distance(points, i, k)?;
    let cj = core_distance(points, j, k)?;
    Ok(ci.max(cj).max((points[i] - points[j]).norm()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub members: Vec<usize>,
    pub stability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Cluster index per point, `None` for noise.
    pub labels: Vec<Option<usize>>,
    pub clusters: Vec<Cluster>,
    pub k: usize,
    pub min_cluster_size: usize,
}

impl ClusterResult {
    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }
}

struct Node {
    weight: f64,
    children: Vec<usize>,
    size: usize,
}

struct Condensed {
    birth: f64,
    children: Vec<usize>,
    fallen: Vec<(usize, f64)>,
    size: usize,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.parent[hi] = lo;
        true
    }
}

/// HDBSCAN over mutual reachability distances.
///
/// Equal-weight MST edges are merged in one step, so the hierarchy is the
/// tree of connected components of `{d_m ≤ w}` over all distinct levels `w`
/// and the result does not depend on input order. The root cluster may be
/// selected; when it is, only points that leave it at its largest lambda
/// are members.
pub fn hdbscan(points: &[Point3<f64>], k: usize, min_cluster_size: usize) -> Result<ClusterResult> {
    let n = points.len();
    if n == 0 {
        return Err(ClusterError::EmptyInput);
    }
    if min_cluster_size < 2 || k == 0 {
        return Err(ClusterError::InvalidParams(format!(
            "need k >= 1 and min cluster size >= 2, got k={k}, mcs={min_cluster_size}"
        )));
    }
    let mut result = ClusterResult {
        labels: vec![None; n],
        clusters: Vec::new(),
        k,
        min_cluster_size,
    };
    if n < min_cluster_size {
        return Ok(result);
    }

    let core = core_distances(points, k.min(n - 1));
    let dm = |i: usize, j: usize| core[i].max(core[j]).max((points[i] - points[j]).norm());

    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            edges.push((dm(i, j), i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut uf = UnionFind::new(n);
    let mst: Vec<(f64, usize, usize)> = edges.into_iter().filter(|&(_, i, j)| uf.union(i, j)).collect();

    let nodes = build_hierarchy(n, &mst);
    let root = nodes.len() - 1;
    let condensed = condense(&nodes, root, min_cluster_size);
    let stability: Vec<f64> = condensed.iter().map(|c| cluster_stability(c, &condensed)).collect();
    let selected = select(&condensed, &stability);

    let final_lambda = final_fall_out(&condensed, n);
    for (label, &c) in selected.iter().enumerate() {
        let members: Vec<usize> = if c == 0 {
            let top = condensed[0]
                .fallen
                .iter()
                .map(|f| f.1)
                .chain(condensed[0].children.iter().map(|&ch| condensed[ch].birth))
                .fold(f64::NEG_INFINITY, f64::max);
            (0..n).filter(|&p| final_lambda[p] >= top).collect()
        } else {
            let mut m = subtree_points(&condensed, c);
            m.sort_unstable();
            m
        };
        for &p in &members {
            result.labels[p] = Some(label);
        }
        result.clusters.push(Cluster {
            members,
            stability: stability[c],
        });
    }
    Ok(result)
}

fn build_hierarchy(n: usize, mst: &[(f64, usize, usize)]) -> Vec<Node> {
    let mut nodes: Vec<Node> = (0..n)
        .map(|_| Node {
            weight: 0.0,
            children: Vec::new(),
            size: 1,
        })
        .collect();
    let mut uf = UnionFind::new(n);
    // node currently representing each union-find root
    let mut node_of: Vec<usize> = (0..n).collect();
    let mut start = 0;
    while start < mst.len() {
        let w = mst[start].0;
        let end = start + mst[start..].iter().take_while(|e| e.0 == w).count();
        let group = &mst[start..end];
        // components merged at this level: union-find over the current roots
        let roots: Vec<(usize, usize)> = group.iter().map(|&(_, a, b)| (uf.find(a), uf.find(b))).collect();
        let mut local = UnionFind::new(n);
        for &(a, b) in &roots {
            local.union(a, b);
        }
        let mut members: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
        for &(a, b) in &roots {
            for r in [a, b] {
                let entry = members.entry(local.find(r)).or_default();
                if !entry.contains(&r) {
                    entry.push(r);
                }
            }
        }
        for rs in members.values() {
            let mut children: Vec<usize> = rs.iter().map(|&r| node_of[r]).collect();
            children.sort_unstable();
            let size = children.iter().map(|&c| nodes[c].size).sum();
            nodes.push(Node { weight: w, children, size });
            let id = nodes.len() - 1;
            for &r in rs {
                uf.union(rs[0], r);
            }
            node_of[uf.find(rs[0])] = id;
        }
        start = end;
    }
    nodes
}

fn node_points(nodes: &[Node], node: usize, out: &mut Vec<usize>) {
    let mut stack = vec![node];
    while let Some(x) = stack.pop() {
        if nodes[x].children.is_empty() {
            out.push(x);
        } else {
            stack.extend(&nodes[x].children);
        }
    }
}

fn condense(nodes: &[Node], root: usize, mcs: usize) -> Vec<Condensed> {
    let mut clusters = vec![Condensed {
        birth: 0.0,
        children: Vec::new(),
        fallen: Vec::new(),
        size: nodes[root].size,
    }];
    let mut stack = vec![(0usize, root)];
    while let Some((c, mut node)) = stack.pop() {
        loop {
            let lam = lambda_of(nodes[node].weight);
            let (big, small): (Vec<usize>, Vec<usize>) =
                nodes[node].children.iter().partition(|&&ch| nodes[ch].size >= mcs);
            let mut fall = Vec::new();
            if big.is_empty() {
                node_points(nodes, node, &mut fall);
            } else {
                for &s in &small {
                    node_points(nodes, s, &mut fall);
                }
            }
            fall.sort_unstable();
            clusters[c].fallen.extend(fall.into_iter().map(|p| (p, lam)));
            match big.len() {
                0 => break,
                1 => node = big[0],
                _ => {
                    for &b in &big {
                        clusters.push(Condensed {
                            birth: lam,
                            children: Vec::new(),
                            fallen: Vec::new(),
                            size: nodes[b].size,
                        });
                        let id = clusters.len() - 1;
                        clusters[c].children.push(id);
                        stack.push((id, b));
                    }
                    break;
                }
            }
        }
    }
    clusters
}

fn cluster_stability(c: &Condensed, all: &[Condensed]) -> f64 {
    let from_points: f64 = c.fallen.iter().map(|&(_, l)| l - c.birth).sum();
    let from_children: f64 = c
        .children
        .iter()
        .map(|&ch| all[ch].size as f64 * (all[ch].birth - c.birth))
        .sum();
    from_points + from_children
}

/// Excess-of-mass selection: a cluster replaces its descendants' selection
/// when its own stability is at least their best total.
fn select(clusters: &[Condensed], stability: &[f64]) -> Vec<usize> {
    let m = clusters.len();
    let mut best = vec![0.0; m];
    let mut chosen = vec![false; m];
    for c in (0..m).rev() {
        let child_sum: f64 = clusters[c].children.iter().map(|&ch| best[ch]).sum();
        if clusters[c].children.is_empty() || stability[c] >= child_sum {
            best[c] = stability[c];
            chosen[c] = true;
            let mut stack = clusters[c].children.clone();
            while let Some(d) = stack.pop() {
                chosen[d] = false;
                stack.extend(&clusters[d].children);
            }
        } else {
            best[c] = child_sum;
        }
    }
    (0..m).filter(|&c| chosen[c]).collect()
}

fn final_fall_out(clusters: &[Condensed], n: usize) -> Vec<f64> {
    let mut lam = vec![f64::NEG_INFINITY; n];
    for c in clusters {
        for &(p, l) in &c.fallen {
            lam[p] = l;
        }
    }
    lam
}

fn subtree_points(clusters: &[Condensed], c: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![c];
    while let Some(x) = stack.pop() {
        out.extend(clusters[x].fallen.iter().map(|f| f.0));
        stack.extend(&clusters[x].children);
    }
    out
}
