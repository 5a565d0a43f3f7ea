//! Brute-force HDBSCAN reference: explicit mutual-reachability matrix,
//! threshold components found by BFS at every level, recursive
//! condensation and exhaustive search over cluster selections.

#![allow(dead_code)]

use nalgebra::Point3;

pub struct Instance {
    pub points: Vec<Point3<f64>>,
    pub k: usize,
    pub mcs: usize,
}

fn matrix(points: &[Point3<f64>], k: usize) -> Vec<Vec<f64>> {
    let n = points.len();
    let k = k.min(n - 1);
    let dist = |i: usize, j: usize| (points[i] - points[j]).norm();
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist(i, j)).collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect();
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { core[i].max(core[j]).max(dist(i, j)) }).collect())
        .collect()
}

/// Components of `set` using edges with weight strictly below `w` (or at
/// most `w` when `inclusive`).
fn components(m: &[Vec<f64>], set: &[usize], w: f64, inclusive: bool) -> Vec<Vec<usize>> {
    let mut seen = vec![false; set.len()];
    let mut out = Vec::new();
    for s in 0..set.len() {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![set[s]];
        let mut queue = vec![s];
        while let Some(a) = queue.pop() {
            for b in 0..set.len() {
                let e = m[set[a]][set[b]];
                if !seen[b] && (if inclusive { e <= w } else { e < w }) {
                    seen[b] = true;
                    comp.push(set[b]);
                    queue.push(b);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Smallest level at which `set` is connected.
fn merge_level(m: &[Vec<f64>], set: &[usize]) -> f64 {
    let mut levels: Vec<f64> = set.iter().flat_map(|&i| set.iter().filter(move |&&j| j != i).map(move |&j| m[i][j])).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    *levels
        .iter()
        .find(|&&w| components(m, set, w, true).len() == 1)
        .expect("complete graph connects at its largest weight")
}

struct Cl {
    birth: f64,
    size: usize,
    children: Vec<usize>,
    fallen: Vec<(usize, f64)>,
}

fn lam(w: f64) -> f64 {
    1.0 / w.max(1e-12)
}

fn condense(m: &[Vec<f64>], set: Vec<usize>, c: usize, mcs: usize, out: &mut Vec<Cl>) {
    if set.len() < 2 {
        return;
    }
    let w = merge_level(m, &set);
    let l = lam(w);
    let parts = components(m, &set, w, false);
    let big: Vec<&Vec<usize>> = parts.iter().filter(|p| p.len() >= mcs).collect();
    if big.is_empty() {
        out[c].fallen.extend(set.iter().map(|&p| (p, l)));
        return;
    }
    for p in parts.iter().filter(|p| p.len() < mcs) {
        out[c].fallen.extend(p.iter().map(|&q| (q, l)));
    }
    if big.len() == 1 {
        condense(m, big[0].clone(), c, mcs, out);
        return;
    }
    for b in big {
        out.push(Cl { birth: l, size: b.len(), children: vec![], fallen: vec![] });
        let id = out.len() - 1;
        out[c].children.push(id);
        condense(m, b.clone(), id, mcs, out);
    }
}

fn stability(cs: &[Cl], c: usize) -> f64 {
    cs[c].fallen.iter().map(|f| f.1 - cs[c].birth).sum::<f64>()
        + cs[c].children.iter().map(|&ch| cs[ch].size as f64 * (cs[ch].birth - cs[c].birth)).sum::<f64>()
}

/// Every selection with exactly one chosen cluster on each root-to-leaf path.
fn antichains(cs: &[Cl], c: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![c]];
    if cs[c].children.is_empty() {
        return out;
    }
    let mut combos: Vec<Vec<usize>> = vec![vec![]];
    for &ch in &cs[c].children {
        let sub = antichains(cs, ch);
        combos = combos
            .iter()
            .flat_map(|a| sub.iter().map(move |b| a.iter().chain(b).copied().collect()))
            .collect();
    }
    out.extend(combos);
    out
}

fn subtree(cs: &[Cl], c: usize, out: &mut Vec<usize>) {
    out.extend(cs[c].fallen.iter().map(|f| f.0));
    for &ch in &cs[c].children {
        subtree(cs, ch, out);
    }
}

/// Reference labels (cluster index per point, `None` for noise).
pub fn reference_labels(points: &[Point3<f64>], k: usize, mcs: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let mut labels = vec![None; n];
    if n < mcs {
        return labels;
    }
    let m = matrix(points, k);
    let mut cs = vec![Cl { birth: 0.0, size: n, children: vec![], fallen: vec![] }];
    condense(&m, (0..n).collect(), 0, mcs, &mut cs);
    let stab: Vec<f64> = (0..cs.len()).map(|c| stability(&cs, c)).collect();

    // compare selections on the clusters where they differ, so a shared huge
    // term (coincident points) cannot swamp the comparison
    let mut best: Option<Vec<usize>> = None;
    for sel in antichains(&cs, 0) {
        let better = match &best {
            None => true,
            Some(bs) => {
                let gain: f64 = sel.iter().filter(|c| !bs.contains(c)).map(|&c| stab[c]).sum();
                let loss: f64 = bs.iter().filter(|c| !sel.contains(c)).map(|&c| stab[c]).sum();
                let tol = 1e-9 * gain.abs().max(loss.abs()).max(1e-300);
                gain > loss + tol || ((gain - loss).abs() <= tol && sel.len() < bs.len())
            }
        };
        if better {
            best = Some(sel);
        }
    }
    let mut chosen = best.unwrap();
    chosen.sort_unstable();

    let mut final_lam = vec![f64::NEG_INFINITY; n];
    for c in &cs {
        for &(p, l) in &c.fallen {
            final_lam[p] = l;
        }
    }
    for (label, &c) in chosen.iter().enumerate() {
        if c == 0 {
            let top = cs[0]
                .fallen
                .iter()
                .map(|f| f.1)
                .chain(cs[0].children.iter().map(|&ch| cs[ch].birth))
                .fold(f64::NEG_INFINITY, f64::max);
            for p in 0..n {
                if final_lam[p] >= top {
                    labels[p] = Some(label);
                }
            }
        } else {
            let mut pts = Vec::new();
            subtree(&cs, c, &mut pts);
            for p in pts {
                labels[p] = Some(label);
            }
        }
    }
    labels
}

/// Relabels clusters in order of first appearance.
pub fn canonical(labels: &[Option<usize>]) -> Vec<Option<usize>> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            l.map(|c| {
                let next = map.len();
                *map.entry(c).or_insert(next)
            })
        })
        .collect()
}

/// Random blob mixtures with occasional duplicates and uniform noise.
pub fn random_instance(seed: u64) -> Instance {
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=64usize);
    let blobs = rng.random_range(1..=5usize);
    let centers: Vec<Point3<f64>> = (0..blobs)
        .map(|_| Point3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
        .collect();
    let spreads: Vec<f64> = (0..blobs).map(|_| rng.random_range(0.05..1.0)).collect();
    let mut points: Vec<Point3<f64>> = Vec::with_capacity(n);
    while points.len() < n {
        let r: f64 = rng.random();
        if r < 0.1 && !points.is_empty() {
            let i = rng.random_range(0..points.len());
            points.push(points[i]);
        } else if r < 0.2 {
            points.push(Point3::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)));
        } else {
            let b = rng.random_range(0..blobs);
            let g = Normal::new(0.0, spreads[b]).unwrap();
            points.push(centers[b] + nalgebra::Vector3::new(g.sample(&mut rng), g.sample(&mut rng), g.sample(&mut rng)));
        }
    }
    Instance { points, k: rng.random_range(2..=5), mcs: rng.random_range(2..=8) }
}
