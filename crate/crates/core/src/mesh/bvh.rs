//! Bounding volume hierarchy over faces for closest-point queries.

use nalgebra::Point3;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: [f64; 3],
    max: [f64; 3],
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        }
    }

    fn grow(&mut self, p: &Point3<f64>) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    fn merge(&mut self, o: &Aabb) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(o.min[k]);
            self.max[k] = self.max[k].max(o.max[k]);
        }
    }

    fn dist2(&self, p: &Point3<f64>) -> f64 {
        (0..3)
            .map(|k| {
                let d = (self.min[k] - p[k]).max(0.0).max(p[k] - self.max[k]);
                d * d
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FaceBvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl FaceBvh {
    pub fn build(triangles: &[[Point3<f64>; 3]]) -> Self {
        let boxes: Vec<Aabb> = triangles
            .iter()
            .map(|t| {
                let mut b = Aabb::empty();
                t.iter().for_each(|p| b.grow(p));
                b
            })
            .collect();
        let centroids: Vec<[f64; 3]> = boxes
            .iter()
            .map(|b| [0, 1, 2].map(|k| 0.5 * (b.min[k] + b.max[k])))
            .collect();
        let mut bvh = Self {
            nodes: Vec::new(),
            order: (0..triangles.len()).collect(),
        };
        if !triangles.is_empty() {
            bvh.split(&boxes, &centroids, 0, triangles.len());
        }
        bvh
    }

    fn split(&mut self, boxes: &[Aabb], centroids: &[[f64; 3]], start: usize, end: usize) -> usize {
        let mut bounds = Aabb::empty();
        for &f in &self.order[start..end] {
            bounds.merge(&boxes[f]);
        }
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, start, end });
            return id;
        }
        let ext = [0, 1, 2].map(|k| bounds.max[k] - bounds.min[k]);
        let axis = (0..3).max_by(|&a, &b| ext[a].total_cmp(&ext[b])).unwrap_or(0);
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
        });
        // placeholder, patched once the children exist
        self.nodes.push(Node::Leaf { bounds, start, end });
        let left = self.split(boxes, centroids, start, mid);
        let right = self.split(boxes, centroids, mid, end);
        self.nodes[id] = Node::Inner { bounds, left, right };
        id
    }

    /// Smallest `(dist², face, value)` over faces, where `eval` gives the
    /// squared distance from the query to one face. Ties go to the lowest
    /// face index, so the answer equals a linear scan.
    pub fn nearest<T>(&self, p: &Point3<f64>, mut eval: impl FnMut(usize) -> (f64, T)) -> Option<(f64, usize, T)> {
        let mut best: Option<(f64, usize, T)> = None;
        if self.nodes.is_empty() {
            return None;
        }
        let mut stack = vec![(self.nodes[0].bounds().dist2(p), 0usize)];
        while let Some((lb, n)) = stack.pop() {
            if best.as_ref().is_some_and(|b| lb > b.0) {
                continue;
            }
            match &self.nodes[n] {
                Node::Leaf { start, end, .. } => {
                    for &f in &self.order[*start..*end] {
                        let (d2, v) = eval(f);
                        let better = match &best {
                            None => true,
                            Some((bd, bf, _)) => d2 < *bd || (d2 == *bd && f < *bf),
                        };
                        if better {
                            best = Some((d2, f, v));
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[*left].bounds().dist2(p);
                    let dr = self.nodes[*right].bounds().dist2(p);
                    // nearer child popped first
                    if dl <= dr {
                        stack.push((dr, *right));
                        stack.push((dl, *left));
                    } else {
                        stack.push((dl, *left));
                        stack.push((dr, *right));
                    }
                }
            }
        }
        best
    }
}
