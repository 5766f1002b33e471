//! Static 3D kd-tree for nearest-neighbour queries.
//!
//! Built once over a point slice and queried many times. Ties in distance are
//! broken by point index so results do not depend on tree layout.

use std::cmp::Ordering;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
    /// `points` permuted into leaf order, so leaves scan contiguous memory.
    packed: Vec<[f64; 3]>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Neighbor {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl KdTree {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        if !points.is_empty() {
            let n = points.len();
            build(&points, &mut order, 0, n, &mut nodes);
        }
        let packed = order.iter().map(|&i| points[i]).collect();
        Self {
            points,
            order,
            packed,
            nodes,
        }
    }

    pub fn from_iter<I: IntoIterator<Item = [f64; 3]>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> [f64; 3] {
        self.points[index]
    }

    pub fn nearest(&self, query: &[f64; 3]) -> Option<Neighbor> {
        self.nearest_within(query, f64::INFINITY)
    }

    /// Nearest point with squared distance ≤ `max_dist2`.
    pub fn nearest_within(&self, query: &[f64; 3], max_dist2: f64) -> Option<Neighbor> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<Neighbor> = None;
        let mut bound = max_dist2;
        self.nearest_rec(0, query, &mut best, &mut bound, &mut [0.0; 3], 0.0);
        best
    }

    /// `off` holds the per-axis distance from `q` to the current cell and
    /// `box_d2` its squared sum, the lower bound for every point below `node`.
    fn nearest_rec(
        &self,
        node: usize,
        q: &[f64; 3],
        best: &mut Option<Neighbor>,
        bound: &mut f64,
        off: &mut [f64; 3],
        box_d2: f64,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for (p, &idx) in self.packed[start..end].iter().zip(&self.order[start..end]) {
                    let d2 = dist2(p, q);
                    if d2 > *bound {
                        continue;
                    }
                    let cand = Neighbor { index: idx, dist2: d2 };
                    let better = match best {
                        None => true,
                        Some(b) => cand.key_cmp(b) == Ordering::Less,
                    };
                    if better {
                        *best = Some(cand);
                        *bound = d2;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best, bound, off, box_d2);
                let far_d2 = box_d2 - off[axis] * off[axis] + diff * diff;
                if far_d2 <= *bound {
                    let saved = off[axis];
                    off[axis] = diff;
                    self.nearest_rec(far, q, best, bound, off, far_d2);
                    off[axis] = saved;
                }
            }
        }
    }

    /// The `k` nearest points sorted by (distance, index).
    pub fn knn(&self, query: &[f64; 3], k: usize) -> Vec<Neighbor> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        // kept sorted; k is small, so insertion beats a heap
        let mut best = Vec::with_capacity(k + 1);
        self.knn_rec(0, query, k, &mut best, &mut [0.0; 3], 0.0);
        best
    }

    fn knn_rec(&self, node: usize, q: &[f64; 3], k: usize, best: &mut Vec<Neighbor>, off: &mut [f64; 3], box_d2: f64) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for (p, &idx) in self.packed[start..end].iter().zip(&self.order[start..end]) {
                    let cand = Neighbor {
                        index: idx,
                        dist2: dist2(p, q),
                    };
                    if best.len() == k && cand.key_cmp(&best[k - 1]) != Ordering::Less {
                        continue;
                    }
                    let at = best.partition_point(|n| n.key_cmp(&cand) == Ordering::Less);
                    best.insert(at, cand);
                    best.truncate(k);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, best, off, box_d2);
                let worst = if best.len() < k { f64::INFINITY } else { best[k - 1].dist2 };
                let far_d2 = box_d2 - off[axis] * off[axis] + diff * diff;
                if far_d2 <= worst {
                    let saved = off[axis];
                    off[axis] = diff;
                    self.knn_rec(far, q, k, best, off, far_d2);
                    off[axis] = saved;
                }
            }
        }
    }
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn build(points: &[[f64; 3]], order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut order[start..end];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in slice.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    if hi[axis] - lo[axis] <= 0.0 {
        // all points coincide
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let value = points[slice[mid]][axis];

    nodes.push(Node::Leaf { start, end }); // placeholder, replaced below
    let left = build(points, order, start, start + mid, nodes);
    let right = build(points, order, start + mid, end, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_knn(points: &[[f64; 3]], q: &[f64; 3], k: usize) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = points
            .iter()
            .enumerate()
            .map(|(index, p)| Neighbor {
                index,
                dist2: dist2(p, q),
            })
            .collect();
        all.sort_by(|a, b| a.key_cmp(b));
        all.truncate(k);
        all
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let points: Vec<[f64; 3]> = (0..2000)
            .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)])
            .collect();
        let tree = KdTree::new(points.clone());
        for _ in 0..200 {
            let q = [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(-2.0..2.0)];
            assert_eq!(tree.knn(&q, 9), brute_knn(&points, &q, 9));
            assert_eq!(tree.nearest(&q), brute_knn(&points, &q, 1).first().copied());
        }
    }

    #[test]
    fn duplicate_coordinates() {
        // many points sharing a coordinate on every axis
        let mut points = vec![[1.0, 1.0, 0.0]; 100];
        points.extend((0..100).map(|i| [i as f64 * 0.1, 0.0, 0.0]));
        let tree = KdTree::new(points.clone());
        let q = [1.0, 1.0, 0.0];
        let got = tree.knn(&q, 5);
        assert_eq!(got, brute_knn(&points, &q, 5));
        assert_eq!(got.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn radius_bound() {
        let tree = KdTree::new(vec![[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        assert!(tree.nearest_within(&[1.5, 1.5, 0.0], 1.0).is_none());
        assert_eq!(tree.nearest_within(&[2.5, 0.0, 0.0], 1.0).unwrap().index, 1);
        assert!(KdTree::new(vec![]).nearest(&[0.0; 3]).is_none());
    }
}
