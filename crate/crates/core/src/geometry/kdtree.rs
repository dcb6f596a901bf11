use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{PointCloud, Vec3};

const DEFAULT_LEAF_SIZE: usize = 16;

/// A neighbor returned by a k-NN query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: usize, end: usize },
    Split { axis: usize, left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    kind: NodeKind,
}

/// Balanced kd-tree over a fixed set of points.
///
/// Queries return exactly `min(k, N)` neighbors ordered by ascending
/// distance, with ties broken by ascending point index, so the result is
/// identical to an exhaustive scan.
#[derive(Debug, Clone)]
pub struct KdIndex {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    leaf_size: usize,
}

#[derive(Clone, Copy, PartialEq)]
struct Key {
    d2: f64,
    index: usize,
}

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdIndex {
    pub fn new(cloud: &PointCloud) -> Self {
        Self::from_points(cloud.points(), DEFAULT_LEAF_SIZE)
    }

    pub fn from_points(points: &[Vec3], leaf_size: usize) -> Self {
        let leaf_size = leaf_size.max(1);
        let mut index = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
            leaf_size,
        };
        if !points.is_empty() {
            index.build(0, points.len());
        }
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            kind: NodeKind::Leaf { start, end },
        });
        if end - start <= self.leaf_size {
            return id;
        }
        let extent = hi - lo;
        let axis = extent.imax();
        if extent[axis] <= 0.0 {
            // all points coincide
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis]
                .total_cmp(&points[b][axis])
                .then(a.cmp(&b))
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id].kind = NodeKind::Split { axis, left, right };
        id
    }

    /// The `k` nearest neighbors of `query`.
    pub fn knn(&self, query: &Vec3, k: usize) -> Vec<Neighbor> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Key> = BinaryHeap::with_capacity(k + 1);
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if heap.len() == k {
                let worst = heap.peek().map(|w| w.d2).unwrap_or(f64::INFINITY);
                if box_distance2(query, &node.lo, &node.hi) > worst {
                    continue;
                }
            }
            match node.kind {
                NodeKind::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        let key = Key {
                            d2: (self.points[i] - query).norm_squared(),
                            index: i,
                        };
                        if heap.len() < k {
                            heap.push(key);
                        } else if key < *heap.peek().unwrap() {
                            heap.pop();
                            heap.push(key);
                        }
                    }
                }
                NodeKind::Split { axis, left, right } => {
                    let split = self.nodes[right].lo[axis];
                    // push the far child first so the near one is visited first
                    if query[axis] < split {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        let mut keys = heap.into_vec();
        keys.sort();
        keys.into_iter()
            .map(|k| Neighbor {
                index: k.index,
                distance: k.d2.sqrt(),
            })
            .collect()
    }
}

fn box_distance2(q: &Vec3, lo: &Vec3, hi: &Vec3) -> f64 {
    let mut d2 = 0.0;
    for a in 0..3 {
        let d = if q[a] < lo[a] {
            lo[a] - q[a]
        } else if q[a] > hi[a] {
            q[a] - hi[a]
        } else {
            0.0
        };
        d2 += d * d;
    }
    d2
}

/// Exhaustive O(N log N) nearest-neighbor scan with the same ordering contract
/// as [`KdIndex::knn`].
pub fn brute_force_knn(points: &[Vec3], query: &Vec3, k: usize) -> Vec<Neighbor> {
    let mut keys: Vec<Key> = points
        .iter()
        .enumerate()
        .map(|(i, p)| Key {
            d2: (p - query).norm_squared(),
            index: i,
        })
        .collect();
    keys.sort();
    keys.truncate(k);
    keys.into_iter()
        .map(|k| Neighbor {
            index: k.index,
            distance: k.d2.sqrt(),
        })
        .collect()
}
