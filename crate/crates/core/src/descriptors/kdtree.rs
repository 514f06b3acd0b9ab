//! Exact k-nearest-neighbour search over fixed-dimension points.
//!
//! Ties in distance go to the lower point index, both here and in
//! [`brute_force_knn`], so the two agree on every neighbour set.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

pub const DIM: usize = 6;

pub type Point = [f64; DIM];

pub fn squared_distance(a: &Point, b: &Point) -> f64 {
    let mut s = 0.0;
    for i in 0..DIM {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance_sq: f64,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance_sq.total_cmp(&other.distance_sq).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// Static k-d tree; points are referred to by their index in the input.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point>,
    nodes: Vec<Node>,
    root: Option<usize>,
}

impl KdTree {
    pub fn build(points: Vec<Point>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::split(&points, &mut order, 0, &mut nodes);
        Self { points, nodes, root }
    }

    fn split(points: &[Point], idx: &mut [usize], depth: usize, nodes: &mut Vec<Node>) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % DIM;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
        let at = nodes.len();
        nodes.push(Node { point: idx[mid], axis, left: None, right: None });
        let (lo, rest) = idx.split_at_mut(mid);
        let left = Self::split(points, lo, depth + 1, nodes);
        let right = Self::split(points, &mut rest[1..], depth + 1, nodes);
        nodes[at].left = left;
        nodes[at].right = right;
        Some(at)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &Point {
        &self.points[i]
    }

    /// The `k` nearest points, closest first.
    pub fn knn(&self, query: &Point, k: usize) -> Vec<Neighbor> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            if let Some(r) = self.root {
                self.search(r, query, k, &mut heap);
            }
        }
        heap.into_sorted_vec()
    }

    fn search(&self, at: usize, q: &Point, k: usize, heap: &mut BinaryHeap<Neighbor>) {
        let node = &self.nodes[at];
        let p = &self.points[node.point];
        let cand = Neighbor { index: node.point, distance_sq: squared_distance(p, q) };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().expect("heap holds k items") {
            heap.pop();
            heap.push(cand);
        }
        let diff = q[node.axis] - p[node.axis];
        // Points equal on the split axis may sit in either subtree.
        let (near, far) = if diff < 0.0 { (node.left, node.right) } else { (node.right, node.left) };
        if let Some(n) = near {
            self.search(n, q, k, heap);
        }
        if let Some(f) = far {
            if heap.len() < k || diff * diff <= heap.peek().expect("heap holds k items").distance_sq {
                self.search(f, q, k, heap);
            }
        }
    }
}

/// Reference linear scan with the same tie rule.
pub fn brute_force_knn(points: &[Point], query: &Point, k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> =
        points.iter().enumerate().map(|(index, p)| Neighbor { index, distance_sq: squared_distance(p, query) }).collect();
    all.sort();
    all.truncate(k);
    all
}
