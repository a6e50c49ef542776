use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{dist2, Point3};
use crate::error::{Error, Result};

/// Static 3-d tree over a borrowed point slice.
///
/// Queries order candidates by (squared distance, index), so results match a
/// brute-force sort with lowest-index tie breaking exactly.
pub struct KdTree<'a> {
    points: &'a [Point3],
    nodes: Vec<KdNode>,
    root: usize,
}

struct KdNode {
    index: usize,
    axis: usize,
    left: usize,
    right: usize,
}

const NIL: usize = usize::MAX;

#[derive(PartialEq)]
struct Cand(f64, usize);

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Point3]) -> Self {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build(points, &mut idx, 0, &mut nodes);
        Self { points, nodes, root }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point: (index, squared distance).
    pub fn nearest(&self, q: Point3) -> Option<(usize, f64)> {
        let mut best = Cand(f64::INFINITY, NIL);
        self.nearest_rec(self.root, q, &mut best);
        (best.1 != NIL).then_some((best.1, best.0))
    }

    fn nearest_rec(&self, node: usize, q: Point3, best: &mut Cand) {
        if node == NIL {
            return;
        }
        let n = &self.nodes[node];
        let p = self.points[n.index];
        let c = Cand(dist2(p, q), n.index);
        if c < *best {
            *best = c;
        }
        let diff = q[n.axis] - p[n.axis];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.nearest_rec(near, q, best);
        if diff * diff <= best.0 {
            self.nearest_rec(far, q, best);
        }
    }

    /// Indices of all points with squared distance `<= r2` from `q`, ascending by index.
    pub fn within(&self, q: Point3, r2: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(node) = stack.pop() {
            if node == NIL {
                continue;
            }
            let n = &self.nodes[node];
            let p = self.points[n.index];
            if dist2(p, q) <= r2 {
                out.push(n.index);
            }
            let diff = q[n.axis] - p[n.axis];
            let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
            stack.push(near);
            if diff * diff <= r2 {
                stack.push(far);
            }
        }
        out.sort_unstable();
        out
    }

    /// `k` nearest points sorted ascending by (squared distance, index).
    pub fn knn(&self, q: Point3, k: usize) -> Vec<(usize, f64)> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.knn_rec(self.root, q, k, &mut heap);
        }
        let mut out: Vec<(usize, f64)> = heap.into_iter().map(|Cand(d, i)| (i, d)).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    fn knn_rec(&self, node: usize, q: Point3, k: usize, heap: &mut BinaryHeap<Cand>) {
        if node == NIL {
            return;
        }
        let n = &self.nodes[node];
        let p = self.points[n.index];
        let c = Cand(dist2(p, q), n.index);
        if heap.len() < k {
            heap.push(c);
        } else if c < *heap.peek().unwrap() {
            heap.pop();
            heap.push(c);
        }
        let diff = q[n.axis] - p[n.axis];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.knn_rec(near, q, k, heap);
        if heap.len() < k || diff * diff <= heap.peek().unwrap().0 {
            self.knn_rec(far, q, k, heap);
        }
    }
}

fn build(points: &[Point3], idx: &mut [usize], depth: usize, nodes: &mut Vec<KdNode>) -> usize {
    if idx.is_empty() {
        return NIL;
    }
    let axis = depth % 3;
    let mid = idx.len() / 2;
    idx.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let index = idx[mid];
    let slot = nodes.len();
    nodes.push(KdNode {
        index,
        axis,
        left: NIL,
        right: NIL,
    });
    let (lo, rest) = idx.split_at_mut(mid);
    let left = build(points, lo, depth + 1, nodes);
    let right = build(points, &mut rest[1..], depth + 1, nodes);
    nodes[slot].left = left;
    nodes[slot].right = right;
    slot
}

/// For each query row, indices of the `k` nearest cloud points (ascending
/// distance, ties to the lowest index).
pub fn knn(cloud: &[Point3], queries: &[Point3], k: usize) -> Result<Vec<Vec<usize>>> {
    if k > cloud.len() {
        return Err(Error::Argument(format!(
            "knn: k = {k} exceeds cloud size {}",
            cloud.len()
        )));
    }
    let tree = KdTree::new(cloud);
    Ok(queries
        .iter()
        .map(|&q| tree.knn(q, k).into_iter().map(|(i, _)| i).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::fixtures::deterministic_points;

    fn brute(cloud: &[Point3], q: Point3, k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = cloud.iter().enumerate().map(|(i, &p)| (dist2(p, q), i)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    #[test]
    fn query_on_a_point_returns_it() {
        let pts = deterministic_points(50, 9);
        let rows = knn(&pts, &pts, 1).unwrap();
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r, &vec![i]);
        }
    }

    #[test]
    fn collinear_points() {
        let pts: Vec<Point3> = (0..4).map(|i| [i as f64, 0.0, 0.0]).collect();
        assert_eq!(knn(&pts, &[[0.0; 3]], 2).unwrap()[0], vec![0, 1]);
    }

    #[test]
    fn matches_full_sort_oracle() {
        let pts = deterministic_points(128, 21);
        let queries = deterministic_points(40, 22);
        for k in [1, 5, 16, 128] {
            let got = knn(&pts, &queries, k).unwrap();
            for (q, row) in queries.iter().zip(&got) {
                assert_eq!(row, &brute(&pts, *q, k));
            }
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let pts = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        assert_eq!(knn(&pts, &[[0.0; 3]], 3).unwrap()[0], vec![3, 0, 1]);
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest([0.0, 0.0, 5.0]).unwrap().0, 3);
        let dup = vec![[0.0; 3]; 5];
        assert_eq!(KdTree::new(&dup).nearest([1.0, 0.0, 0.0]).unwrap().0, 0);
    }

    #[test]
    fn k_larger_than_cloud_is_rejected() {
        assert!(knn(&deterministic_points(3, 1), &[[0.0; 3]], 4).is_err());
    }
}
