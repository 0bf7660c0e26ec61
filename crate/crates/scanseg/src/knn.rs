//! k-nearest-neighbor queries over 3D point sets.
//!
//! A static kd-tree with median splits. Ties in distance are broken by
//! lower point index, so query results are fully deterministic.

use crate::error::{Error, Result};
use nalgebra::Vector3;

/// Spatial index over a fixed point set.
pub struct KnnIndex {
    points: Vec<Vector3<f64>>,
    // implicit kd-tree over index permutation
    order: Vec<u32>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy)]
struct Node {
    // range into `order`
    start: u32,
    end: u32,
    axis: u8,
    split: f64,
    left: u32,  // node index, u32::MAX for leaf
    right: u32,
}

const LEAF_SIZE: usize = 16;

impl KnnIndex {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("empty point set".into()));
        }
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        build(&points, &mut order, &mut nodes, 0, points.len());
        Ok(KnnIndex {
            points,
            order,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of the k nearest points to `p` (Euclidean), nearest first;
    /// ties broken by lower index.
    pub fn query(&self, p: &Vector3<f64>, k: usize) -> Result<Vec<u32>> {
        if k == 0 || k > self.points.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} not in 1..={}",
                self.points.len()
            )));
        }
        // bounded max-heap keyed by (distance^2, index), worst on top
        let mut heap: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.search(0, p, k, &mut heap);
        let mut out = heap;
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(out.into_iter().map(|(_, i)| i).collect())
    }

    fn search(&self, node: u32, p: &Vector3<f64>, k: usize, heap: &mut Vec<(f64, u32)>) {
        let n = self.nodes[node as usize];
        if n.left == u32::MAX {
            for &i in &self.order[n.start as usize..n.end as usize] {
                let d2 = (self.points[i as usize] - p).norm_squared();
                push_candidate(heap, k, (d2, i));
            }
            return;
        }
        let delta = p[n.axis as usize] - n.split;
        let (near, far) = if delta <= 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.search(near, p, k, heap);
        // visit the far side unless it provably cannot improve the heap;
        // equality must recurse so index tie-breaks stay exact
        if heap.len() < k || delta * delta <= heap[0].0 {
            self.search(far, p, k, heap);
        }
    }
}

// binary max-heap over (d2, index) with lexicographic order; the worst
// candidate sits at the root so ties resolve to the lower index
fn push_candidate(heap: &mut Vec<(f64, u32)>, k: usize, cand: (f64, u32)) {
    if heap.len() < k {
        heap.push(cand);
        // sift up
        let mut i = heap.len() - 1;
        while i > 0 {
            let parent = (i - 1) / 2;
            if heap[i] > heap[parent] {
                heap.swap(i, parent);
                i = parent;
            } else {
                break;
            }
        }
    } else if cand < heap[0] {
        heap[0] = cand;
        // sift down
        let mut i = 0;
        loop {
            let (l, r) = (2 * i + 1, 2 * i + 2);
            let mut largest = i;
            if l < heap.len() && heap[l] > heap[largest] {
                largest = l;
            }
            if r < heap.len() && heap[r] > heap[largest] {
                largest = r;
            }
            if largest == i {
                break;
            }
            heap.swap(i, largest);
            i = largest;
        }
    }
}

fn build(points: &[Vector3<f64>], order: &mut [u32], nodes: &mut Vec<Node>, start: usize, end: usize) -> u32 {
    let id = nodes.len() as u32;
    nodes.push(Node {
        start: start as u32,
        end: end as u32,
        axis: 0,
        split: 0.0,
        left: u32::MAX,
        right: u32::MAX,
    });
    let len = end - start;
    if len <= LEAF_SIZE {
        return id;
    }
    // split on the longest axis at the median
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in &order[start..end] {
        let p = points[i as usize];
        lo = lo.inf(&p);
        hi = hi.sup(&p);
    }
    let ext = hi - lo;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    if ext[axis] <= 0.0 {
        return id; // all points coincide: keep as leaf
    }
    let mid = start + len / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        (points[a as usize][axis], a)
            .partial_cmp(&(points[b as usize][axis], b))
            .unwrap()
    });
    let split = points[order[mid] as usize][axis];
    let left = build(points, order, nodes, start, mid);
    let right = build(points, order, nodes, mid, end);
    let n = &mut nodes[id as usize];
    n.axis = axis as u8;
    n.split = split;
    n.left = left;
    n.right = right;
    id
}
