//! Exact point-to-surface distance queries, BVH-accelerated.

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use nalgebra::Vector3;

/// Closest point on triangle (p0, p1, p2) to `p` (face interior, edge, or
/// vertex case).
pub fn closest_point_on_triangle(
    p: &Vector3<f64>,
    p0: &Vector3<f64>,
    p1: &Vector3<f64>,
    p2: &Vector3<f64>,
) -> Vector3<f64> {
    let ab = p1 - p0;
    let ac = p2 - p0;
    let ap = p - p0;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *p0;
    }
    let bp = p - p1;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *p1;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return p0 + ab * v;
    }
    let cp = p - p2;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *p2;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return p0 + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return p1 + (p2 - p1) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    p0 + ab * v + ac * w
}

#[derive(Clone, Copy)]
struct Aabb {
    lo: Vector3<f64>,
    hi: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Vector3::repeat(f64::INFINITY),
            hi: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vector3<f64>) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn merge(&mut self, other: &Aabb) {
        self.lo = self.lo.inf(&other.lo);
        self.hi = self.hi.sup(&other.hi);
    }

    /// Squared distance from a point to the box (zero inside).
    fn dist2(&self, p: &Vector3<f64>) -> f64 {
        let mut d2 = 0.0;
        for a in 0..3 {
            let v = p[a].clamp(self.lo[a], self.hi[a]) - p[a];
            d2 += v * v;
        }
        d2
    }
}

struct Node {
    aabb: Aabb,
    // leaf: [start, end) into order; inner: children indices
    start: u32,
    end: u32,
    left: u32,
    right: u32,
}

/// Bounding volume hierarchy over a mesh's triangles for nearest-surface
/// queries.
pub struct SurfaceBvh {
    tris: Vec<[Vector3<f64>; 3]>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

const BVH_LEAF: usize = 4;

impl SurfaceBvh {
    pub fn new(mesh: &TriMesh) -> Result<Self> {
        if mesh.face_count() == 0 {
            return Err(Error::InvalidArgument("mesh has no faces".into()));
        }
        let tris: Vec<[Vector3<f64>; 3]> = (0..mesh.face_count())
            .map(|f| mesh.face_positions(f))
            .collect();
        let centroids: Vec<Vector3<f64>> = tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let mut nodes = Vec::new();
        build(&tris, &centroids, &mut order, &mut nodes, 0, tris.len());
        Ok(SurfaceBvh { tris, order, nodes })
    }

    /// Minimum Euclidean distance from `p` to the surface.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.distance2(p).sqrt()
    }

    pub fn distance2(&self, p: &Vector3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        self.query(0, p, &mut best);
        best
    }

    fn query(&self, node: u32, p: &Vector3<f64>, best: &mut f64) {
        let n = &self.nodes[node as usize];
        if n.aabb.dist2(p) >= *best {
            return;
        }
        if n.left == u32::MAX {
            for &ti in &self.order[n.start as usize..n.end as usize] {
                let t = &self.tris[ti as usize];
                let q = closest_point_on_triangle(p, &t[0], &t[1], &t[2]);
                let d2 = (q - p).norm_squared();
                if d2 < *best {
                    *best = d2;
                }
            }
            return;
        }
        // nearer child first for tighter pruning
        let (l, r) = (n.left, n.right);
        let dl = self.nodes[l as usize].aabb.dist2(p);
        let dr = self.nodes[r as usize].aabb.dist2(p);
        if dl <= dr {
            self.query(l, p, best);
            self.query(r, p, best);
        } else {
            self.query(r, p, best);
            self.query(l, p, best);
        }
    }
}

fn build(
    tris: &[[Vector3<f64>; 3]],
    centroids: &[Vector3<f64>],
    order: &mut [u32],
    nodes: &mut Vec<Node>,
    start: usize,
    end: usize,
) -> u32 {
    let mut aabb = Aabb::empty();
    for &ti in &order[start..end] {
        for p in &tris[ti as usize] {
            aabb.grow(p);
        }
    }
    let id = nodes.len() as u32;
    nodes.push(Node {
        aabb,
        start: start as u32,
        end: end as u32,
        left: u32::MAX,
        right: u32::MAX,
    });
    let len = end - start;
    if len <= BVH_LEAF {
        return id;
    }
    // median split on the longest centroid axis
    let mut c = Aabb::empty();
    for &ti in &order[start..end] {
        c.grow(&centroids[ti as usize]);
    }
    let ext = c.hi - c.lo;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    if !(ext[axis] > 0.0) {
        return id; // coincident centroids: leave as leaf
    }
    let mid = start + len / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        (centroids[a as usize][axis], a)
            .partial_cmp(&(centroids[b as usize][axis], b))
            .unwrap()
    });
    let left = build(tris, centroids, order, nodes, start, mid);
    let right = build(tris, centroids, order, nodes, mid, end);
    let mut merged = nodes[left as usize].aabb;
    merged.merge(&nodes[right as usize].aabb);
    let n = &mut nodes[id as usize];
    n.aabb = merged;
    n.left = left;
    n.right = right;
    id
}

/// Minimum distance from `p` to the mesh surface (single query; builds no
/// acceleration structure).
pub fn point_to_surface_brute(p: &Vector3<f64>, mesh: &TriMesh) -> f64 {
    let mut best = f64::INFINITY;
    for fi in 0..mesh.face_count() {
        let [a, b, c] = mesh.face_positions(fi);
        let q = closest_point_on_triangle(p, &a, &b, &c);
        best = best.min((q - p).norm_squared());
    }
    best.sqrt()
}
