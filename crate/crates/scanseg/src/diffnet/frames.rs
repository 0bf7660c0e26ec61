//! Per-vertex tangent frames and the one-ring tangent-gradient operator.
//!
//! The gradient of a scalar vertex function is estimated per vertex by a
//! least-squares fit over one-ring edge differences, expressed in that
//! vertex's tangent basis and encoded as a complex number
//! g = <grad f, e1> + i <grad f, e2>. The operator is a sparse complex
//! matrix with one row per vertex, nonzero only on the vertex and its
//! one-ring.

use crate::error::Result;
use crate::mesh::TriMesh;
use nalgebra::{Matrix2, Vector2, Vector3};
use std::collections::BTreeSet;

/// Orthonormal tangent frames plus the sparse gradient operator rows.
#[derive(Debug, Clone)]
pub struct TangentFrames {
    pub e1: Vec<Vector3<f64>>,
    pub e2: Vec<Vector3<f64>>,
    pub normal: Vec<Vector3<f64>>,
    /// CSR over vertices: row v covers v and its one-ring.
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub coef_re: Vec<f64>,
    pub coef_im: Vec<f64>,
    /// Vertices with no incident faces (zero rows, zero frames).
    pub isolated: Vec<usize>,
}

/// Deterministic tangent basis: e1 is the projection of the global x-axis
/// unless nearly parallel to the normal, then the y-axis; e2 = n x e1.
pub fn tangent_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let cand = Vector3::x();
    let proj = cand - n * n.dot(&cand);
    let e1 = if proj.norm() >= 1e-3 {
        proj.normalize()
    } else {
        let cand = Vector3::y();
        (cand - n * n.dot(&cand)).normalize()
    };
    let e2 = n.cross(&e1);
    (e1, e2)
}

/// Build frames and the gradient operator for a mesh.
pub fn build_tangent_frames(mesh: &TriMesh) -> Result<TangentFrames> {
    let v = mesh.vertex_count();
    let (normals, isolated) = mesh.vertex_normals();

    // one-ring adjacency, deterministic order
    let mut rings: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); v];
    for f in mesh.faces() {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            rings[a as usize].insert(b);
            rings[b as usize].insert(a);
        }
    }

    let mut e1s = Vec::with_capacity(v);
    let mut e2s = Vec::with_capacity(v);
    let mut row_ptr = vec![0usize; v + 1];
    let mut cols = Vec::new();
    let mut coef_re = Vec::new();
    let mut coef_im = Vec::new();

    for i in 0..v {
        let n = normals[i];
        if n == Vector3::zeros() {
            e1s.push(Vector3::zeros());
            e2s.push(Vector3::zeros());
            row_ptr[i + 1] = cols.len();
            continue;
        }
        let (e1, e2) = tangent_basis(&n);
        e1s.push(e1);
        e2s.push(e2);

        let nbrs: Vec<u32> = rings[i].iter().cloned().collect();
        // normal equations over one-ring edge differences
        let p = mesh.positions()[i];
        let mut ata = Matrix2::<f64>::zeros();
        let mut rows2 = Vec::with_capacity(nbrs.len());
        for &j in &nbrs {
            let e = mesh.positions()[j as usize] - p;
            let x = Vector2::new(e.dot(&e1), e.dot(&e2));
            ata += x * x.transpose();
            rows2.push(x);
        }
        // tiny Tikhonov term keeps rank-deficient rings solvable
        let reg = 1e-10 * (ata.trace().max(1e-12));
        ata[(0, 0)] += reg;
        ata[(1, 1)] += reg;
        let inv = ata.try_inverse().unwrap_or_else(Matrix2::zeros);

        // coefficient for neighbor j: c_j = (A^T A)^-1 x_j; for the center
        // vertex, minus the sum (differences f_j - f_i)
        let mut center = Vector2::zeros();
        let mut entries: Vec<(u32, Vector2<f64>)> = Vec::with_capacity(nbrs.len() + 1);
        for (&j, x) in nbrs.iter().zip(&rows2) {
            let c = inv * x;
            center -= c;
            entries.push((j, c));
        }
        entries.push((i as u32, center));
        entries.sort_unstable_by_key(|&(j, _)| j);
        for (j, c) in entries {
            cols.push(j);
            coef_re.push(c.x);
            coef_im.push(c.y);
        }
        row_ptr[i + 1] = cols.len();
    }
    Ok(TangentFrames {
        e1: e1s,
        e2: e2s,
        normal: normals,
        row_ptr,
        cols,
        coef_re,
        coef_im,
        isolated,
    })
}

impl TangentFrames {
    pub fn vertex_count(&self) -> usize {
        self.e1.len()
    }

    /// Apply the operator to a scalar function: returns (re, im) parts of
    /// the complex tangent gradient per vertex.
    pub fn gradient(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let v = self.vertex_count();
        let mut re = vec![0.0; v];
        let mut im = vec![0.0; v];
        for i in 0..v {
            let (mut ar, mut ai) = (0.0, 0.0);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let x = f[self.cols[k] as usize];
                ar += self.coef_re[k] * x;
                ai += self.coef_im[k] * x;
            }
            re[i] = ar;
            im[i] = ai;
        }
        (re, im)
    }

    /// Rotate each vertex's tangent basis by an angle, updating e1/e2 and
    /// the operator rows (used by gauge-invariance checks).
    pub fn rotated(&self, angles: &[f64]) -> TangentFrames {
        let mut out = self.clone();
        for i in 0..self.vertex_count() {
            let (c, s) = (angles[i].cos(), angles[i].sin());
            out.e1[i] = self.e1[i] * c + self.e2[i] * s;
            out.e2[i] = -self.e1[i] * s + self.e2[i] * c;
            // g' = e^{-i theta} g applies to every coefficient in the row
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let (re, im) = (self.coef_re[k], self.coef_im[k]);
                out.coef_re[k] = re * c + im * s;
                out.coef_im[k] = -re * s + im * c;
            }
        }
        out
    }
}
