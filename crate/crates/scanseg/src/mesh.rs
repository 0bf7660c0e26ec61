//! Indexed triangle meshes.
//!
//! Positions are in millimeters throughout the crate; the 1.5 mm skin
//! labeling threshold depends on this. Meshes are immutable after
//! construction and validated up front: indices in range, three distinct
//! indices per face, finite coordinates, face areas above tolerance.
//! Non-manifold connectivity is allowed (scan meshes are not guaranteed
//! manifold); operators simply accumulate contributions per incident face.

use crate::error::{Error, Result};
use nalgebra::Vector3;

/// Minimum face area in mm^2 accepted by validation.
pub const MIN_FACE_AREA: f64 = 1e-12;

/// An indexed triangle mesh with optional per-vertex RGB colors in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    positions: Vec<Vector3<f64>>,
    faces: Vec<[u32; 3]>,
    colors: Option<Vec<[f64; 3]>>,
}

impl TriMesh {
    /// Build a mesh, validating every invariant. Vertex and face order are
    /// preserved.
    pub fn new(
        positions: Vec<Vector3<f64>>,
        faces: Vec<[u32; 3]>,
        colors: Option<Vec<[f64; 3]>>,
    ) -> Result<Self> {
        let v = positions.len();
        for (i, p) in positions.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::MeshValidation(format!(
                    "vertex {i} has non-finite coordinates {:?}",
                    p
                )));
            }
        }
        if let Some(c) = &colors {
            if c.len() != v {
                return Err(Error::MeshValidation(format!(
                    "color count {} does not match vertex count {v}",
                    c.len()
                )));
            }
        }
        let mut bad = Vec::new();
        for (fi, f) in faces.iter().enumerate() {
            let [a, b, c] = *f;
            if a as usize >= v || b as usize >= v || c as usize >= v {
                return Err(Error::MeshValidation(format!(
                    "face {fi} references vertex out of range (indices {a},{b},{c}, vertex count {v})"
                )));
            }
            if a == b || b == c || a == c {
                bad.push(fi);
                continue;
            }
            let area = triangle_area(
                &positions[a as usize],
                &positions[b as usize],
                &positions[c as usize],
            );
            if !(area > MIN_FACE_AREA) {
                bad.push(fi);
            }
        }
        if !bad.is_empty() {
            return Err(Error::MeshValidation(format!(
                "{} degenerate face(s): {:?}{}",
                bad.len(),
                &bad[..bad.len().min(16)],
                if bad.len() > 16 { " ..." } else { "" }
            )));
        }
        Ok(TriMesh {
            positions,
            faces,
            colors,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn colors(&self) -> Option<&[[f64; 3]]> {
        self.colors.as_deref()
    }

    /// Corner positions of face `fi`.
    pub fn face_positions(&self, fi: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.faces[fi];
        [
            self.positions[a as usize],
            self.positions[b as usize],
            self.positions[c as usize],
        ]
    }

    pub fn face_area(&self, fi: usize) -> f64 {
        let [p0, p1, p2] = self.face_positions(fi);
        triangle_area(&p0, &p1, &p2)
    }

    /// Unnormalized face normal (cross product; length = 2 * area).
    pub fn face_normal_raw(&self, fi: usize) -> Vector3<f64> {
        let [p0, p1, p2] = self.face_positions(fi);
        (p1 - p0).cross(&(p2 - p0))
    }

    /// Sum of all face areas in mm^2.
    pub fn total_area(&self) -> f64 {
        (0..self.face_count()).map(|f| self.face_area(f)).sum()
    }

    /// Number of incident faces per vertex.
    pub fn vertex_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.vertex_count()];
        for f in &self.faces {
            for &i in f {
                deg[i as usize] += 1;
            }
        }
        deg
    }

    /// Area-weighted vertex normals, normalized to unit length. Vertices
    /// with no incident faces get the zero vector; their indices are
    /// returned separately.
    pub fn vertex_normals(&self) -> (Vec<Vector3<f64>>, Vec<usize>) {
        let mut acc = vec![Vector3::zeros(); self.vertex_count()];
        for fi in 0..self.face_count() {
            let n = self.face_normal_raw(fi);
            for &i in &self.faces[fi] {
                acc[i as usize] += n;
            }
        }
        let mut isolated = Vec::new();
        let deg = self.vertex_degrees();
        for (i, n) in acc.iter_mut().enumerate() {
            if deg[i] == 0 {
                isolated.push(i);
                *n = Vector3::zeros();
            } else {
                let len = n.norm();
                if len > 0.0 {
                    *n /= len;
                }
            }
        }
        (acc, isolated)
    }

    /// Apply a rigid motion (or any affine map) to every position,
    /// producing a new validated mesh.
    pub fn transformed(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Result<Self> {
        TriMesh::new(
            self.positions.iter().map(f).collect(),
            self.faces.clone(),
            self.colors.clone(),
        )
    }

    /// Concatenate two meshes (vertex indices of `other` are offset).
    /// Colors are kept only if both sides have them.
    pub fn concat(&self, other: &TriMesh) -> Result<Self> {
        let off = self.vertex_count() as u32;
        let mut positions = self.positions.clone();
        positions.extend_from_slice(&other.positions);
        let mut faces = self.faces.clone();
        faces.extend(other.faces.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
        let colors = match (&self.colors, &other.colors) {
            (Some(a), Some(b)) => {
                let mut c = a.clone();
                c.extend_from_slice(b);
                Some(c)
            }
            _ => None,
        };
        TriMesh::new(positions, faces, colors)
    }
}

pub fn triangle_area(p0: &Vector3<f64>, p1: &Vector3<f64>, p2: &Vector3<f64>) -> f64 {
    0.5 * (p1 - p0).cross(&(p2 - p0)).norm()
}
