//! Discrete Laplace-Beltrami operator and lumped mass matrix.
//!
//! Cotangent weights with clamping to the [1 deg, 179 deg] angle range;
//! scan meshes contain sliver triangles and unclamped weights destabilize
//! the eigensolves downstream. Mass lumping is barycentric (one third of
//! the incident face area per vertex), positive by construction.

use crate::error::Result;
use crate::mesh::TriMesh;
use crate::sparse::SparseOperator;

/// cot(179 deg) .. cot(1 deg)
const COT_MIN: f64 = -57.289_961_630_759_88;
const COT_MAX: f64 = 57.289_961_630_759_88;

fn clamped_cot(a: &nalgebra::Vector3<f64>, b: &nalgebra::Vector3<f64>) -> f64 {
    // cot of the angle between edge vectors a and b
    let cos = a.dot(b);
    let sin = a.cross(b).norm();
    if sin <= f64::MIN_POSITIVE {
        return COT_MAX;
    }
    (cos / sin).clamp(COT_MIN, COT_MAX)
}

/// Symmetric PSD cotangent Laplacian. Off-diagonal entry for edge (i,j) is
/// -1/2 * sum of cotangents of the angles opposite the edge; the diagonal
/// makes row sums zero. Non-manifold edges accumulate one term per
/// incident face.
pub fn cotan_laplacian(mesh: &TriMesh) -> Result<SparseOperator> {
    let v = mesh.vertex_count();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(mesh.face_count() * 12);
    for fi in 0..mesh.face_count() {
        let [i0, i1, i2] = mesh.faces()[fi];
        let [p0, p1, p2] = mesh.face_positions(fi);
        // cotangent at each corner, opposite the edge not touching it
        let c0 = clamped_cot(&(p1 - p0), &(p2 - p0));
        let c1 = clamped_cot(&(p2 - p1), &(p0 - p1));
        let c2 = clamped_cot(&(p0 - p2), &(p1 - p2));
        for (a, b, c) in [
            (i1 as usize, i2 as usize, c0),
            (i2 as usize, i0 as usize, c1),
            (i0 as usize, i1 as usize, c2),
        ] {
            let w = 0.5 * c;
            triplets.push((a, b, -w));
            triplets.push((b, a, -w));
            triplets.push((a, a, w));
            triplets.push((b, b, w));
        }
    }
    SparseOperator::from_triplets(v, triplets, true)
}

/// Diagonal lumped mass matrix; vertex mass is one third of the total
/// incident face area. Trace equals the total surface area.
pub fn lumped_mass(mesh: &TriMesh) -> Result<SparseOperator> {
    let mut mass = vec![0.0f64; mesh.vertex_count()];
    for fi in 0..mesh.face_count() {
        let share = mesh.face_area(fi) / 3.0;
        for &i in &mesh.faces()[fi] {
            mass[i as usize] += share;
        }
    }
    // isolated vertices get a tiny positive mass so the operator stays
    // positive definite and the generalized eigenproblem well-posed
    let floor = mass.iter().cloned().fold(0.0f64, f64::max) * 1e-12 + f64::MIN_POSITIVE;
    for m in &mut mass {
        if *m <= 0.0 {
            *m = floor;
        }
    }
    SparseOperator::diagonal_from(mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::{grid_plane, icosphere};
    use nalgebra::Vector3;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn unit_equilateral() -> TriMesh {
        TriMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.5, 3.0_f64.sqrt() / 2.0, 0.0),
            ],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn equilateral_off_diagonals() {
        let l = cotan_laplacian(&unit_equilateral()).unwrap();
        let expect = -(60.0_f64.to_radians().tan().recip()) / 2.0; // -cot(60)/2
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            assert!((l.get(i, j) - expect).abs() < 1e-12, "{} vs {expect}", l.get(i, j));
            assert!((l.get(j, i) - expect).abs() < 1e-12);
        }
        assert!((expect + 0.288_675_134_594_812_9).abs() < 1e-12);
    }

    #[test]
    fn row_sums_vanish() {
        for mesh in [icosphere(2, 3.0), grid_plane(5, 7, 2.0, 3.0)] {
            let l = cotan_laplacian(&mesh).unwrap();
            let ones = vec![1.0; mesh.vertex_count()];
            let y = l.apply(&ones);
            let max_row_norm = (0..mesh.vertex_count())
                .map(|r| l.row(r).1.iter().map(|v| v * v).sum::<f64>().sqrt())
                .fold(0.0f64, f64::max);
            for v in y {
                assert!(v.abs() <= 1e-8 * max_row_norm);
            }
        }
    }

    #[test]
    fn symmetry_tight() {
        let mesh = crate::testutil::random_mesh(200, 11);
        let l = cotan_laplacian(&mesh).unwrap();
        let max_abs = l.iter().map(|(_, _, v)| v.abs()).fold(0.0f64, f64::max);
        for (r, c, v) in l.iter() {
            assert!((v - l.get(c, r)).abs() <= 1e-10 * max_abs);
        }
    }

    /// Dense quadratic-form oracle for positive semi-definiteness.
    #[test]
    fn quadratic_form_nonnegative() {
        let mesh = crate::testutil::random_mesh(200, 3);
        let l = cotan_laplacian(&mesh).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x: Vec<f64> = (0..mesh.vertex_count())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let norm2: f64 = x.iter().map(|v| v * v).sum();
            assert!(l.quad_form(&x) >= -1e-8 * norm2);
        }
    }

    #[test]
    fn single_triangle_mass() {
        let mesh = unit_equilateral();
        let m = lumped_mass(&mesh).unwrap();
        let area = mesh.face_area(0);
        for i in 0..3 {
            assert!((m.get(i, i) - area / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn mass_trace_is_total_area() {
        let mesh = icosphere(3, 1.0);
        let m = lumped_mass(&mesh).unwrap();
        let trace: f64 = m.diagonal().iter().sum();
        let area = mesh.total_area();
        assert!((trace - area).abs() <= 1e-8 * area);
        // icosphere subdiv 3 approximates the unit sphere within 2%
        let exact = 4.0 * std::f64::consts::PI;
        assert!((trace - exact).abs() / exact < 0.02);
    }

    #[test]
    fn mass_respects_vertex_permutation() {
        let mesh = crate::testutil::random_mesh(60, 17);
        let v = mesh.vertex_count();
        let mut rng = ChaCha12Rng::seed_from_u64(18);
        let mut perm: Vec<usize> = (0..v).collect();
        perm.shuffle(&mut rng);
        let mut inv = vec![0usize; v];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let positions = perm.iter().map(|&old| mesh.positions()[old]).collect();
        let faces = mesh
            .faces()
            .iter()
            .map(|f| [inv[f[0] as usize] as u32, inv[f[1] as usize] as u32, inv[f[2] as usize] as u32])
            .collect();
        let permuted = TriMesh::new(positions, faces, None).unwrap();
        let m0 = lumped_mass(&mesh).unwrap().diagonal();
        let m1 = lumped_mass(&permuted).unwrap().diagonal();
        for (new, &old) in perm.iter().enumerate() {
            assert!((m1[new] - m0[old]).abs() < 1e-12);
        }
    }

    #[test]
    fn rigid_motion_invariance() {
        let mesh = crate::testutil::random_mesh(100, 23);
        let rot = nalgebra::Rotation3::from_euler_angles(0.4, 1.2, -0.8);
        let t = Vector3::new(10.0, -4.0, 2.5);
        let moved = mesh.transformed(|p| rot * p + t).unwrap();
        let (l0, l1) = (cotan_laplacian(&mesh).unwrap(), cotan_laplacian(&moved).unwrap());
        let (m0, m1) = (lumped_mass(&mesh).unwrap(), lumped_mass(&moved).unwrap());
        for ((r, c, a), (_, _, b)) in l0.iter().zip(l1.iter()) {
            assert!((a - b).abs() <= 1e-9, "L[{r},{c}]: {a} vs {b}");
        }
        for (a, b) in m0.diagonal().iter().zip(m1.diagonal()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    /// Sliver triangles hit the cotangent clamp instead of blowing up.
    #[test]
    fn sliver_weights_bounded() {
        let mesh = TriMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.5, 1e-7, 0.0),
            ],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        let l = cotan_laplacian(&mesh).unwrap();
        for (_, _, v) in l.iter() {
            assert!(v.abs() <= 2.0 * COT_MAX + 1e-9);
        }
    }
}
