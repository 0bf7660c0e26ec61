//! Primitive mesh generators used by the synthetic-data generator and tests.

use crate::mesh::TriMesh;
use nalgebra::Vector3;
use std::collections::HashMap;

/// Icosphere: subdivided icosahedron projected onto a sphere of radius `r`.
/// Subdivision level 0 is the raw icosahedron (12 vertices, 20 faces);
/// each level quadruples the face count.
pub fn icosphere(subdivisions: u32, r: f64) -> TriMesh {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut positions: Vec<Vector3<f64>> = vec![
        Vector3::new(-1.0, phi, 0.0),
        Vector3::new(1.0, phi, 0.0),
        Vector3::new(-1.0, -phi, 0.0),
        Vector3::new(1.0, -phi, 0.0),
        Vector3::new(0.0, -1.0, phi),
        Vector3::new(0.0, 1.0, phi),
        Vector3::new(0.0, -1.0, -phi),
        Vector3::new(0.0, 1.0, -phi),
        Vector3::new(phi, 0.0, -1.0),
        Vector3::new(phi, 0.0, 1.0),
        Vector3::new(-phi, 0.0, -1.0),
        Vector3::new(-phi, 0.0, 1.0),
    ]
    .into_iter()
    .map(|p| p.normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, positions: &mut Vec<Vector3<f64>>| -> u32 {
            let key = (a.min(b), a.max(b));
            if let Some(&m) = midpoint.get(&key) {
                return m;
            }
            let p = (positions[a as usize] + positions[b as usize]).normalize();
            positions.push(p);
            let idx = (positions.len() - 1) as u32;
            midpoint.insert(key, idx);
            idx
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut positions);
            let bc = mid(b, c, &mut positions);
            let ca = mid(c, a, &mut positions);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }

    for p in &mut positions {
        *p *= r;
    }
    TriMesh::new(positions, faces, None).expect("icosphere is valid by construction")
}

/// Regular grid of (nx+1)*(ny+1) vertices in the z=0 plane spanning
/// [0,sx] x [0,sy], triangulated with a consistent diagonal.
pub fn grid_plane(nx: usize, ny: usize, sx: f64, sy: f64) -> TriMesh {
    let mut positions = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            positions.push(Vector3::new(
                sx * i as f64 / nx as f64,
                sy * j as f64 / ny as f64,
                0.0,
            ));
        }
    }
    let idx = |i: usize, j: usize| (j * (nx + 1) + i) as u32;
    let mut faces = Vec::with_capacity(nx * ny * 2);
    for j in 0..ny {
        for i in 0..nx {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    TriMesh::new(positions, faces, None).expect("grid is valid by construction")
}

/// Closed tube of radius `r` with `sides` vertices per ring, swept along a
/// polyline. Ring frames are parallel-transported to avoid twist; both ends
/// are capped with triangle fans.
pub fn tube(path: &[Vector3<f64>], r: f64, sides: usize) -> TriMesh {
    assert!(path.len() >= 2 && sides >= 3);
    let mut positions = Vec::new();
    let mut faces = Vec::new();

    // initial frame perpendicular to the first segment
    let mut tangent = (path[1] - path[0]).normalize();
    let mut normal = if tangent.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    normal = (normal - tangent * normal.dot(&tangent)).normalize();

    for (i, p) in path.iter().enumerate() {
        if i > 0 {
            let new_tangent = if i + 1 < path.len() {
                ((path[i + 1] - path[i]).normalize() + (path[i] - path[i - 1]).normalize())
                    .normalize()
            } else {
                (path[i] - path[i - 1]).normalize()
            };
            // rotate `normal` into the new tangent plane (parallel transport)
            let axis = tangent.cross(&new_tangent);
            let s = axis.norm();
            if s > 1e-12 {
                let c = tangent.dot(&new_tangent);
                let axis = axis / s;
                normal = normal * c + axis.cross(&normal) * s + axis * axis.dot(&normal) * (1.0 - c);
                normal.normalize_mut();
            }
            tangent = new_tangent;
        }
        let binormal = tangent.cross(&normal);
        let base = positions.len() as u32;
        for k in 0..sides {
            let a = 2.0 * std::f64::consts::PI * k as f64 / sides as f64;
            positions.push(p + normal * (r * a.cos()) + binormal * (r * a.sin()));
        }
        if i > 0 {
            let prev = base - sides as u32;
            for k in 0..sides as u32 {
                let k1 = (k + 1) % sides as u32;
                faces.push([prev + k, base + k, base + k1]);
                faces.push([prev + k, base + k1, prev + k1]);
            }
        }
    }

    // end caps
    let start_center = positions.len() as u32;
    positions.push(path[0]);
    for k in 0..sides as u32 {
        faces.push([start_center, (k + 1) % sides as u32, k]);
    }
    let end_center = positions.len() as u32;
    positions.push(*path.last().unwrap());
    let last_ring = (path.len() as u32 - 1) * sides as u32;
    for k in 0..sides as u32 {
        faces.push([end_center, last_ring + k, last_ring + (k + 1) % sides as u32]);
    }

    TriMesh::new(positions, faces, None).expect("tube is valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        let m = icosphere(0, 1.0);
        assert_eq!(m.vertex_count(), 12);
        assert_eq!(m.face_count(), 20);
        let m = icosphere(3, 1.0);
        assert_eq!(m.vertex_count(), 642);
        assert_eq!(m.face_count(), 1280);
    }

    #[test]
    fn icosphere_radius() {
        let m = icosphere(2, 2.5);
        for p in m.positions() {
            assert!((p.norm() - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn icosphere_area_approaches_sphere() {
        let m = icosphere(3, 1.0);
        let area = m.total_area();
        let exact = 4.0 * std::f64::consts::PI;
        assert!((area - exact).abs() / exact < 0.02, "area {area} vs {exact}");
    }

    #[test]
    fn tube_is_valid_and_closed() {
        let path: Vec<_> = (0..8)
            .map(|i| {
                let t = i as f64 / 7.0;
                Vector3::new(t * 10.0, (t * 3.0).sin(), (t * 2.0).cos())
            })
            .collect();
        let m = tube(&path, 0.5, 6);
        assert!(m.vertex_count() > 8 * 6);
        // closed surface: every edge appears exactly twice
        let mut edge_count: HashMap<(u32, u32), usize> = HashMap::new();
        for f in m.faces() {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *edge_count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        assert!(edge_count.values().all(|&c| c == 2));
    }
}
