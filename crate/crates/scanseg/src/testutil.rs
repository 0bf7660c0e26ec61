//! Shared helpers for unit tests.

use crate::mesh::TriMesh;
use crate::shapes::grid_plane;
use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

/// Random disc-topology mesh: jittered grid, always valid.
pub fn random_mesh(target_vertices: usize, seed: u64) -> TriMesh {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = (target_vertices as f64).sqrt().ceil() as usize;
    let base = grid_plane(n - 1, n - 1, n as f64, n as f64);
    let positions = base
        .positions()
        .iter()
        .map(|p| {
            Vector3::new(
                p.x + rng.gen_range(-0.3..0.3),
                p.y + rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.4..0.4),
            )
        })
        .collect();
    TriMesh::new(positions, base.faces().to_vec(), None).unwrap()
}

/// Fresh unique temp directory for a test.
pub fn tmpdir(tag: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!(
        "scanseg-{tag}-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    std::fs::create_dir_all(&d).unwrap();
    d
}
