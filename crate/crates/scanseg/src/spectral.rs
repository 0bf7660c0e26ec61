//! Truncated generalized eigendecomposition L phi = lambda M phi and
//! spectral heat diffusion.
//!
//! The smallest k eigenpairs are computed by Lanczos iteration on the
//! shift-inverted operator M^{1/2} (L + eps M)^{-1} M^{1/2}, with one
//! sparse LDL^T factorization per mesh and full reorthogonalization.
//! Eigenvalues are recovered exactly from the Ritz values of the inverted
//! operator (lambda = 1/theta - eps), so the regularization shift does
//! not bias the spectrum.

use crate::chol::LdlFactor;
use crate::error::{Error, Result};
use crate::sparse::SparseOperator;
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use std::io::{Read, Write};
use std::path::Path;

/// Relative residual tolerance for accepting an eigenpair.
pub const EIGEN_TOL: f64 = 1e-8;

/// Default truncation size used by the pipeline when none is configured.
pub const DEFAULT_EIG_K: usize = 128;

/// Truncated generalized eigenbasis of (L, M). Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    /// k eigenvalues, non-negative, ascending.
    pub eigenvalues: Vec<f64>,
    /// V x k eigenvector matrix, M-orthonormal columns.
    pub eigenvectors: Array2<f64>,
    /// Diagonal of the lumped mass matrix.
    pub mass_diag: Vec<f64>,
}

impl SpectralBasis {
    pub fn vertex_count(&self) -> usize {
        self.eigenvectors.nrows()
    }

    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Compute the k smallest generalized eigenpairs. Deterministic for a
/// fixed `seed` (starting vectors).
pub fn eigensolve(l: &SparseOperator, m: &SparseOperator, k: usize, seed: u64) -> Result<SpectralBasis> {
    let v = l.dim();
    if m.dim() != v {
        return Err(Error::InvalidArgument(format!(
            "operator dimensions differ: L is {v}, M is {}",
            m.dim()
        )));
    }
    if k == 0 || k >= v {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must satisfy 0 < k < vertex count {v}"
        )));
    }
    let mass = m.diagonal();
    if mass.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::InvalidArgument(
            "mass matrix must have strictly positive diagonal".into(),
        ));
    }

    // scale-aware regularization: eps is tiny against the spectral radius,
    // keeping (L + eps M) comfortably positive definite without disturbing
    // the low end of the spectrum
    let scale = l
        .diagonal()
        .iter()
        .zip(&mass)
        .map(|(ld, md)| ld / md)
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let eps = 1e-8 * scale;

    let mut trips: Vec<(usize, usize, f64)> = l.iter().collect();
    for (i, md) in mass.iter().enumerate() {
        trips.push((i, i, md * eps));
    }
    let shifted = SparseOperator::from_triplets(v, trips, true)?;
    let factor = LdlFactor::new(&shifted)?;

    let sqrt_mass: Vec<f64> = mass.iter().map(|d| d.sqrt()).collect();
    // x -> M^{1/2} (L + eps M)^{-1} M^{1/2} x, symmetric positive definite
    let apply_inv = |x: &[f64]| -> Vec<f64> {
        let b: Vec<f64> = x.iter().zip(&sqrt_mass).map(|(v, s)| v * s).collect();
        let mut y = factor.solve(&b);
        for (yi, s) in y.iter_mut().zip(&sqrt_mass) {
            *yi *= s;
        }
        y
    };

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let cap = 50 * k;
    // the zero eigenvalue repeats once per connected component, and a
    // Krylov block only resolves multiplicities up to its size
    let components = component_count(l);
    let block = (components + 4).clamp(KRYLOV_BLOCK, 48);
    let mut m_dim = (2 * k + 16).min(v).min(cap);
    loop {
        let (thetas, ritz) = block_krylov_ritz(&apply_inv, v, m_dim, block, &mut rng);
        // largest thetas of the inverted operator = smallest eigenvalues
        let mut order: Vec<usize> = (0..thetas.len()).collect();
        order.sort_by(|&a, &b| thetas[b].partial_cmp(&thetas[a]).unwrap());

        let take = k.min(order.len());
        let mut eigenvalues = Vec::with_capacity(take);
        let mut eigenvectors = Array2::<f64>::zeros((v, take));
        for (j, &idx) in order[..take].iter().enumerate() {
            let theta = thetas[idx];
            let lambda = if theta > 0.0 { (1.0 / theta - eps).max(0.0) } else { f64::INFINITY };
            eigenvalues.push(lambda);
            // phi = M^{-1/2} psi
            for i in 0..v {
                eigenvectors[(i, j)] = ritz[(i, idx)] / sqrt_mass[i];
            }
        }
        // ascending eigenvalues
        let mut perm: Vec<usize> = (0..take).collect();
        perm.sort_by(|&a, &b| eigenvalues[a].partial_cmp(&eigenvalues[b]).unwrap());
        let eigenvalues: Vec<f64> = perm.iter().map(|&i| eigenvalues[i]).collect();
        let mut sorted_vecs = Array2::<f64>::zeros((v, take));
        for (j, &i) in perm.iter().enumerate() {
            sorted_vecs.column_mut(j).assign(&eigenvectors.column(i));
        }
        let mut basis = SpectralBasis {
            eigenvalues,
            eigenvectors: sorted_vecs,
            mass_diag: mass.clone(),
        };
        apply_sign_convention(&mut basis.eigenvectors);

        let residuals = residual_norms(l, m, &basis);
        let worst = basis
            .eigenvalues
            .iter()
            .zip(&residuals)
            .map(|(lam, r)| r / (1.0 + lam))
            .fold(0.0f64, f64::max);
        if take == k && worst <= EIGEN_TOL {
            return Ok(basis);
        }
        if m_dim >= cap.min(v) {
            return Err(Error::EigenNonConvergence {
                iterations: m_dim,
                worst_residual: worst,
            });
        }
        m_dim = (m_dim * 2).min(cap).min(v);
    }
}

/// ||L phi_i - lambda_i M phi_i||_2 for each pair.
pub fn residual_norms(l: &SparseOperator, m: &SparseOperator, basis: &SpectralBasis) -> Vec<f64> {
    let v = basis.vertex_count();
    let mut out = Vec::with_capacity(basis.k());
    let mut phi = vec![0.0f64; v];
    for (j, &lam) in basis.eigenvalues.iter().enumerate() {
        for i in 0..v {
            phi[i] = basis.eigenvectors[(i, j)];
        }
        let lphi = l.apply(&phi);
        let mphi = m.apply(&phi);
        let r: f64 = lphi
            .iter()
            .zip(&mphi)
            .map(|(a, b)| {
                let d = a - lam * b;
                d * d
            })
            .sum();
        out.push(r.sqrt());
    }
    out
}

/// Minimum Krylov block size; must cover the eigenvalue multiplicities
/// expected on symmetric meshes (spheres reach 7).
const KRYLOV_BLOCK: usize = 8;

/// Number of connected components of the operator's adjacency graph.
pub fn component_count(l: &SparseOperator) -> usize {
    let n = l.dim();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (r, c, _) in l.iter() {
        if r != c {
            let (a, b) = (find(&mut parent, r), find(&mut parent, c));
            if a != b {
                parent[a] = b;
            }
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

/// Block Krylov subspace with full reorthogonalization, followed by an
/// explicit Rayleigh-Ritz projection. Blocking is what lets repeated
/// eigenvalues surface with their full multiplicity; a single Lanczos
/// vector only finds one copy per cluster.
fn block_krylov_ritz(
    apply: &dyn Fn(&[f64]) -> Vec<f64>,
    v: usize,
    m_dim: usize,
    block: usize,
    rng: &mut ChaCha12Rng,
) -> (Vec<f64>, Array2<f64>) {
    let m_dim = m_dim.min(v);
    let block = block.min(m_dim);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(m_dim);

    let fresh = |q: &Vec<Vec<f64>>, rng: &mut ChaCha12Rng| -> Vec<f64> {
        loop {
            let mut w: Vec<f64> = (0..v).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for _ in 0..2 {
                for qi in q {
                    let c = dot(&w, qi);
                    for (wi, qq) in w.iter_mut().zip(qi) {
                        *wi -= c * qq;
                    }
                }
            }
            let n = norm(&w);
            if n > 1e-8 {
                for wi in &mut w {
                    *wi /= n;
                }
                return w;
            }
        }
    };

    let mut current: Vec<Vec<f64>> = Vec::with_capacity(block);
    for _ in 0..block {
        let w = fresh(&q, rng);
        q.push(w.clone());
        current.push(w);
    }
    while q.len() < m_dim {
        let mut next = Vec::with_capacity(block);
        for x in &current {
            if q.len() >= m_dim {
                break;
            }
            let mut w = apply(x);
            for _ in 0..2 {
                for qi in &q {
                    let c = dot(&w, qi);
                    for (wi, qq) in w.iter_mut().zip(qi) {
                        *wi -= c * qq;
                    }
                }
            }
            let n = norm(&w);
            let w = if n > 1e-12 {
                w.iter().map(|x| x / n).collect()
            } else {
                fresh(&q, rng)
            };
            q.push(w.clone());
            next.push(w);
        }
        if next.is_empty() {
            break;
        }
        current = next;
    }

    // Rayleigh-Ritz: T = Q^T (C Q)
    let m_act = q.len();
    let w: Vec<Vec<f64>> = q.iter().map(|qi| apply(qi)).collect();
    let mut t = nalgebra::DMatrix::<f64>::zeros(m_act, m_act);
    for i in 0..m_act {
        for j in i..m_act {
            let val = 0.5 * (dot(&q[i], &w[j]) + dot(&q[j], &w[i]));
            t[(i, j)] = val;
            t[(j, i)] = val;
        }
    }
    let eig = nalgebra::SymmetricEigen::new(t);
    let thetas: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    let mut ritz = Array2::<f64>::zeros((v, m_act));
    for col in 0..m_act {
        for (j, qj) in q.iter().enumerate() {
            let s = eig.eigenvectors[(j, col)];
            if s != 0.0 {
                for i in 0..v {
                    ritz[(i, col)] += s * qj[i];
                }
            }
        }
    }
    (thetas, ritz)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Make each column's entry of largest magnitude positive (first index on
/// ties), for reproducible serialization.
pub fn apply_sign_convention(vectors: &mut Array2<f64>) {
    for mut col in vectors.columns_mut() {
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for (i, &x) in col.iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.mapv_inplace(|x| -x);
        }
    }
}

/// Spectral heat diffusion: per channel c,
/// y_c = Phi diag(exp(-lambda t_c)) Phi^T M x_c.
/// `x` is V x C; `times` has one non-negative entry per channel.
pub fn heat_diffuse(basis: &SpectralBasis, x: &Array2<f64>, times: &[f64]) -> Result<Array2<f64>> {
    let v = basis.vertex_count();
    let c = x.ncols();
    if x.nrows() != v {
        return Err(Error::InvalidArgument(format!(
            "input has {} rows, basis has {v} vertices",
            x.nrows()
        )));
    }
    if times.len() != c {
        return Err(Error::InvalidArgument(format!(
            "{} diffusion times for {c} channels",
            times.len()
        )));
    }
    if let Some(t) = times.iter().find(|t| **t < 0.0 || !t.is_finite()) {
        return Err(Error::InvalidArgument(format!("negative diffusion time {t}")));
    }
    // weight rows by mass, project, decay, reconstruct
    let mut mx = x.clone();
    for (i, &md) in basis.mass_diag.iter().enumerate() {
        for j in 0..c {
            mx[(i, j)] *= md;
        }
    }
    let mut coeffs = basis.eigenvectors.t().dot(&mx); // k x C
    for (j, &t) in times.iter().enumerate() {
        for i in 0..basis.k() {
            coeffs[(i, j)] *= (-basis.eigenvalues[i] * t).exp();
        }
    }
    Ok(basis.eigenvectors.dot(&coeffs))
}

const SPEC_MAGIC: &[u8; 4] = b"SPEC";
const SPEC_VERSION: u32 = 1;

/// Write the basis cache: magic "SPEC", u32 version, u32 V, u32 k, then
/// f64 eigenvalues[k], f64 eigenvectors[V*k] row-major, f64 massDiag[V],
/// all little-endian.
pub fn write_basis(basis: &SpectralBasis, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let r: std::io::Result<()> = (|| {
        w.write_all(SPEC_MAGIC)?;
        w.write_all(&SPEC_VERSION.to_le_bytes())?;
        w.write_all(&(basis.vertex_count() as u32).to_le_bytes())?;
        w.write_all(&(basis.k() as u32).to_le_bytes())?;
        for &ev in &basis.eigenvalues {
            w.write_all(&ev.to_le_bytes())?;
        }
        for row in basis.eigenvectors.rows() {
            for &x in row {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        for &md in &basis.mass_diag {
            w.write_all(&md.to_le_bytes())?;
        }
        w.flush()
    })();
    r.map_err(|e| Error::io(path, e))
}

pub fn read_basis(path: impl AsRef<Path>) -> Result<SpectralBasis> {
    let path = path.as_ref();
    let mut data = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut data)
        .map_err(|e| Error::io(path, e))?;
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > data.len() {
            return Err(Error::format(path, *off as u64, "truncated basis cache"));
        }
        let s = &data[*off..*off + n];
        *off += n;
        Ok(s)
    };
    if take(&mut off, 4)? != SPEC_MAGIC {
        return Err(Error::format(path, 0, "bad magic (expected \"SPEC\")"));
    }
    let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    if version != SPEC_VERSION {
        return Err(Error::format(path, 4, format!("unsupported version {version}")));
    }
    let v = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let k = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let f64s = |off: &mut usize, n: usize| -> Result<Vec<f64>> {
        let bytes = take(off, n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let eigenvalues = f64s(&mut off, k)?;
    let flat = f64s(&mut off, v * k)?;
    let eigenvectors = Array2::from_shape_vec((v, k), flat).unwrap();
    let mass_diag = f64s(&mut off, v)?;
    if off != data.len() {
        return Err(Error::format(path, off as u64, "trailing bytes in basis cache"));
    }
    Ok(SpectralBasis {
        eigenvalues,
        eigenvectors,
        mass_diag,
    })
}

/// M-weighted mean of each column of x.
pub fn mass_weighted_mean(mass: &[f64], x: &Array2<f64>) -> Array1<f64> {
    let total: f64 = mass.iter().sum();
    let mut out = Array1::zeros(x.ncols());
    for j in 0..x.ncols() {
        let mut acc = 0.0;
        for i in 0..x.nrows() {
            acc += mass[i] * x[(i, j)];
        }
        out[j] = acc / total;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laplace::{cotan_laplacian, lumped_mass};
    use crate::shapes::icosphere;

    fn basis_for(mesh: &crate::mesh::TriMesh, k: usize) -> (SparseOperator, SparseOperator, SpectralBasis) {
        let l = cotan_laplacian(mesh).unwrap();
        let m = lumped_mass(mesh).unwrap();
        let b = eigensolve(&l, &m, k, 0).unwrap();
        (l, m, b)
    }

    #[test]
    fn constant_first_mode() {
        let mesh = icosphere(2, 1.0);
        let (_, m, basis) = basis_for(&mesh, 8);
        assert!(basis.eigenvalues[0] <= 1e-6 * basis.eigenvalues[1]);
        let total_mass: f64 = m.diagonal().iter().sum();
        let expect = 1.0 / total_mass.sqrt();
        let col0 = basis.eigenvectors.column(0);
        let sign = if col0[0] >= 0.0 { 1.0 } else { -1.0 };
        for &x in col0 {
            assert!((x - sign * expect).abs() < 1e-6, "{x} vs {expect}");
        }
    }

    #[test]
    fn m_orthonormal_and_residuals() {
        let mesh = crate::testutil::random_mesh(150, 5);
        let (l, m, basis) = basis_for(&mesh, 12);
        let md = m.diagonal();
        for a in 0..basis.k() {
            for b in a..basis.k() {
                let mut acc = 0.0;
                for i in 0..basis.vertex_count() {
                    acc += basis.eigenvectors[(i, a)] * md[i] * basis.eigenvectors[(i, b)];
                }
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((acc - expect).abs() <= 1e-6, "gram[{a},{b}] = {acc}");
            }
        }
        for (lam, r) in basis.eigenvalues.iter().zip(residual_norms(&l, &m, &basis)) {
            assert!(r <= 1e-6 * (1.0 + lam));
        }
    }

    /// Dense generalized eigensolver oracle.
    #[test]
    fn matches_dense_oracle() {
        let mesh = crate::testutil::random_mesh(120, 9);
        let (l, m, basis) = basis_for(&mesh, 10);
        let md = m.diagonal();
        let mut b = l.to_dense();
        let v = l.dim();
        for i in 0..v {
            for j in 0..v {
                b[(i, j)] /= (md[i] * md[j]).sqrt();
            }
        }
        let eig = nalgebra::SymmetricEigen::new(b);
        let mut dense: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        dense.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (i, lam) in basis.eigenvalues.iter().enumerate() {
            assert!(
                (lam - dense[i].max(0.0)).abs() <= 1e-6 * (1.0 + lam),
                "lambda_{i}: {lam} vs dense {}",
                dense[i]
            );
        }
    }

    /// Unit sphere spectrum: eigenvalues cluster near l(l+1) with
    /// multiplicities 3, 5, 7 for l = 1, 2, 3.
    #[test]
    fn icosphere_spectrum() {
        let mesh = icosphere(3, 1.0);
        let (_, _, basis) = basis_for(&mesh, 16);
        let mut idx = 1;
        for (l, mult) in [(1usize, 3usize), (2, 5), (3, 7)] {
            let expect = (l * (l + 1)) as f64;
            for _ in 0..mult {
                let lam = basis.eigenvalues[idx];
                assert!(
                    (lam - expect).abs() / expect < 0.05,
                    "eigenvalue {idx} = {lam}, expected near {expect}"
                );
                idx += 1;
            }
        }
    }

    #[test]
    fn k_out_of_range_rejected() {
        let mesh = icosphere(1, 1.0);
        let l = cotan_laplacian(&mesh).unwrap();
        let m = lumped_mass(&mesh).unwrap();
        assert!(eigensolve(&l, &m, mesh.vertex_count(), 0).is_err());
        assert!(eigensolve(&l, &m, 0, 0).is_err());
    }

    #[test]
    fn determinism_per_seed() {
        let mesh = icosphere(2, 1.0);
        let l = cotan_laplacian(&mesh).unwrap();
        let m = lumped_mass(&mesh).unwrap();
        let b1 = eigensolve(&l, &m, 6, 42).unwrap();
        let b2 = eigensolve(&l, &m, 6, 42).unwrap();
        assert_eq!(b1.eigenvalues, b2.eigenvalues);
        assert_eq!(b1.eigenvectors, b2.eigenvectors);
    }

    use ndarray::Array2;

    fn rand_field(v: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Array2::from_shape_fn((v, c), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn zero_time_is_projection() {
        let mesh = icosphere(2, 1.0);
        let (_, _, basis) = basis_for(&mesh, 10);
        let v = basis.vertex_count();
        // input already in the span: exact identity at t = 0
        let coeff = rand_field(10, 2, 3);
        let x = basis.eigenvectors.dot(&coeff);
        let y = heat_diffuse(&basis, &x, &[0.0, 0.0]).unwrap();
        for i in 0..v {
            for j in 0..2 {
                assert!((x[(i, j)] - y[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn constant_preserved_for_any_time() {
        let mesh = icosphere(2, 1.0);
        let (_, _, basis) = basis_for(&mesh, 10);
        let v = basis.vertex_count();
        let x = Array2::from_elem((v, 1), 3.25);
        for t in [0.0, 0.1, 10.0, 1e4] {
            let y = heat_diffuse(&basis, &x, &[t]).unwrap();
            for i in 0..v {
                assert!((y[(i, 0)] - 3.25).abs() < 1e-6, "t={t}");
            }
        }
    }

    /// Weighted-mean oracle: at very large times only the constant mode
    /// survives, i.e. every channel approaches its M-weighted mean.
    #[test]
    fn long_time_reaches_weighted_mean() {
        let mesh = crate::testutil::random_mesh(100, 13);
        let (_, _, basis) = basis_for(&mesh, 12);
        let x = rand_field(basis.vertex_count(), 3, 4);
        let y = heat_diffuse(&basis, &x, &[1e6 / basis.eigenvalues[1], 1e7, 1e9]).unwrap();
        let mean = mass_weighted_mean(&basis.mass_diag, &x);
        for j in 0..3 {
            for i in 0..basis.vertex_count() {
                assert!(
                    (y[(i, j)] - mean[j]).abs() <= 1e-5,
                    "channel {j}: {} vs mean {}",
                    y[(i, j)],
                    mean[j]
                );
            }
        }
    }

    #[test]
    fn semigroup_property() {
        let mesh = icosphere(2, 1.0);
        let (_, _, basis) = basis_for(&mesh, 10);
        let x = rand_field(basis.vertex_count(), 2, 5);
        let a = heat_diffuse(&basis, &heat_diffuse(&basis, &x, &[0.3, 0.7]).unwrap(), &[0.5, 0.1]).unwrap();
        let b = heat_diffuse(&basis, &x, &[0.8, 0.8]).unwrap();
        for (p, q) in a.iter().zip(b.iter()) {
            assert!((p - q).abs() < 1e-8);
        }
    }

    #[test]
    fn diffusion_contracts_m_norm() {
        let mesh = icosphere(2, 1.0);
        let (_, _, basis) = basis_for(&mesh, 10);
        let x = rand_field(basis.vertex_count(), 1, 6);
        let m_norm = |y: &Array2<f64>| -> f64 {
            y.column(0)
                .iter()
                .zip(&basis.mass_diag)
                .map(|(v, m)| v * v * m)
                .sum::<f64>()
                .sqrt()
        };
        let projected = heat_diffuse(&basis, &x, &[0.0]).unwrap();
        let mut prev = m_norm(&projected);
        for t in [0.01, 0.1, 0.5, 1.0, 5.0] {
            let y = heat_diffuse(&basis, &x, &[t]).unwrap();
            let n = m_norm(&y);
            assert!(n <= prev + 1e-10, "t={t}: {n} > {prev}");
            prev = n;
        }
    }

    #[test]
    fn monotone_smoothing_toward_mean() {
        let mesh = crate::testutil::random_mesh(80, 21);
        let (_, _, basis) = basis_for(&mesh, 10);
        let x = rand_field(basis.vertex_count(), 1, 7);
        let mean = mass_weighted_mean(&basis.mass_diag, &x)[0];
        let dev_norm = |y: &Array2<f64>| -> f64 {
            y.column(0)
                .iter()
                .zip(&basis.mass_diag)
                .map(|(v, m)| (v - mean) * (v - mean) * m)
                .sum::<f64>()
        };
        let mut prev = f64::INFINITY;
        for i in 0..10 {
            let t = 0.02 * i as f64;
            let y = heat_diffuse(&basis, &x, &[t]).unwrap();
            let n = dev_norm(&y);
            assert!(n <= prev + 1e-10);
            prev = n;
        }
    }

    #[test]
    fn negative_time_rejected() {
        let mesh = icosphere(1, 1.0);
        let (_, _, basis) = basis_for(&mesh, 5);
        let x = Array2::zeros((basis.vertex_count(), 1));
        assert!(heat_diffuse(&basis, &x, &[-0.5]).is_err());
    }

    #[test]
    fn basis_cache_round_trip() {
        let mesh = icosphere(2, 1.0);
        let (_, _, basis) = basis_for(&mesh, 7);
        let dir = std::env::temp_dir().join(format!("scanseg-spec-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("basis.spec");
        write_basis(&basis, &path).unwrap();
        let back = read_basis(&path).unwrap();
        assert_eq!(basis, back);

        // corrupt magic
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        let bad = dir.join("bad.spec");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(read_basis(&bad).is_err());
    }
}
