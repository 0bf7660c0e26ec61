//! Intrinsic and local geometric descriptors: heat kernel signature and
//! surface variation.

use crate::error::{Error, Result};
use crate::knn::KnnIndex;
use crate::mesh::TriMesh;
use crate::spectral::SpectralBasis;
use ndarray::Array2;
use rayon::prelude::*;

/// Default number of HKS time samples.
pub const DEFAULT_HKS_T: usize = 16;

/// Default neighborhood size for surface variation.
pub const DEFAULT_SIGMA_K: usize = 30;

/// Geometric descriptor bundle for one mesh.
#[derive(Debug, Clone)]
pub struct GeomFeatures {
    /// V x T heat-kernel-signature matrix (raw, strictly positive).
    pub hks: Array2<f64>,
    /// Surface variation in [0, 1/3] per vertex.
    pub sigma: Vec<f64>,
    /// The T time samples, ascending.
    pub time_samples: Vec<f64>,
}

/// Heat kernel signature: hks(v, t) = sum_i exp(-lambda_i t) phi_i(v)^2.
pub fn compute_hks(basis: &SpectralBasis, times: &[f64]) -> Result<Array2<f64>> {
    if times.is_empty() {
        return Err(Error::InvalidArgument("no time samples".into()));
    }
    for w in times.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::InvalidArgument("times must be strictly ascending".into()));
        }
    }
    if times[0] <= 0.0 {
        return Err(Error::InvalidArgument("times must be positive".into()));
    }
    let v = basis.vertex_count();
    let k = basis.k();
    let mut out = Array2::zeros((v, times.len()));
    let decay: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| basis.eigenvalues.iter().map(|&l| (-l * t).exp()).collect())
        .collect();
    for i in 0..v {
        for (j, d) in decay.iter().enumerate() {
            let mut acc = 0.0;
            for m in 0..k {
                let phi = basis.eigenvectors[(i, m)];
                acc += d[m] * phi * phi;
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

/// Log-spaced time grid on [4 ln 10 / lambda_{k-1}, 4 ln 10 / lambda_1],
/// where lambda_1 is the smallest positive eigenvalue (the zero eigenvalue
/// repeats on disconnected scans). For T = 1 the single sample is the
/// geometric mean of the bounds.
pub fn default_hks_times(basis: &SpectralBasis, t_count: usize) -> Result<Vec<f64>> {
    let lam_top = *basis.eigenvalues.last().unwrap_or(&0.0);
    let lam_low = basis
        .eigenvalues
        .iter()
        .copied()
        .find(|&l| l > 1e-8 * lam_top.max(1e-300));
    let lam_low = match lam_low {
        Some(l) if basis.k() >= 2 => l,
        _ => {
            return Err(Error::InvalidArgument(
                "degenerate spectrum: no positive eigenvalue in the basis".into(),
            ))
        }
    };
    if t_count == 0 {
        return Err(Error::InvalidArgument("need at least one time sample".into()));
    }
    let four_ln10 = 4.0 * 10.0_f64.ln();
    let t_min = four_ln10 / lam_top;
    let t_max = four_ln10 / lam_low;
    if t_count == 1 {
        return Ok(vec![(t_min * t_max).sqrt()]);
    }
    if !(t_max > t_min * (1.0 + 1e-9)) {
        return Err(Error::InvalidArgument(
            "degenerate spectral range for HKS times (too few positive eigenvalues; increase eigK)"
                .into(),
        ));
    }
    let (ln_min, ln_max) = (t_min.ln(), t_max.ln());
    Ok((0..t_count)
        .map(|i| (ln_min + (ln_max - ln_min) * i as f64 / (t_count - 1) as f64).exp())
        .collect())
}

/// Surface variation: for each vertex, the covariance of its k nearest
/// vertex positions (Euclidean, including itself) has eigenvalues
/// l1 >= l2 >= l3 >= 0; the descriptor is l3 / (l1 + l2 + l3), zero for
/// an exactly-zero denominator.
pub fn surface_variation(mesh: &TriMesh, k: usize) -> Result<Vec<f64>> {
    surface_variation_of_points(mesh.positions(), k)
}

pub fn surface_variation_of_points(points: &[nalgebra::Vector3<f64>], k: usize) -> Result<Vec<f64>> {
    let v = points.len();
    if v <= k {
        return Err(Error::InvalidArgument(format!(
            "need more than k = {k} points, got {v}"
        )));
    }
    let index = KnnIndex::new(points.to_vec())?;
    let sigmas: Vec<Result<f64>> = points
        .par_iter()
        .map(|p| {
            let nbrs = index.query(p, k)?;
            Ok(covariance_variation(points, &nbrs))
        })
        .collect();
    sigmas.into_iter().collect()
}

fn covariance_variation(points: &[nalgebra::Vector3<f64>], nbrs: &[u32]) -> f64 {
    let n = nbrs.len() as f64;
    let mut mean = nalgebra::Vector3::zeros();
    for &i in nbrs {
        mean += points[i as usize];
    }
    mean /= n;
    let mut cov = nalgebra::Matrix3::zeros();
    for &i in nbrs {
        let d = points[i as usize] - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let mut ev: Vec<f64> = nalgebra::SymmetricEigen::new(cov)
        .eigenvalues
        .iter()
        .map(|&x| x.max(0.0))
        .collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let sum: f64 = ev.iter().sum();
    if sum == 0.0 {
        0.0
    } else {
        (ev[0] / sum).min(1.0 / 3.0)
    }
}

/// Per-time log transform followed by standardization over vertices
/// (zero mean, unit variance). Raw HKS spans orders of magnitude; the
/// network wants comparable channel scales.
pub fn log_standardize_hks(hks: &Array2<f64>) -> Array2<f64> {
    let mut out = hks.mapv(|x| x.max(1e-300).ln());
    for mut col in out.columns_mut() {
        let n = col.len() as f64;
        let mean = col.sum() / n;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let sd = var.sqrt().max(1e-12);
        col.mapv_inplace(|x| (x - mean) / sd);
    }
    out
}

/// Bundle computation with default time grid.
pub fn geom_features(mesh: &TriMesh, basis: &SpectralBasis, t_count: usize, sigma_k: usize) -> Result<GeomFeatures> {
    let time_samples = default_hks_times(basis, t_count)?;
    let hks = compute_hks(basis, &time_samples)?;
    let sigma = surface_variation(mesh, sigma_k)?;
    Ok(GeomFeatures {
        hks,
        sigma,
        time_samples,
    })
}
