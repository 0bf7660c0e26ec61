//! Multi-view feature lifting: bilinear sampling of per-view feature maps
//! at projected vertex locations, z-buffer visibility weighting, and
//! per-vertex fusion into mean/variance statistics.

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::featio::FeatureMap;
use crate::mesh::TriMesh;
use crate::raster::{render_depth, DepthBuffer};
use nalgebra::Vector3;
use ndarray::Array2;
use rayon::prelude::*;

/// Depth tolerance in mm for the z-buffer occlusion test; keeps raster
/// quantization from rejecting vertices that lie on the visible surface.
pub const OCCLUSION_EPS_MM: f64 = 2.0;

/// How per-view weights are assigned before fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// 1 for every view whose frustum contains the vertex.
    Frustum,
    /// Backface cosine times binary z-buffer occlusion test.
    Visibility,
}

/// Where the variance is centered. The weighted mean is the default;
/// the unweighted variant exists for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceCenter {
    WeightedMean,
    UnweightedMean,
}

/// Per-vertex fusion output.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatures {
    /// V x C weighted mean.
    pub mean: Array2<f64>,
    /// V x C weighted variance, entrywise non-negative.
    pub variance: Array2<f64>,
    /// Sum of unnormalized weights per vertex.
    pub visibility_sum: Vec<f64>,
    /// Number of views with positive weight per vertex.
    pub coverage: Vec<u32>,
}

/// Bilinear sample of all channels at continuous pixel coordinates
/// (u, v) in [0, W-1] x [0, H-1]. Integer coordinates return the exact
/// texel. Callers must gate on the projection's frustum flag.
pub fn sample_bilinear(map: &FeatureMap, u: f64, v: f64) -> Vec<f64> {
    debug_assert!(u >= 0.0 && u <= (map.width - 1) as f64);
    debug_assert!(v >= 0.0 && v <= (map.height - 1) as f64);
    let x0 = (u.floor() as usize).min(map.width - 1);
    let y0 = (v.floor() as usize).min(map.height - 1);
    let x1 = (x0 + 1).min(map.width - 1);
    let y1 = (y0 + 1).min(map.height - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let (t00, t10) = (map.texel(x0, y0), map.texel(x1, y0));
    let (t01, t11) = (map.texel(x0, y1), map.texel(x1, y1));
    (0..map.channels)
        .map(|c| {
            let a = t00[c] as f64 * (1.0 - fx) + t10[c] as f64 * fx;
            let b = t01[c] as f64 * (1.0 - fx) + t11[c] as f64 * fx;
            a * (1.0 - fy) + b * fy
        })
        .collect()
}

/// Per-vertex visibility weights in [0, 1] for one view: zero outside the
/// frustum, otherwise backface cosine max(0, -n . d) times a binary
/// occlusion test against the depth buffer rendered from the same mesh
/// and camera.
pub fn vertex_visibility(
    mesh: &TriMesh,
    camera: &Camera,
    depth_buf: &DepthBuffer,
    normals: &[Vector3<f64>],
) -> Vec<f64> {
    let center = camera.center();
    mesh.positions()
        .iter()
        .zip(normals)
        .map(|(p, n)| {
            let proj = camera.project(p);
            if !proj.in_frustum {
                return 0.0;
            }
            let dir = p - center;
            let len = dir.norm();
            if len <= 0.0 {
                return 0.0;
            }
            let backface = (-n.dot(&dir) / len).max(0.0);
            if backface == 0.0 {
                return 0.0;
            }
            let occluder = depth_buf.sample_nearest(proj.u, proj.v);
            if proj.depth <= occluder + OCCLUSION_EPS_MM {
                backface
            } else {
                0.0
            }
        })
        .collect()
}

/// Frustum-only weights (1 inside, 0 outside); the visibility-agnostic
/// projection variant.
pub fn frustum_weights(mesh: &TriMesh, camera: &Camera) -> Vec<f64> {
    mesh.positions()
        .iter()
        .map(|p| if camera.project(p).in_frustum { 1.0 } else { 0.0 })
        .collect()
}

/// Fuse per-view features with the given per-view weights. Weights are
/// normalized to sum one per vertex; vertices with zero total weight get
/// zero mean and variance with coverage 0. `visibility_sum` keeps the
/// pre-normalization sum.
pub fn fuse_views(per_view: &[Array2<f64>], weights: &[Vec<f64>]) -> Result<FusedFeatures> {
    fuse_views_with(per_view, weights, VarianceCenter::WeightedMean)
}

pub fn fuse_views_with(
    per_view: &[Array2<f64>],
    weights: &[Vec<f64>],
    center: VarianceCenter,
) -> Result<FusedFeatures> {
    if per_view.is_empty() || per_view.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} feature views vs {} weight views",
            per_view.len(),
            weights.len()
        )));
    }
    let v = per_view[0].nrows();
    let c = per_view[0].ncols();
    for (n, (f, w)) in per_view.iter().zip(weights).enumerate() {
        if f.nrows() != v || f.ncols() != c || w.len() != v {
            return Err(Error::InvalidArgument(format!("view {n} has mismatched shape")));
        }
        if let Some(bad) = w.iter().find(|x| **x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "negative or non-finite weight {bad} in view {n}"
            )));
        }
    }

    let mut mean = Array2::zeros((v, c));
    let mut variance = Array2::zeros((v, c));
    let mut visibility_sum = vec![0.0f64; v];
    let mut coverage = vec![0u32; v];

    for i in 0..v {
        let total: f64 = weights.iter().map(|w| w[i]).sum();
        visibility_sum[i] = total;
        if total <= 0.0 {
            continue;
        }
        coverage[i] = weights.iter().filter(|w| w[i] > 0.0).count() as u32;
        // weighted mean
        for (f, w) in per_view.iter().zip(weights) {
            let wn = w[i] / total;
            if wn == 0.0 {
                continue;
            }
            for j in 0..c {
                mean[(i, j)] += wn * f[(i, j)];
            }
        }
        // variance center
        let mut ctr = vec![0.0f64; c];
        match center {
            VarianceCenter::WeightedMean => {
                for j in 0..c {
                    ctr[j] = mean[(i, j)];
                }
            }
            VarianceCenter::UnweightedMean => {
                let mut active = 0usize;
                for (f, w) in per_view.iter().zip(weights) {
                    if w[i] > 0.0 {
                        active += 1;
                        for j in 0..c {
                            ctr[j] += f[(i, j)];
                        }
                    }
                }
                for x in &mut ctr {
                    *x /= active.max(1) as f64;
                }
            }
        }
        for (f, w) in per_view.iter().zip(weights) {
            let wn = w[i] / total;
            if wn == 0.0 {
                continue;
            }
            for j in 0..c {
                let d = f[(i, j)] - ctr[j];
                variance[(i, j)] += wn * d * d;
            }
        }
    }
    Ok(FusedFeatures {
        mean,
        variance,
        visibility_sum,
        coverage,
    })
}

/// Full lifting pass for one mesh: for each view, render a depth buffer,
/// project every vertex, bilinearly sample the view's feature map, weight
/// by `mode`, and fuse. Views are processed in parallel; the fusion
/// reduction runs in fixed view order regardless of scheduling.
pub fn lift_features(
    mesh: &TriMesh,
    cameras: &[Camera],
    maps: &[FeatureMap],
    mode: WeightMode,
) -> Result<FusedFeatures> {
    if cameras.is_empty() || cameras.len() != maps.len() {
        return Err(Error::InvalidArgument(format!(
            "{} cameras vs {} feature maps",
            cameras.len(),
            maps.len()
        )));
    }
    let channels = maps[0].channels;
    for (n, (cam, map)) in cameras.iter().zip(maps).enumerate() {
        if map.width != cam.width as usize || map.height != cam.height as usize {
            return Err(Error::InvalidArgument(format!(
                "view {n}: feature map {}x{} does not match camera image {}x{}",
                map.width, map.height, cam.width, cam.height
            )));
        }
        if map.channels != channels {
            return Err(Error::InvalidArgument(format!(
                "view {n} has {} channels, expected {channels}",
                map.channels
            )));
        }
    }
    let (normals, _) = mesh.vertex_normals();
    let v = mesh.vertex_count();

    let views: Vec<(Array2<f64>, Vec<f64>)> = cameras
        .par_iter()
        .zip(maps.par_iter())
        .map(|(camera, map)| {
            let weights = match mode {
                WeightMode::Frustum => frustum_weights(mesh, camera),
                WeightMode::Visibility => {
                    let depth = render_depth(mesh, camera);
                    vertex_visibility(mesh, camera, &depth, &normals)
                }
            };
            let mut features = Array2::zeros((v, channels));
            for (i, p) in mesh.positions().iter().enumerate() {
                let proj = camera.project(p);
                if proj.in_frustum {
                    let s = sample_bilinear(map, proj.u, proj.v);
                    for (j, x) in s.into_iter().enumerate() {
                        features[(i, j)] = x;
                    }
                }
            }
            (features, weights)
        })
        .collect();

    let per_view: Vec<Array2<f64>> = views.iter().map(|(f, _)| f.clone()).collect();
    let weights: Vec<Vec<f64>> = views.iter().map(|(_, w)| w.clone()).collect();
    fuse_views(&per_view, &weights)
}
