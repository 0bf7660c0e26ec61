//! End-to-end pipeline orchestration: per-sample precompute with
//! content-addressed caches, feature assembly per the ablation
//! configuration, training, inference, metrics, and ablation grids.

use crate::camera::read_cameras;
use crate::diffnet::train::{train, TrainConfig, TrainOutcome, TrainSample};
use crate::diffnet::{
    forward, frames::build_tangent_frames, predict_labels, DiffusionNetParams, MeshOperators,
};
use crate::dist::SurfaceBvh;
use crate::error::{Error, Result};
use crate::featio::{handcrafted_features, read_fmap, read_image, write_fmap, FeatureMap};
use crate::geomfeat;
use crate::laplace::{cotan_laplacian, lumped_mass};
use crate::mesh::TriMesh;
use crate::mview::{self, WeightMode};
use crate::spectral::{self, SpectralBasis};
use crate::synthgen;
use nalgebra::Vector3;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Where per-view feature maps come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSource {
    /// The built-in multi-scale image-feature extractor.
    #[serde(rename = "handcrafted")]
    Handcrafted,
    /// Externally computed FMAP files (feat_%02d.fmap in the sample dir).
    #[serde(rename = "fmapFiles")]
    FmapFiles,
}

/// Projection/fusion variant; mirrors the ablation rows. `none` disables
/// image features entirely (geometry-only configurations).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionMode {
    #[serde(rename = "mean")]
    Mean,
    #[serde(rename = "mean+var")]
    MeanVar,
    #[serde(rename = "visMean")]
    VisMean,
    #[serde(rename = "visMean+var")]
    VisMeanVar,
    #[serde(rename = "none")]
    None,
}

impl FusionMode {
    fn weight_mode(self) -> Option<WeightMode> {
        match self {
            FusionMode::Mean | FusionMode::MeanVar => Some(WeightMode::Frustum),
            FusionMode::VisMean | FusionMode::VisMeanVar => Some(WeightMode::Visibility),
            FusionMode::None => None,
        }
    }

    fn includes_variance(self) -> bool {
        matches!(self, FusionMode::MeanVar | FusionMode::VisMeanVar)
    }

    fn cache_tag(self) -> &'static str {
        match self {
            FusionMode::Mean | FusionMode::MeanVar => "plain",
            FusionMode::VisMean | FusionMode::VisMeanVar => "vis",
            FusionMode::None => "none",
        }
    }
}

/// Optional geometric input features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeomFeature {
    #[serde(rename = "hks")]
    Hks,
    #[serde(rename = "sigma30")]
    Sigma30,
    #[serde(rename = "color")]
    Color,
}

/// Full pipeline configuration. Serialized key names are normative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PipelineConfig {
    pub feature_source: FeatureSource,
    pub fusion: FusionMode,
    pub geom_features: Vec<GeomFeature>,
    pub network: TrainConfig,
    pub eig_k: usize,
    pub hks_t: usize,
    pub label_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            feature_source: FeatureSource::Handcrafted,
            fusion: FusionMode::VisMeanVar,
            geom_features: vec![GeomFeature::Sigma30],
            network: TrainConfig::default(),
            eig_k: 64,
            hks_t: geomfeat::DEFAULT_HKS_T,
            label_threshold: synthgen::LABEL_THRESHOLD_MM,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.label_threshold > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "labelThreshold must be positive, got {}",
                self.label_threshold
            )));
        }
        if self.eig_k < 2 {
            return Err(Error::InvalidArgument("eigK must be at least 2".into()));
        }
        if self.hks_t == 0 && self.geom_features.contains(&GeomFeature::Hks) {
            return Err(Error::InvalidArgument("hksT must be positive when hks is enabled".into()));
        }
        if self.fusion == FusionMode::None && self.geom_features.is_empty() {
            return Err(Error::InvalidArgument(
                "fusion \"none\" with no geometric features leaves the network without inputs".into(),
            ));
        }
        self.network.validate()
    }

    pub fn uses(&self, f: GeomFeature) -> bool {
        self.geom_features.contains(&f)
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: PipelineConfig = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path, format!("line {}", e.line()), e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_config(cfg: &PipelineConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(cfg).expect("serializable");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------
// metrics

/// Mean intersection-over-union over both classes. A class absent from
/// both prediction and ground truth contributes IoU = 1.
pub fn miou(pred: &[u8], gt: &[u8]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions vs {} labels",
            pred.len(),
            gt.len()
        )));
    }
    let mut inter = [0usize; 2];
    let mut union = [0usize; 2];
    for (&p, &g) in pred.iter().zip(gt) {
        for cls in 0..2 {
            let pp = p as usize == cls;
            let gg = g as usize == cls;
            if pp && gg {
                inter[cls] += 1;
            }
            if pp || gg {
                union[cls] += 1;
            }
        }
    }
    let iou = |c: usize| {
        if union[c] == 0 {
            1.0
        } else {
            inter[c] as f64 / union[c] as f64
        }
    };
    Ok((iou(0) + iou(1)) / 2.0)
}

/// Mean and standard deviation of point-to-surface distances (mm) from a
/// point set to a ground-truth surface.
pub fn d_surface(points: &[Vector3<f64>], gt_surface: &TriMesh) -> Result<(f64, f64)> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty point set".into()));
    }
    let bvh = SurfaceBvh::new(gt_surface)?;
    let dists: Vec<f64> = points.par_iter().map(|p| bvh.distance(p)).collect();
    let n = dists.len() as f64;
    let mean = dists.iter().sum::<f64>() / n;
    let var = dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

// ---------------------------------------------------------------------
// precompute

fn fnv1a64(data: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in data {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn file_hash(path: &Path) -> Result<u64> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(fnv1a64(&data))
}

/// Atomic write: temp file in the same directory, then rename.
fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    write(&tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Paths of the cache artifacts for one sample under one configuration.
pub struct CachePaths {
    pub dir: PathBuf,
    pub basis: PathBuf,
    pub views: Vec<PathBuf>,
    pub fused: Option<PathBuf>,
    pub geom: PathBuf,
}

/// What precompute did (for idempotence checks).
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct PrecomputeReport {
    pub eigensolves: usize,
    pub files_written: usize,
}

fn cache_paths(sample_dir: &Path, config: &PipelineConfig) -> Result<CachePaths> {
    let scan_path = sample_dir.join("scan.ply");
    if !scan_path.exists() {
        return Err(Error::MissingInput(scan_path));
    }
    let scan_hash = file_hash(&scan_path)?;
    let dir = sample_dir.join("cache");
    let basis = dir.join(format!("basis_k{}_{scan_hash:016x}.spec", config.eig_k));
    let geom = dir.join(format!(
        "geom_k{}_t{}_{scan_hash:016x}.fmap",
        config.eig_k, config.hks_t
    ));

    let mut views = Vec::new();
    let mut fused = None;
    if config.fusion != FusionMode::None {
        let cam_path = sample_dir.join("cameras.json");
        if !cam_path.exists() {
            return Err(Error::MissingInput(cam_path));
        }
        let n_views = read_cameras(&cam_path)?.len();
        let mut view_hashes = Vec::with_capacity(n_views);
        for i in 0..n_views {
            match config.feature_source {
                FeatureSource::Handcrafted => {
                    let img = sample_dir.join(format!("view_{i:02}.ppm"));
                    if !img.exists() {
                        return Err(Error::MissingInput(img));
                    }
                    let h = file_hash(&img)?;
                    view_hashes.push(h);
                    views.push(dir.join(format!("view_{i:02}_{h:016x}.fmap")));
                }
                FeatureSource::FmapFiles => {
                    let f = sample_dir.join(format!("feat_{i:02}.fmap"));
                    if !f.exists() {
                        return Err(Error::MissingInput(f));
                    }
                    view_hashes.push(file_hash(&f)?);
                    views.push(f);
                }
            }
        }
        let mut key_bytes = Vec::new();
        key_bytes.extend_from_slice(&scan_hash.to_le_bytes());
        key_bytes.extend_from_slice(&file_hash(&cam_path)?.to_le_bytes());
        for h in &view_hashes {
            key_bytes.extend_from_slice(&h.to_le_bytes());
        }
        let key = fnv1a64(&key_bytes);
        fused = Some(dir.join(format!(
            "fused_{}_{key:016x}.fmap",
            config.fusion.cache_tag()
        )));
    }
    Ok(CachePaths {
        dir,
        basis,
        views,
        fused,
        geom,
    })
}

/// Compute and cache everything one sample needs under `config`:
/// the spectral basis (SPEC), per-view feature maps (FMAP, when
/// handcrafted), fused per-vertex features, and geometric descriptors.
/// Content-hash keyed and idempotent: unchanged inputs cause no writes.
/// Inputs are validated before anything is written, and each artifact is
/// written atomically, so failures leave no partial caches.
pub fn precompute(sample_dir: impl AsRef<Path>, config: &PipelineConfig) -> Result<PrecomputeReport> {
    let sample_dir = sample_dir.as_ref();
    config.validate()?;
    let paths = cache_paths(sample_dir, config)?;
    let mut report = PrecomputeReport::default();

    let needs_views = config.feature_source == FeatureSource::Handcrafted
        && paths.views.iter().any(|p| !p.exists());
    let needs_fused = paths.fused.as_ref().is_some_and(|p| !p.exists());
    let needs_basis = !paths.basis.exists();
    let needs_geom = !paths.geom.exists();
    if !(needs_views || needs_fused || needs_basis || needs_geom) {
        return Ok(report);
    }

    // validate inputs up front
    let scan = crate::meshio::load_mesh(sample_dir.join("scan.ply"))?;
    std::fs::create_dir_all(&paths.dir).map_err(|e| Error::io(&paths.dir, e))?;

    // spectral basis
    let basis = if needs_basis {
        let l = cotan_laplacian(&scan)?;
        let m = lumped_mass(&scan)?;
        let basis = spectral::eigensolve(&l, &m, config.eig_k.min(scan.vertex_count() - 1), 0)?;
        report.eigensolves += 1;
        write_atomic(&paths.basis, |p| spectral::write_basis(&basis, p))?;
        report.files_written += 1;
        basis
    } else {
        spectral::read_basis(&paths.basis)?
    };

    // geometric descriptors: sigma30 first, then log-standardized HKS
    if needs_geom {
        let times = geomfeat::default_hks_times(&basis, config.hks_t.max(1))?;
        let hks = geomfeat::compute_hks(&basis, &times)?;
        let hks_std = geomfeat::log_standardize_hks(&hks);
        let sigma_k = geomfeat::DEFAULT_SIGMA_K.min(scan.vertex_count().saturating_sub(1));
        let sigma = geomfeat::surface_variation(&scan, sigma_k)?;
        let v = scan.vertex_count();
        let c = 1 + hks_std.ncols();
        let mut map = FeatureMap::new(1, v, c);
        for i in 0..v {
            let t = map.texel_mut(0, i);
            t[0] = sigma[i] as f32;
            for j in 0..hks_std.ncols() {
                t[1 + j] = hks_std[(i, j)] as f32;
            }
        }
        write_atomic(&paths.geom, |p| write_fmap(&map, p))?;
        report.files_written += 1;
    }

    // per-view handcrafted features
    if config.feature_source == FeatureSource::Handcrafted {
        let jobs: Vec<(usize, PathBuf)> = paths
            .views
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.exists())
            .map(|(i, p)| (i, p.clone()))
            .collect();
        let maps: Vec<(PathBuf, FeatureMap)> = jobs
            .par_iter()
            .map(|(i, out)| {
                let img = read_image(sample_dir.join(format!("view_{i:02}.ppm")))?;
                Ok((out.clone(), handcrafted_features(&img)))
            })
            .collect::<Result<_>>()?;
        for (out, map) in maps {
            write_atomic(&out, |p| write_fmap(&map, p))?;
            report.files_written += 1;
        }
    }

    // fused per-vertex features
    if needs_fused {
        let fused_path = paths.fused.as_ref().expect("fusion enabled");
        let cameras = read_cameras(sample_dir.join("cameras.json"))?;
        let maps: Vec<FeatureMap> = paths
            .views
            .iter()
            .map(read_fmap)
            .collect::<Result<_>>()?;
        let mode = config.fusion.weight_mode().expect("fusion enabled");
        let fused = mview::lift_features(&scan, &cameras, &maps, mode)?;
        let v = scan.vertex_count();
        let cf = fused.mean.ncols();
        // layout: mean (cf), variance (cf), visibilitySum, coverage
        let mut map = FeatureMap::new(1, v, 2 * cf + 2);
        for i in 0..v {
            let t = map.texel_mut(0, i);
            for j in 0..cf {
                t[j] = fused.mean[(i, j)] as f32;
                t[cf + j] = fused.variance[(i, j)] as f32;
            }
            t[2 * cf] = fused.visibility_sum[i] as f32;
            t[2 * cf + 1] = fused.coverage[i] as f32;
        }
        write_atomic(fused_path, |p| write_fmap(&map, p))?;
        report.files_written += 1;
    }

    Ok(report)
}

// ---------------------------------------------------------------------
// feature assembly

/// Assembled per-vertex input features plus everything evaluation needs.
pub struct AssembledSample {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    pub scan: TriMesh,
    pub reference: TriMesh,
    pub basis: SpectralBasis,
}

/// Load caches (running precompute if missing) and assemble the network
/// input in the canonical channel order: fused mean, fused variance (when
/// the fusion mode carries it), visibility sum, coverage, then sigma30,
/// HKS, vertex color as configured.
pub fn assemble(sample_dir: impl AsRef<Path>, config: &PipelineConfig) -> Result<AssembledSample> {
    let sample_dir = sample_dir.as_ref();
    precompute(sample_dir, config)?;
    let paths = cache_paths(sample_dir, config)?;
    let scan = crate::meshio::load_mesh(sample_dir.join("scan.ply"))?;
    let reference = crate::meshio::load_mesh(sample_dir.join("reference.ply"))?;
    let labels = synthgen::read_labels(sample_dir.join("labels.bin"))?;
    if labels.len() != scan.vertex_count() {
        return Err(Error::MeshValidation(format!(
            "{} labels for {} vertices",
            labels.len(),
            scan.vertex_count()
        )));
    }
    let basis = spectral::read_basis(&paths.basis)?;
    let v = scan.vertex_count();

    let mut blocks: Vec<Array2<f64>> = Vec::new();
    if let Some(fused_path) = &paths.fused {
        let map = read_fmap(fused_path)?;
        let total = map.channels;
        let cf = (total - 2) / 2;
        let n_views = read_cameras(sample_dir.join("cameras.json"))?.len() as f64;
        let mut mean = Array2::zeros((v, cf));
        let mut var = Array2::zeros((v, cf));
        let mut tail = Array2::zeros((v, 2));
        for i in 0..v {
            let t = map.texel(0, i);
            for j in 0..cf {
                mean[(i, j)] = t[j] as f64;
                var[(i, j)] = t[cf + j] as f64;
            }
            // normalized by the view count so channels stay O(1)
            tail[(i, 0)] = t[2 * cf] as f64 / n_views;
            tail[(i, 1)] = t[2 * cf + 1] as f64 / n_views;
        }
        blocks.push(mean);
        if config.fusion.includes_variance() {
            blocks.push(var);
        }
        blocks.push(tail);
    }
    if config.uses(GeomFeature::Sigma30) || config.uses(GeomFeature::Hks) {
        let map = read_fmap(&paths.geom)?;
        if config.uses(GeomFeature::Sigma30) {
            let mut sigma = Array2::zeros((v, 1));
            for i in 0..v {
                sigma[(i, 0)] = map.texel(0, i)[0] as f64;
            }
            blocks.push(sigma);
        }
        if config.uses(GeomFeature::Hks) {
            let t_count = map.channels - 1;
            let mut hks = Array2::zeros((v, t_count));
            for i in 0..v {
                for j in 0..t_count {
                    hks[(i, j)] = map.texel(0, i)[1 + j] as f64;
                }
            }
            blocks.push(hks);
        }
    }
    if config.uses(GeomFeature::Color) {
        let mut col = Array2::zeros((v, 3));
        if let Some(colors) = scan.colors() {
            for i in 0..v {
                for j in 0..3 {
                    col[(i, j)] = colors[i][j];
                }
            }
        }
        blocks.push(col);
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let features = ndarray::concatenate(ndarray::Axis(1), &views)
        .map_err(|e| Error::InvalidArgument(format!("feature assembly: {e}")))?;
    Ok(AssembledSample {
        features,
        labels,
        scan,
        reference,
        basis,
    })
}

/// Build a training sample (f32 operators and features) from a sample dir.
pub fn load_train_sample(sample_dir: impl AsRef<Path>, config: &PipelineConfig) -> Result<TrainSample<f32>> {
    let sample_dir = sample_dir.as_ref();
    let a = assemble(sample_dir, config)?;
    let frames = build_tangent_frames(&a.scan)?;
    let ops = MeshOperators::<f32>::new(&a.basis, &frames);
    let features = a.features.mapv(|x| x as f32);
    Ok(TrainSample {
        ops,
        features,
        labels: a.labels,
        name: sample_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| sample_dir.display().to_string()),
    })
}

// ---------------------------------------------------------------------
// inference and evaluation

/// Run the network on one sample directory. Errors with a configuration
/// mismatch when the checkpoint's input width does not match the features
/// this configuration assembles.
pub fn infer(
    params: &DiffusionNetParams<f32>,
    sample_dir: impl AsRef<Path>,
    config: &PipelineConfig,
) -> Result<(Vec<u8>, Array2<f32>)> {
    let sample_dir = sample_dir.as_ref();
    let a = assemble(sample_dir, config)?;
    if a.features.ncols() != params.config.d_in {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint expects {} input channels, configuration assembles {}",
            params.config.d_in,
            a.features.ncols()
        )));
    }
    if params.config.k_eig != a.basis.k() {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint expects k = {}, basis cache has {}",
            params.config.k_eig,
            a.basis.k()
        )));
    }
    let frames = build_tangent_frames(&a.scan)?;
    let ops = MeshOperators::<f32>::new(&a.basis, &frames);
    let features = a.features.mapv(|x| x as f32);
    let (logits, _) = forward(params, &ops, &features)?;
    Ok((predict_labels(&logits), logits))
}

/// Evaluation results for a set of samples.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub miou: f64,
    pub d_mean_mm: f64,
    pub d_std_mm: f64,
    pub per_sample: Vec<SampleReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleReport {
    pub name: String,
    pub miou: f64,
    pub d_mean_mm: f64,
    pub d_std_mm: f64,
    pub skin_fraction_pred: f64,
}

/// Evaluate a checkpoint over sample directories: mIoU of predictions
/// against stored labels, and the point-to-surface proxy distance of
/// predicted-skin vertices against the reference surface.
pub fn evaluate(
    params: &DiffusionNetParams<f32>,
    sample_dirs: &[PathBuf],
    config: &PipelineConfig,
) -> Result<EvalReport> {
    if sample_dirs.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    let mut per_sample = Vec::with_capacity(sample_dirs.len());
    for dir in sample_dirs {
        let a = assemble(dir, config)?;
        let (pred, _) = infer(params, dir, config)?;
        let m = miou(&pred, &a.labels)?;
        let skin_points: Vec<Vector3<f64>> = a
            .scan
            .positions()
            .iter()
            .zip(&pred)
            .filter(|(_, &p)| p == 1)
            .map(|(p, _)| *p)
            .collect();
        let (d_mean, d_std) = if skin_points.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            d_surface(&skin_points, &a.reference)?
        };
        per_sample.push(SampleReport {
            name: dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            miou: m,
            d_mean_mm: d_mean,
            d_std_mm: d_std,
            skin_fraction_pred: pred.iter().filter(|&&p| p == 1).count() as f64 / pred.len() as f64,
        });
    }
    let n = per_sample.len() as f64;
    let miou_mean = per_sample.iter().map(|s| s.miou).sum::<f64>() / n;
    let d_mean = per_sample.iter().map(|s| s.d_mean_mm).sum::<f64>() / n;
    let d_std = per_sample.iter().map(|s| s.d_std_mm).sum::<f64>() / n;
    Ok(EvalReport {
        miou: miou_mean,
        d_mean_mm: d_mean,
        d_std_mm: d_std,
        per_sample,
    })
}

/// Train on one dataset split and return the outcome plus the network
/// input width that was used.
pub fn train_on_dirs(
    train_dirs: &[PathBuf],
    val_dirs: &[PathBuf],
    config: &PipelineConfig,
) -> Result<(TrainOutcome<f32>, usize)> {
    config.validate()?;
    let load = |dirs: &[PathBuf]| -> Result<Vec<TrainSample<f32>>> {
        let mut out: Vec<(usize, TrainSample<f32>)> = dirs
            .par_iter()
            .enumerate()
            .map(|(i, d)| Ok((i, load_train_sample(d, config)?)))
            .collect::<Result<_>>()?;
        out.sort_by_key(|(i, _)| *i);
        Ok(out.into_iter().map(|(_, s)| s).collect())
    };
    let train_set = load(train_dirs)?;
    let val_set = load(val_dirs)?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let d_in = train_set[0].features.ncols();
    let k_eig = train_set[0].ops.k();
    let outcome = train(&train_set, &val_set, &config.network, d_in, k_eig)?;
    Ok((outcome, d_in))
}

/// Sample directories of a dataset, sorted by name.
pub fn list_samples(dataset_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dataset_dir = dataset_dir.as_ref();
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dataset_dir).map_err(|e| Error::io(dataset_dir, e))?;
    for e in entries {
        let e = e.map_err(|e2| Error::io(dataset_dir, e2))?;
        let p = e.path();
        if p.is_dir() && p.join("scan.ply").exists() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// One ablation grid row: a named configuration.
pub type ConfigGrid = Vec<(String, PipelineConfig)>;

/// Results TSV header.
pub const RESULTS_TSV_HEADER: &str = "config_id\tsplit\tmIoU\td_mean_mm\td_std_mm\tseed";

/// Run every configuration in the grid on the same train/test split and
/// collect a machine-readable TSV (one row per config and split).
/// Per-config failures are reported inline without aborting the grid.
pub fn run_ablation(
    train_dirs: &[PathBuf],
    test_dirs: &[PathBuf],
    grid: &ConfigGrid,
) -> Result<String> {
    let mut tsv = String::from(RESULTS_TSV_HEADER);
    tsv.push('\n');
    for (config_id, config) in grid {
        match run_single(train_dirs, test_dirs, config) {
            Ok((train_report, test_report)) => {
                for (split, report) in [("train", &train_report), ("test", &test_report)] {
                    tsv.push_str(&format!(
                        "{config_id}\t{split}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
                        report.miou, report.d_mean_mm, report.d_std_mm, config.network.seed
                    ));
                }
            }
            Err(e) => {
                tsv.push_str(&format!(
                    "{config_id}\terror\tNaN\tNaN\tNaN\t{}\t# {e}\n",
                    config.network.seed
                ));
            }
        }
    }
    Ok(tsv)
}

fn run_single(
    train_dirs: &[PathBuf],
    test_dirs: &[PathBuf],
    config: &PipelineConfig,
) -> Result<(EvalReport, EvalReport)> {
    let (outcome, _) = train_on_dirs(train_dirs, test_dirs, config)?;
    let train_report = evaluate(&outcome.params, train_dirs, config)?;
    let test_report = evaluate(&outcome.params, test_dirs, config)?;
    Ok((train_report, test_report))
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_sample, write_sample, GenProfile};

    fn tiny_dataset(dir: &Path, count: usize, start_seed: u64) -> Vec<PathBuf> {
        let profile = GenProfile {
            vertices: 700,
            clutter_density: 1.0,
            noise_amplitude: 0.5,
            image_size: 96,
        };
        (0..count)
            .map(|i| {
                let s = generate_sample(start_seed + i as u64, &profile).unwrap();
                let d = dir.join(format!("sample_{:04}", start_seed + i as u64));
                write_sample(&s, &d).unwrap();
                d
            })
            .collect()
    }

    fn fast_config() -> PipelineConfig {
        PipelineConfig {
            eig_k: 24,
            hks_t: 8,
            network: TrainConfig {
                epochs: 2,
                width: 8,
                blocks: 1,
                ..TrainConfig::default()
            },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn miou_identities() {
        assert_eq!(miou(&[1, 1, 0, 0], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(miou(&[1, 0], &[0, 1]).unwrap(), 0.0);
        // hand-enumerated: both classes IoU 1/3
        let m = miou(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap();
        assert!((m - 1.0 / 3.0).abs() < 1e-12);
        // absent class counts as IoU 1
        assert_eq!(miou(&[1, 1], &[1, 1]).unwrap(), 1.0);
        assert!(miou(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn miou_symmetric_under_label_flip() {
        let pred = [1u8, 0, 1, 1, 0, 0, 1];
        let gt = [1u8, 1, 0, 1, 0, 1, 0];
        let flip = |v: &[u8]| -> Vec<u8> { v.iter().map(|&x| 1 - x).collect() };
        let a = miou(&pred, &gt).unwrap();
        let b = miou(&flip(&pred), &flip(&gt)).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    /// Brute-force confusion-matrix oracle on random label vectors.
    #[test]
    fn miou_matches_confusion_oracle() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let n = rng.gen_range(1..40);
            let pred: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            let gt: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            let fast = miou(&pred, &gt).unwrap();
            // oracle: explicit confusion counts
            let (mut tp, mut fp, mut fal_n, mut tn) = (0f64, 0f64, 0f64, 0f64);
            for (&p, &g) in pred.iter().zip(&gt) {
                match (p, g) {
                    (1, 1) => tp += 1.0,
                    (1, 0) => fp += 1.0,
                    (0, 1) => fal_n += 1.0,
                    _ => tn += 1.0,
                }
            }
            let iou1 = if tp + fp + fal_n == 0.0 { 1.0 } else { tp / (tp + fp + fal_n) };
            let iou0 = if tn + fp + fal_n == 0.0 { 1.0 } else { tn / (tn + fp + fal_n) };
            let oracle = (iou0 + iou1) / 2.0;
            assert!((fast - oracle).abs() <= 1e-12);
        }
    }

    #[test]
    fn d_surface_basics() {
        let plane = crate::shapes::grid_plane(6, 6, 30.0, 30.0);
        // points on the surface
        let on: Vec<Vector3<f64>> = plane.positions().iter().take(10).cloned().collect();
        let (m, s) = d_surface(&on, &plane).unwrap();
        assert!(m < 1e-12 && s < 1e-12);
        // a single point 2 mm above
        let (m, s) = d_surface(&[Vector3::new(11.0, 13.0, 2.0)], &plane).unwrap();
        assert!((m - 2.0).abs() < 1e-12);
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn precompute_is_idempotent_and_cache_keyed() {
        let dir = crate::testutil::tmpdir("pipe");
        let samples = tiny_dataset(&dir, 1, 100);
        let config = fast_config();
        let r1 = precompute(&samples[0], &config).unwrap();
        assert_eq!(r1.eigensolves, 1);
        assert!(r1.files_written >= 3);
        // unchanged inputs: no writes at all
        let r2 = precompute(&samples[0], &config).unwrap();
        assert_eq!(r2, PrecomputeReport::default());
        // deleting the basis cache triggers exactly one eigensolve
        let paths = cache_paths(&samples[0], &config).unwrap();
        std::fs::remove_file(&paths.basis).unwrap();
        let r3 = precompute(&samples[0], &config).unwrap();
        assert_eq!(r3.eigensolves, 1);
        assert_eq!(r3.files_written, 1);
    }

    #[test]
    fn corrupt_scan_leaves_no_partial_caches() {
        let dir = crate::testutil::tmpdir("pipe-fault");
        let samples = tiny_dataset(&dir, 1, 200);
        let scan_path = samples[0].join("scan.ply");
        let mut bytes = std::fs::read(&scan_path).unwrap();
        let mid = bytes.len() / 2;
        bytes.truncate(mid);
        std::fs::write(&scan_path, bytes).unwrap();
        let config = fast_config();
        let err = precompute(&samples[0], &config).unwrap_err();
        assert!(err.is_validation(), "{err}");
        let cache_dir = samples[0].join("cache");
        if cache_dir.exists() {
            assert_eq!(std::fs::read_dir(&cache_dir).unwrap().count(), 0);
        }
    }

    #[test]
    fn assemble_channel_count() {
        let dir = crate::testutil::tmpdir("pipe-assemble");
        let samples = tiny_dataset(&dir, 1, 300);
        let mut config = fast_config();
        config.fusion = FusionMode::VisMeanVar;
        config.geom_features = vec![GeomFeature::Sigma30, GeomFeature::Hks, GeomFeature::Color];
        let a = assemble(&samples[0], &config).unwrap();
        // 12 mean + 12 var + 2 (vis, coverage) + 1 sigma + 8 hks + 3 color
        assert_eq!(a.features.ncols(), 12 + 12 + 2 + 1 + 8 + 3);
        assert_eq!(a.features.nrows(), a.scan.vertex_count());

        config.fusion = FusionMode::Mean;
        config.geom_features = vec![GeomFeature::Sigma30];
        let b = assemble(&samples[0], &config).unwrap();
        assert_eq!(b.features.ncols(), 12 + 2 + 1);

        config.fusion = FusionMode::None;
        config.geom_features = vec![GeomFeature::Hks, GeomFeature::Sigma30];
        let c = assemble(&samples[0], &config).unwrap();
        assert_eq!(c.features.ncols(), 8 + 1);
    }

    #[test]
    fn train_infer_eval_smoke() {
        let dir = crate::testutil::tmpdir("pipe-train");
        let train_dirs = tiny_dataset(&dir.join("train"), 2, 400);
        let test_dirs = tiny_dataset(&dir.join("test"), 1, 500);
        let config = fast_config();
        let (outcome, d_in) = train_on_dirs(&train_dirs, &test_dirs, &config).unwrap();
        assert_eq!(outcome.params.config.d_in, d_in);
        let (pred, logits) = infer(&outcome.params, &test_dirs[0], &config).unwrap();
        assert_eq!(pred.len(), logits.nrows());
        let report = evaluate(&outcome.params, &test_dirs, &config).unwrap();
        assert!(report.miou >= 0.0 && report.miou <= 1.0);
        assert_eq!(report.per_sample.len(), 1);

        // majority-bias checkpoint: all-skin prediction
        let mut zero = DiffusionNetParams::<f32>::zeros(outcome.params.config);
        let layout = crate::diffnet::parameter_layout(&zero.config);
        let e = layout.iter().find(|e| e.name == "output.bias").unwrap();
        zero.values[e.offset + 1] = 1.0; // bias toward skin
        let (pred, _) = infer(&zero, &test_dirs[0], &config).unwrap();
        assert!(pred.iter().all(|&p| p == 1));

        // config mismatch: different input width
        let mut other = config.clone();
        other.geom_features = vec![GeomFeature::Sigma30, GeomFeature::Color];
        let err = infer(&outcome.params, &test_dirs[0], &other).unwrap_err();
        assert!(matches!(err, Error::ConfigMismatch(_)), "{err}");
    }

    #[test]
    fn inference_bitwise_stable() {
        let dir = crate::testutil::tmpdir("pipe-det");
        let dirs = tiny_dataset(&dir, 1, 600);
        let config = fast_config();
        let (outcome, _) = train_on_dirs(&dirs, &[], &config).unwrap();
        let (p1, l1) = infer(&outcome.params, &dirs[0], &config).unwrap();
        let (p2, l2) = infer(&outcome.params, &dirs[0], &config).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(l1, l2);
    }

    #[test]
    fn ablation_grid_emits_tsv() {
        let dir = crate::testutil::tmpdir("pipe-grid");
        let train_dirs = tiny_dataset(&dir.join("train"), 2, 700);
        let test_dirs = tiny_dataset(&dir.join("test"), 1, 800);
        let grid: ConfigGrid = vec![("fast".into(), fast_config())];
        let tsv = run_ablation(&train_dirs, &test_dirs, &grid).unwrap();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], RESULTS_TSV_HEADER);
        assert_eq!(lines.len(), 3); // header + train + test
        assert!(lines[1].starts_with("fast\ttrain\t"));
        assert!(lines[2].starts_with("fast\ttest\t"));
    }

    #[test]
    fn config_round_trip_and_validation() {
        let dir = crate::testutil::tmpdir("pipe-config");
        let config = PipelineConfig::default();
        let p = dir.join("config.json");
        save_config(&config, &p).unwrap();
        let back = load_config(&p).unwrap();
        assert_eq!(config, back);
        // normative key names present in the serialized form
        let text = std::fs::read_to_string(&p).unwrap();
        for key in [
            "featureSource",
            "fusion",
            "geomFeatures",
            "network",
            "eigK",
            "hksT",
            "labelThreshold",
            "learningRate",
            "adamBeta1",
            "adamBeta2",
            "batchSize",
        ] {
            assert!(text.contains(key), "missing key {key}: {text}");
        }
        // unknown keys rejected
        let bad = dir.join("bad.json");
        std::fs::write(&bad, text.replace("\"eigK\"", "\"eigKK\"")).unwrap();
        assert!(load_config(&bad).is_err());
    }
}
