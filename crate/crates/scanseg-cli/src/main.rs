//! Command-line front end for the scanseg pipeline.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, bad config,
//! malformed inputs), 2 runtime failure. Progress and timing go to
//! standard error; results go to files or standard output.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use scanseg::diffnet::{read_checkpoint, write_checkpoint};
use scanseg::error::Error;
use scanseg::segpipe::{
    self, ConfigGrid, FeatureSource, FusionMode, GeomFeature, PipelineConfig,
};
use scanseg::synthgen::{self, GenProfile};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "scanseg",
    version,
    about = "Skin/non-skin segmentation of 3D head scans: procedural data, precompute, training, inference, evaluation, ablations",
    max_term_width = 100
)]
struct Cli {
    /// Worker threads (default: logical cores). Results are independent
    /// of this setting.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labeled synthetic sample directories (destructive with --force)
    GenData(GenDataArgs),
    /// Build per-sample caches: spectral basis, feature maps, fused and geometric features (idempotent)
    Precompute(PrecomputeArgs),
    /// Train a segmentation network on a dataset split
    Train(TrainArgs),
    /// Run a checkpoint on one sample, writing predicted labels
    Infer(InferArgs),
    /// Evaluate a checkpoint over a dataset split
    Eval(EvalArgs),
    /// Train and evaluate a grid of configurations, writing a results TSV
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    /// Desk-scale meshes (2-4K vertices)
    Test,
    /// Production-scale meshes (100K+ vertices)
    Large,
}

#[derive(Args)]
struct GenDataArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Number of samples to generate
    #[arg(long)]
    count: usize,
    /// Base seed; sample i uses seed + i
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mesh/image scale profile
    #[arg(long, value_enum, default_value_t = ProfileArg::Test)]
    profile: ProfileArg,
    /// Overwrite existing sample directories
    #[arg(long)]
    force: bool,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Pipeline configuration file (JSON); flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Projection/fusion variant: mean, mean+var, visMean, visMean+var, none
    #[arg(long, value_parser = parse_fusion)]
    fusion: Option<FusionMode>,
    /// Comma-separated geometric features: hks,sigma30,color (empty for none)
    #[arg(long)]
    geom_features: Option<String>,
    /// Feature-map source: handcrafted or fmapFiles
    #[arg(long, value_parser = parse_source)]
    feature_source: Option<FeatureSource>,
    /// Spectral basis size
    #[arg(long)]
    eig_k: Option<usize>,
    /// HKS time-sample count
    #[arg(long)]
    hks_t: Option<usize>,
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Network width (channels per block)
    #[arg(long)]
    width: Option<usize>,
    /// Number of diffusion blocks
    #[arg(long)]
    blocks: Option<usize>,
    /// Meshes per optimizer step
    #[arg(long)]
    batch_size: Option<usize>,
    /// Seed for all randomness in this invocation
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_fusion(s: &str) -> Result<FusionMode, String> {
    match s {
        "mean" => Ok(FusionMode::Mean),
        "mean+var" => Ok(FusionMode::MeanVar),
        "visMean" => Ok(FusionMode::VisMean),
        "visMean+var" => Ok(FusionMode::VisMeanVar),
        "none" => Ok(FusionMode::None),
        other => Err(format!(
            "unknown fusion '{other}' (expected mean, mean+var, visMean, visMean+var, none)"
        )),
    }
}

fn parse_source(s: &str) -> Result<FeatureSource, String> {
    match s {
        "handcrafted" => Ok(FeatureSource::Handcrafted),
        "fmapFiles" => Ok(FeatureSource::FmapFiles),
        other => Err(format!(
            "unknown feature source '{other}' (expected handcrafted or fmapFiles)"
        )),
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => segpipe::load_config(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(f) = self.fusion {
            cfg.fusion = f;
        }
        if let Some(g) = &self.geom_features {
            cfg.geom_features = parse_geom_list(g)?;
        }
        if let Some(s) = self.feature_source {
            cfg.feature_source = s;
        }
        if let Some(k) = self.eig_k {
            cfg.eig_k = k;
        }
        if let Some(t) = self.hks_t {
            cfg.hks_t = t;
        }
        if let Some(e) = self.epochs {
            cfg.network.epochs = e;
        }
        if let Some(lr) = self.learning_rate {
            cfg.network.learning_rate = lr;
        }
        if let Some(w) = self.width {
            cfg.network.width = w;
        }
        if let Some(b) = self.blocks {
            cfg.network.blocks = b;
        }
        if let Some(bs) = self.batch_size {
            cfg.network.batch_size = bs;
        }
        if let Some(s) = self.seed {
            cfg.network.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_geom_list(s: &str) -> Result<Vec<GeomFeature>, Error> {
    let mut out = Vec::new();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        out.push(match tok {
            "hks" => GeomFeature::Hks,
            "sigma30" => GeomFeature::Sigma30,
            "color" => GeomFeature::Color,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown geometric feature '{other}' (expected hks, sigma30, color)"
                )))
            }
        });
    }
    Ok(out)
}

/// Half-open sample index range "A..B" over sorted sample directories.
fn parse_range(s: &str) -> Result<(usize, usize), Error> {
    let parts: Vec<&str> = s.split("..").collect();
    if parts.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "range '{s}' must look like A..B"
        )));
    }
    let a = parts[0]
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("bad range start: {e}")))?;
    let b = parts[1]
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("bad range end: {e}")))?;
    if a >= b {
        return Err(Error::InvalidArgument(format!("empty range '{s}'")));
    }
    Ok((a, b))
}

fn slice_samples(dirs: &[PathBuf], range: Option<&str>) -> Result<Vec<PathBuf>, Error> {
    match range {
        None => Ok(dirs.to_vec()),
        Some(r) => {
            let (a, b) = parse_range(r)?;
            if b > dirs.len() {
                return Err(Error::InvalidArgument(format!(
                    "range {a}..{b} exceeds the {} samples present",
                    dirs.len()
                )));
            }
            Ok(dirs[a..b].to_vec())
        }
    }
}

#[derive(Args)]
struct PrecomputeArgs {
    /// Dataset directory of sample subdirectories
    #[arg(long)]
    data: PathBuf,
    /// Sample index range A..B (default: all)
    #[arg(long)]
    range: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Training sample range A..B over sorted sample dirs
    #[arg(long, default_value = "0..60")]
    train_range: String,
    /// Held-out sample range A..B
    #[arg(long, default_value = "60..80")]
    test_range: String,
    /// Output checkpoint path (DNET)
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON training log path
    #[arg(long)]
    log: Option<PathBuf>,
    /// Overwrite existing outputs
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct InferArgs {
    /// Checkpoint file (DNET)
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sample directory
    #[arg(long)]
    sample: PathBuf,
    /// Output predicted labels (LBLS)
    #[arg(long)]
    out: PathBuf,
    /// Optional logits output (FMAP, V x 1 x 2)
    #[arg(long)]
    logits: Option<PathBuf>,
    /// Overwrite existing outputs
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file (DNET)
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Sample range A..B (default: all)
    #[arg(long)]
    range: Option<String>,
    /// Write the JSON report here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct AblateArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Training sample range A..B
    #[arg(long, default_value = "0..60")]
    train_range: String,
    /// Held-out sample range A..B
    #[arg(long, default_value = "60..80")]
    test_range: String,
    /// Output results TSV
    #[arg(long)]
    out: PathBuf,
    /// JSON grid file: [[name, config], ...]; default grid when omitted
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Overwrite existing outputs
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

fn require_writable(path: &Path, force: bool) -> Result<(), Error> {
    if path.exists() && !force {
        return Err(Error::InvalidArgument(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not configure {n} threads: {e}");
            std::process::exit(2);
        }
    }
    let start = Instant::now();
    let result = run(cli.command);
    eprintln!("elapsed: {:.1}s", start.elapsed().as_secs_f64());
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(if e.is_validation() { 1 } else { 2 });
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Precompute(a) => precompute(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<(), Error> {
    let profile = match a.profile {
        ProfileArg::Test => GenProfile::test_profile(),
        ProfileArg::Large => GenProfile::large_profile(),
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for i in 0..a.count {
        let seed = a.seed + i as u64;
        let dir = a.out.join(format!("sample_{seed:04}"));
        if dir.exists() {
            if !a.force {
                return Err(Error::InvalidArgument(format!(
                    "{} already exists; pass --force to overwrite",
                    dir.display()
                )));
            }
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let t = Instant::now();
        let sample = synthgen::generate_sample(seed, &profile)?;
        synthgen::write_sample(&sample, &dir)?;
        eprintln!(
            "generated {} ({} vertices, {:.1}% non-skin) in {:.2}s",
            dir.display(),
            sample.scan.vertex_count(),
            100.0 * sample.labels.iter().filter(|&&l| l == 0).count() as f64
                / sample.labels.len() as f64,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

fn precompute(a: PrecomputeArgs) -> Result<(), Error> {
    let cfg = a.config.resolve()?;
    let dirs = slice_samples(&segpipe::list_samples(&a.data)?, a.range.as_deref())?;
    if dirs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no sample directories under {}",
            a.data.display()
        )));
    }
    for dir in &dirs {
        let t = Instant::now();
        let report = segpipe::precompute(dir, &cfg)?;
        eprintln!(
            "precomputed {} ({} eigensolves, {} files) in {:.2}s",
            dir.display(),
            report.eigensolves,
            report.files_written,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Error> {
    require_writable(&a.out, a.force)?;
    if let Some(log) = &a.log {
        require_writable(log, a.force)?;
    }
    let cfg = a.config.resolve()?;
    let dirs = segpipe::list_samples(&a.data)?;
    let train_dirs = slice_samples(&dirs, Some(&a.train_range))?;
    let test_dirs = slice_samples(&dirs, Some(&a.test_range))?;
    eprintln!(
        "training on {} samples, validating on {}",
        train_dirs.len(),
        test_dirs.len()
    );
    let (outcome, d_in) = segpipe::train_on_dirs(&train_dirs, &test_dirs, &cfg)?;
    for e in &outcome.log {
        eprintln!(
            "epoch {:3}  train loss {:.5}  val mIoU {:.4}",
            e.epoch, e.train_loss, e.val_miou
        );
    }
    eprintln!(
        "best epoch {} with val mIoU {:.4} (d_in = {d_in})",
        outcome.best_epoch, outcome.best_val_miou
    );
    write_checkpoint(&outcome.params, &a.out)?;
    eprintln!("wrote {}", a.out.display());
    if let Some(log_path) = &a.log {
        let text = serde_json::to_string_pretty(&outcome.log).expect("serializable");
        std::fs::write(log_path, text).map_err(|e| Error::io(log_path, e))?;
        eprintln!("wrote {}", log_path.display());
    }
    Ok(())
}

fn infer(a: InferArgs) -> Result<(), Error> {
    require_writable(&a.out, a.force)?;
    if let Some(l) = &a.logits {
        require_writable(l, a.force)?;
    }
    if !a.checkpoint.exists() {
        return Err(Error::MissingInput(a.checkpoint.clone()));
    }
    let cfg = a.config.resolve()?;
    let params = read_checkpoint(&a.checkpoint)?;
    let (labels, logits) = segpipe::infer(&params, &a.sample, &cfg)?;
    synthgen::write_labels(&labels, &a.out)?;
    eprintln!(
        "wrote {} ({} skin of {} vertices)",
        a.out.display(),
        labels.iter().filter(|&&l| l == 1).count(),
        labels.len()
    );
    if let Some(logits_path) = &a.logits {
        let mut map = scanseg::featio::FeatureMap::new(1, logits.nrows(), 2);
        for i in 0..logits.nrows() {
            let t = map.texel_mut(0, i);
            t[0] = logits[(i, 0)];
            t[1] = logits[(i, 1)];
        }
        scanseg::featio::write_fmap(&map, logits_path)?;
        eprintln!("wrote {}", logits_path.display());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Error> {
    if let Some(out) = &a.out {
        require_writable(out, a.force)?;
    }
    if !a.checkpoint.exists() {
        return Err(Error::MissingInput(a.checkpoint.clone()));
    }
    let cfg = a.config.resolve()?;
    let params = read_checkpoint(&a.checkpoint)?;
    let dirs = slice_samples(&segpipe::list_samples(&a.data)?, a.range.as_deref())?;
    let report = segpipe::evaluate(&params, &dirs, &cfg)?;
    eprintln!(
        "mIoU {:.4}  d_surface {:.3} +/- {:.3} mm over {} samples",
        report.miou,
        report.d_mean_mm,
        report.d_std_mm,
        report.per_sample.len()
    );
    let text = serde_json::to_string_pretty(&report).expect("serializable");
    match &a.out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
            eprintln!("wrote {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

/// The default ablation grid: the fused configuration, its
/// visibility-free variant, an image-only variant, and geometry-only.
fn default_grid(base: &PipelineConfig) -> ConfigGrid {
    let mut fused = base.clone();
    fused.fusion = FusionMode::VisMeanVar;
    fused.geom_features = vec![GeomFeature::Sigma30];

    let mut plain = base.clone();
    plain.fusion = FusionMode::Mean;
    plain.geom_features = vec![GeomFeature::Sigma30];

    let mut image_only = base.clone();
    image_only.fusion = FusionMode::VisMeanVar;
    image_only.geom_features = vec![];

    let mut geometry_only = base.clone();
    geometry_only.fusion = FusionMode::None;
    geometry_only.geom_features = vec![GeomFeature::Hks, GeomFeature::Sigma30];

    vec![
        ("fused_vis_mean_var_sigma30".into(), fused),
        ("plain_mean_sigma30".into(), plain),
        ("image_only_vis_mean_var".into(), image_only),
        ("geometry_only_hks_sigma30".into(), geometry_only),
    ]
}

fn ablate(a: AblateArgs) -> Result<(), Error> {
    require_writable(&a.out, a.force)?;
    let base = a.config.resolve()?;
    let grid: ConfigGrid = match &a.grid {
        None => default_grid(&base),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let parsed: Vec<(String, PipelineConfig)> = serde_json::from_str(&text)
                .map_err(|e| Error::parse(path, format!("line {}", e.line()), e.to_string()))?;
            for (name, cfg) in &parsed {
                cfg.validate()
                    .map_err(|e| Error::InvalidArgument(format!("grid entry '{name}': {e}")))?;
            }
            parsed
        }
    };
    let dirs = segpipe::list_samples(&a.data)?;
    let train_dirs = slice_samples(&dirs, Some(&a.train_range))?;
    let test_dirs = slice_samples(&dirs, Some(&a.test_range))?;
    eprintln!(
        "ablation over {} configs ({} train / {} test samples)",
        grid.len(),
        train_dirs.len(),
        test_dirs.len()
    );
    let tsv = segpipe::run_ablation(&train_dirs, &test_dirs, &grid)?;
    std::fs::write(&a.out, &tsv).map_err(|e| Error::io(&a.out, e))?;
    eprintln!("wrote {}", a.out.display());
    print!("{tsv}");
    Ok(())
}
