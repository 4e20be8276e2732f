//! `idg`: weight maps, losses, metrics and phantoms from the command line.
//!
//! JSON results go to stdout, progress notes to stderr. Exit codes: 0 success,
//! 1 I/O, 2 invalid input or flags, 3 input that a computation cannot handle.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use idg_core::distance::edt_squared;
use idg_core::grid::normalize_window;
use idg_core::intensity::{IdgConfig, SkeletonSource};
use idg_core::loss::{bce_map, compute_idg_maps, idg_loss, DEFAULT_EPS};
use idg_core::metrics::{decompose_branches, error_intensity_histogram, evaluate, skeleton_length, MetricsOptions};
use idg_core::morphology::{connected_components, skeletonize, Connectivity};
use idg_core::phantom::{generate, PhantomSpec};
use idg_core::volio::{read_mask, read_volume, write_mask, write_volume, VolumeHeader, WriteOptions};
use idg_core::{BinaryMask3, Error, ErrorClass, Result, Volume3};

#[derive(Parser, Debug)]
#[command(name = "idg", version, about = "Intensity-distance guided loss weights and airway metrics")]
struct Cli {
    /// Worker threads; 0 picks one per core. Falls back to IDG_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Suppress progress notes on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fused (or single) weight map for an image and airway mask.
    Weightmap(WeightmapArgs),
    /// Plain and weighted BCE of a probability map.
    Loss(LossArgs),
    /// DSC, tree length detected and branches detected.
    Metrics(MetricsArgs),
    /// Synthetic bronchial tree image and mask.
    Phantom(PhantomArgs),
    /// Euclidean distance (mm) to the nearest mask voxel.
    Edt(EdtArgs),
    /// Thinned centerline of a mask.
    Skeleton(MaskOutArgs),
    /// Connected component labels.
    Components(ComponentsArgs),
    /// Intensity histograms of false positives and false negatives.
    Errorhist(ErrorhistArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SkeletonFrom {
    Dilated,
    Bronchus,
}

#[derive(Args, Debug)]
struct IdgFlags {
    /// TOML file with weight-map settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Side of the cubic dilation kernel (odd) [default: 19].
    #[arg(long)]
    kernel: Option<usize>,
    /// Difficulty ramp half-width in standard deviations [default: 1.5].
    #[arg(long)]
    theta: Option<f64>,
    /// Extra weight inside the dilated region [default: 1.0].
    #[arg(long)]
    w_dila: Option<f64>,
    /// HU window as lo:hi [default: -1000:600].
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
    window: Option<(f64, f64)>,
    /// Mask whose centerline anchors the distance weights [default: dilated].
    #[arg(long, value_enum)]
    skeleton_from: Option<SkeletonFrom>,
}

impl IdgFlags {
    fn resolve(&self) -> Result<IdgConfig> {
        let mut cfg = match &self.config {
            Some(p) => IdgConfig::from_toml_str(&std::fs::read_to_string(p)?)?,
            None => IdgConfig::default(),
        };
        if let Some(k) = self.kernel {
            cfg.kernel_size = k;
        }
        if let Some(t) = self.theta {
            cfg.theta = t;
        }
        if let Some(w) = self.w_dila {
            cfg.w_dila = w;
        }
        if let Some(w) = self.window {
            cfg.window = w;
        }
        if let Some(s) = self.skeleton_from {
            cfg.skeleton_source = match s {
                SkeletonFrom::Dilated => SkeletonSource::Dilated,
                SkeletonFrom::Bronchus => SkeletonSource::Bronchus,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_window(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got {s:?}"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("window lower bound: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("window upper bound: {e}"))?;
    Ok((lo, hi))
}

#[derive(Args, Debug)]
struct WeightmapArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Write only the intensity weights.
    #[arg(long, conflicts_with = "distance_only")]
    intensity_only: bool,
    /// Write only the distance weights.
    #[arg(long)]
    distance_only: bool,
    #[command(flatten)]
    idg: IdgFlags,
}

#[derive(Args, Debug)]
struct LossArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Probability map in [0, 1].
    #[arg(long)]
    pred: PathBuf,
    /// Probability clamp inside the logarithms.
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    #[command(flatten)]
    idg: IdgFlags,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long)]
    gt: PathBuf,
    /// Binary mask or probability map.
    #[arg(long)]
    pred: PathBuf,
    /// Probabilities at or above this count as airway.
    #[arg(long, default_value_t = 0.5)]
    threshold: f32,
    #[arg(long, default_value_t = idg_core::metrics::DEFAULT_BD_THRESHOLD)]
    bd_threshold: f64,
    /// Score the whole prediction instead of its largest component.
    #[arg(long)]
    no_largest_cc: bool,
    /// Precomputed ground-truth centerline.
    #[arg(long)]
    skeleton: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PhantomArgs {
    /// TOML phantom spec; inline flags override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Also write the pocket voxels as a mask.
    #[arg(long)]
    pockets: Option<PathBuf>,
    /// Grid size as XxYxZ.
    #[arg(long, value_parser = parse_dims)]
    dims: Option<[usize; 3]>,
    #[arg(long)]
    depth: Option<u32>,
    #[arg(long)]
    root_radius: Option<f64>,
    #[arg(long)]
    radius_decay: Option<f64>,
    #[arg(long)]
    n_pockets: Option<usize>,
    #[arg(long)]
    pocket_offset: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(['x', 'X', ',']).collect();
    if parts.len() != 3 {
        return Err(format!("expected XxYxZ, got {s:?}"));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|e| format!("{p:?}: {e}"))?;
    }
    Ok(out)
}

#[derive(Args, Debug)]
struct EdtArgs {
    #[arg(long)]
    mask: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Write squared distances (mm²).
    #[arg(long)]
    squared: bool,
}

#[derive(Args, Debug)]
struct MaskOutArgs {
    #[arg(long)]
    mask: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct ComponentsArgs {
    #[arg(long)]
    mask: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// 6, 18 or 26.
    #[arg(long, default_value_t = 26)]
    connectivity: u32,
    /// Write the largest component as a mask instead of the label volume.
    #[arg(long)]
    largest: bool,
}

#[derive(Args, Debug)]
struct ErrorhistArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f32,
    #[arg(long, default_value_t = 64)]
    bins: usize,
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true, default_value = "-1000:600")]
    window: (f64, f64),
    #[arg(short, long)]
    output: PathBuf,
}

struct Ctx {
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("idg: {}", msg.as_ref());
        }
    }

    fn wrote(&self, path: &Path) {
        self.note(format!("wrote {}", path.display()));
    }
}

fn emit(v: Value) {
    println!("{}", serde_json::to_string_pretty(&v).expect("json value serializes"));
}

fn write_float(path: &Path, v: &Volume3, template: &VolumeHeader) -> Result<()> {
    write_volume(path, v, &WriteOptions { template: Some(template), ..Default::default() })
}

/// Reads a prediction and binarizes it at `threshold`.
fn read_binary(path: &Path, threshold: f32) -> Result<BinaryMask3> {
    let (v, _) = read_volume(path)?;
    let data = v.data().iter().map(|&p| p >= threshold).collect();
    BinaryMask3::new(*v.shape(), data)
}

fn summary(v: &Volume3) -> Value {
    let (min, max) = v.min_max();
    json!({ "min": min, "max": max, "mean": v.mean() })
}

fn weightmap(ctx: &Ctx, a: &WeightmapArgs) -> Result<()> {
    let cfg = a.idg.resolve()?;
    let (image, header) = read_volume(&a.image)?;
    let (mask, _) = read_mask(&a.mask)?;
    let maps = compute_idg_maps(&image, &mask, &cfg)?;
    let (kind, out) = if a.intensity_only {
        ("intensity", maps.intensity_volume())
    } else if a.distance_only {
        ("distance", maps.distance_volume())
    } else {
        ("fused", maps.fused()?)
    };
    write_float(&a.output, &out, &header)?;
    ctx.wrote(&a.output);
    emit(json!({
        "config": cfg,
        "output": a.output,
        "map": kind,
        "weights": summary(&out),
        "region": {
            "dilated": maps.region.dilated.count(),
            "inner": maps.region.inner.count(),
            "outer": maps.region.outer.count(),
            "skeleton": maps.skeleton.count(),
        },
        "model": maps.model,
    }));
    Ok(())
}

fn loss(_ctx: &Ctx, a: &LossArgs) -> Result<()> {
    let cfg = a.idg.resolve()?;
    let (image, _) = read_volume(&a.image)?;
    let (gt, _) = read_mask(&a.gt)?;
    let (pred, _) = read_volume(&a.pred)?;
    let bce = bce_map(&pred, &gt, a.eps)?;
    let fused = compute_idg_maps(&image, &gt, &cfg)?.fused()?;
    emit(json!({
        "config": cfg,
        "bce_mean": bce.mean(),
        "idg_loss": idg_loss(&bce, &fused)?,
    }));
    Ok(())
}

fn metrics(_ctx: &Ctx, a: &MetricsArgs) -> Result<()> {
    let (gt, _) = read_mask(&a.gt)?;
    let pred = read_binary(&a.pred, a.threshold)?;
    let skeleton = match &a.skeleton {
        Some(p) => Some(read_mask(p)?.0),
        None => None,
    };
    let opts = MetricsOptions { bd_threshold: a.bd_threshold, largest_component: !a.no_largest_cc };
    let report = evaluate(&pred, &gt, skeleton.as_ref(), &opts)?;
    emit(serde_json::to_value(report).expect("report serializes"));
    Ok(())
}

fn phantom(ctx: &Ctx, a: &PhantomArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => PhantomSpec::from_toml_str(&std::fs::read_to_string(p)?)?,
        None => PhantomSpec::default(),
    };
    if let Some(d) = a.dims {
        spec.dims = d;
    }
    if let Some(d) = a.depth {
        spec.depth = d;
    }
    if let Some(r) = a.root_radius {
        spec.root_radius = r;
    }
    if let Some(r) = a.radius_decay {
        spec.radius_decay = r;
    }
    if let Some(n) = a.n_pockets {
        spec.n_confusable_pockets = n;
    }
    if let Some(o) = a.pocket_offset {
        spec.pocket_offset = o;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let ph = generate(&spec)?;
    let graph = decompose_branches(&skeletonize(&ph.mask)?);
    write_volume(&a.output, &ph.image, &WriteOptions::default())?;
    ctx.wrote(&a.output);
    write_mask(&a.mask, &ph.mask, None)?;
    ctx.wrote(&a.mask);
    if let Some(p) = &a.pockets {
        write_mask(p, &ph.pockets, None)?;
        ctx.wrote(p);
    }
    emit(json!({
        "spec": spec,
        "n_segments": ph.n_segments(),
        "n_branches": graph.branches.len(),
        "airway_voxels": ph.mask.count(),
        "pocket_voxels": ph.pockets.count(),
    }));
    Ok(())
}

fn edt(ctx: &Ctx, a: &EdtArgs) -> Result<()> {
    let (mask, header) = read_mask(&a.mask)?;
    let field = edt_squared(&mask, mask.shape().spacing())?;
    let data = field.d2.iter().map(|&d2| if a.squared { d2 } else { d2.sqrt() } as f32).collect();
    write_float(&a.output, &Volume3::new(field.shape, data)?, &header)?;
    ctx.wrote(&a.output);
    emit(json!({ "d_max": field.d_max, "seeds": mask.count() }));
    Ok(())
}

fn skeleton(ctx: &Ctx, a: &MaskOutArgs) -> Result<()> {
    let (mask, header) = read_mask(&a.mask)?;
    let skel = skeletonize(&mask)?;
    write_mask(&a.output, &skel, Some(&header))?;
    ctx.wrote(&a.output);
    let graph = decompose_branches(&skel);
    emit(json!({
        "voxels": skel.count(),
        "n_branches": graph.branches.len(),
        "junctions": graph.junctions.len(),
        "endpoints": graph.endpoints.len(),
        "length_mm": skeleton_length(&skel, skel.shape().spacing())?,
    }));
    Ok(())
}

fn components(ctx: &Ctx, a: &ComponentsArgs) -> Result<()> {
    let conn = Connectivity::from_count(a.connectivity)?;
    let (mask, header) = read_mask(&a.mask)?;
    let comps = connected_components(&mask, conn);
    if a.largest {
        let keep = if comps.count() == 0 { BinaryMask3::empty(*mask.shape()) } else { comps.mask_of(1) };
        write_mask(&a.output, &keep, Some(&header))?;
    } else {
        let labels = Volume3::new(comps.shape, comps.labels.iter().map(|&l| l as f32).collect())?;
        write_float(&a.output, &labels, &header)?;
    }
    ctx.wrote(&a.output);
    emit(json!({ "n_components": comps.count(), "sizes": comps.sizes }));
    Ok(())
}

fn errorhist(ctx: &Ctx, a: &ErrorhistArgs) -> Result<()> {
    let (image, _) = read_volume(&a.image)?;
    let (gt, _) = read_mask(&a.gt)?;
    let pred = read_binary(&a.pred, a.threshold)?;
    let norm = normalize_window(&image, a.window.0, a.window.1)?;
    let hist = error_intensity_histogram(&norm, &pred, &gt, a.bins)?;
    std::fs::write(&a.output, hist.to_csv())?;
    ctx.wrote(&a.output);
    emit(json!({
        "bins": a.bins,
        "fp_total": hist.fp.iter().sum::<u64>(),
        "fn_total": hist.fn_.iter().sum::<u64>(),
    }));
    Ok(())
}

fn thread_count(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var("IDG_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Parameter(format!("IDG_THREADS = {v:?} is not a thread count"))),
        Err(_) => Ok(0),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let threads = thread_count(cli.threads)?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    }
    let ctx = Ctx { quiet: cli.quiet };
    match &cli.command {
        Command::Weightmap(a) => weightmap(&ctx, a),
        Command::Loss(a) => loss(&ctx, a),
        Command::Metrics(a) => metrics(&ctx, a),
        Command::Phantom(a) => phantom(&ctx, a),
        Command::Edt(a) => edt(&ctx, a),
        Command::Skeleton(a) => skeleton(&ctx, a),
        Command::Components(a) => components(&ctx, a),
        Command::Errorhist(a) => errorhist(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("idg: error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Io => 1,
                ErrorClass::Validation => 2,
                ErrorClass::Precondition => 3,
            })
        }
    }
}
