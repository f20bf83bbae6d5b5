//! The `fetomosaic` command line.
//!
//! Exit codes: 0 on success, 1 when a run completes but its success
//! condition fails (for example too many unregistered pairs) or an
//! internal error occurs, 2 for usage errors and unreadable inputs.
//! Errors are reported on stderr as one JSON object.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::drifteval::{evaluate_drift, summarize};
use crate::error::{Error, Result};
use crate::imagecore::{binarize, load_image, save_image, BinaryMask, BitDepth, ScalarImage};
use crate::metrics::{dice_score, iou_score, loss_breakdown, LossInputs};
use crate::mosaic::{blend, chain_transforms, render, Reference};
use crate::pipeline::{
    compare_runs, list_frames, load_frames, load_mask, read_drift_records, read_transforms, register_sequence,
    write_comparison, write_drift_records, write_json, write_summary, write_transforms, PipelineConfig,
    RegistrationDiagnostics,
};
use crate::synth::generate_sequence;
use crate::warp::{default_visibility, AffineTransform};

#[derive(Debug, Parser)]
#[command(
    name = "fetomosaic",
    version,
    about = "Vessel-map registration, mosaicking and drift evaluation for fetoscopy"
)]
pub struct Cli {
    /// TOML or JSON settings file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for synthetic data.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sequence with ground-truth transforms.
    Synth(SynthArgs),
    /// Register consecutive frames pairwise.
    Register(RegisterArgs),
    /// Blend frames into a mosaic.
    Mosaic(MosaicArgs),
    /// Windowed drift evaluation of a transform sequence.
    Drift(DriftArgs),
    /// Dice and IoU of predicted against reference segmentations.
    Segmetrics(SegmetricsArgs),
    /// BCE, Jaccard and combined loss of one prediction.
    Loss(LossArgs),
    /// Merge drift runs driven by vessel maps and by intensity frames.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub frame_size: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub occluder_rate: Option<f64>,
    #[arg(long)]
    pub vessels: Option<usize>,
}

/// Registration option overrides, named after the option fields.
#[derive(Debug, Args, Default)]
pub struct RegistrationFlags {
    #[arg(long)]
    pub pyramid_levels: Option<usize>,
    #[arg(long)]
    pub scale_factor: Option<f64>,
    #[arg(long)]
    pub max_iterations_per_level: Option<usize>,
    #[arg(long)]
    pub param_tolerance: Option<f64>,
    #[arg(long)]
    pub lm_lambda_init: Option<f64>,
    #[arg(long)]
    pub lm_lambda_up: Option<f64>,
    #[arg(long)]
    pub lm_lambda_down: Option<f64>,
    #[arg(long)]
    pub robust_threshold: Option<f64>,
    #[arg(long)]
    pub bidirectional: Option<bool>,
    #[arg(long)]
    pub presmooth_sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Directory of frames or probability maps, in filename order.
    #[arg(long)]
    pub frames: PathBuf,
    /// Visibility mask image; defaults to the inscribed circle with a 2% margin.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Output CSV of pairwise transforms (frame k+1 → frame k).
    #[arg(long)]
    pub out: PathBuf,
    /// Diagnostics JSON; defaults to `<out>` with a `.json` extension.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    #[arg(long)]
    pub max_failure_fraction: Option<f64>,
    #[command(flatten)]
    pub registration: RegistrationFlags,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["transforms", "register"])))]
pub struct MosaicArgs {
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Pairwise transforms CSV.
    #[arg(long, conflicts_with = "register")]
    pub transforms: Option<PathBuf>,
    /// Register the frames first instead of reading transforms.
    #[arg(long)]
    pub register: bool,
    #[arg(long, value_parser = parse_reference)]
    pub reference: Option<Reference>,
    /// Also write `<out>_annotated.png` with first/last frame outlines.
    #[arg(long)]
    pub annotate: bool,
    /// Output 16-bit PGM.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub registration: RegistrationFlags,
}

#[derive(Debug, Args)]
pub struct DriftArgs {
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub probmaps: PathBuf,
    #[arg(long)]
    pub transforms: PathBuf,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Per-record CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-offset summary CSV; defaults to `<out>_summary.csv`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SegmetricsArgs {
    /// Directory of predicted probability maps.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of reference masks, matched by file name.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    /// Reference mask image (nonzero = vessel).
    #[arg(long)]
    pub gt: PathBuf,
    /// Predicted probability map.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Drift records of the vessel-map run.
    #[arg(long)]
    pub vessel: PathBuf,
    /// Drift records of the intensity run.
    #[arg(long)]
    pub intensity: PathBuf,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_reference(s: &str) -> std::result::Result<Reference, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug)]
enum Failure {
    Error(Error),
    /// Run finished but its success condition did not hold.
    Unsuccessful(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` and runs the selected subcommand.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Unsuccessful(msg)) => {
            report("unsuccessful", &msg);
            ExitCode::from(1)
        }
        Err(Failure::Error(e)) => {
            let code = match &e {
                Error::Io { .. } | Error::InvalidArgument(_) | Error::Config(_) | Error::Format { .. } => 2,
                _ => 1,
            };
            report(kind(&e), &e.to_string());
            ExitCode::from(code)
        }
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::Format { .. } => "format",
        Error::InvalidImage(_) => "invalid_image",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::DimensionMismatch(_) => "dimension_mismatch",
        Error::DegenerateTransform { .. } => "degenerate_transform",
        Error::InsufficientOverlap { .. } => "insufficient_overlap",
        Error::SingularSystem { .. } => "singular_system",
        Error::DegenerateChain { .. } => "degenerate_chain",
        Error::Config(_) => "config",
        Error::Empty(_) => "empty",
    }
}

fn report(kind: &str, message: &str) {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
}

fn execute(cli: Cli) -> CmdResult {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.synth.seed = seed;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()).into());
        }
        // only fails if a pool already exists, in which case it is reused
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(cfg, a),
        Command::Register(a) => cmd_register(cfg, a),
        Command::Mosaic(a) => cmd_mosaic(cfg, a),
        Command::Drift(a) => cmd_drift(cfg, a),
        Command::Segmetrics(a) => cmd_segmetrics(cfg, a),
        Command::Loss(a) => cmd_loss(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "input directory not found"),
        ))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn with_suffix(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn apply_flags(cfg: &mut PipelineConfig, f: &RegistrationFlags) -> Result<()> {
    let o = &mut cfg.registration;
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = f.$field { o.$field = v; })* };
    }
    set!(
        pyramid_levels,
        scale_factor,
        max_iterations_per_level,
        param_tolerance,
        lm_lambda_init,
        lm_lambda_up,
        lm_lambda_down,
        robust_threshold,
        bidirectional,
        presmooth_sigma
    );
    cfg.validate()
}

fn visibility_for(mask: Option<&Path>, frames: &[ScalarImage]) -> Result<BinaryMask> {
    let (w, h) = frames[0].dims();
    let m = match mask {
        Some(p) => load_mask(p)?,
        None => default_visibility(w, h)?,
    };
    if m.dims() != (w, h) {
        return Err(Error::DimensionMismatch(format!(
            "mask is {}x{}, frames are {w}x{h}",
            m.width(),
            m.height()
        )));
    }
    Ok(m)
}

fn cmd_synth(mut cfg: PipelineConfig, a: SynthArgs) -> CmdResult {
    let s = &mut cfg.synth;
    if let Some(v) = a.frames {
        s.n_frames = v;
    }
    if let Some(v) = a.frame_size {
        s.frame = v;
    }
    if let Some(v) = a.noise_sigma {
        s.noise_sigma = v;
    }
    if let Some(v) = a.occluder_rate {
        s.occluder_rate = v;
    }
    if let Some(v) = a.vessels {
        s.n_vessels = v;
    }
    let seq = generate_sequence(s)?;
    let frames_dir = a.out.join("frames");
    let probs_dir = a.out.join("probmaps");
    create_dir(&frames_dir)?;
    create_dir(&probs_dir)?;
    for (k, (f, p)) in seq.frames.iter().zip(&seq.prob_maps).enumerate() {
        save_image(f, frames_dir.join(format!("frame_{k:04}.pgm")), BitDepth::Sixteen)?;
        save_image(p, probs_dir.join(format!("frame_{k:04}.pgm")), BitDepth::Sixteen)?;
    }
    save_image(&seq.visibility.to_image(), a.out.join("mask.pgm"), BitDepth::Eight)?;
    write_transforms(&seq.gt_pairwise, &a.out.join("gt_transforms.csv"))?;
    write_json(&cfg.synth, &a.out.join("config.json"))?;
    print_json(&serde_json::json!({ "frames": seq.frames.len(), "out": a.out }));
    Ok(())
}

fn cmd_register(mut cfg: PipelineConfig, a: RegisterArgs) -> CmdResult {
    apply_flags(&mut cfg, &a.registration)?;
    if let Some(v) = a.max_failure_fraction {
        cfg.max_failure_fraction = v;
        cfg.validate()?;
    }
    require_dir(&a.frames)?;
    let frames = load_frames(&a.frames)?;
    let vis = visibility_for(a.mask.as_deref(), &frames)?;
    let pairs = register_sequence(&frames, &vis, &cfg.registration)?;
    let transforms: Vec<AffineTransform> = pairs.iter().map(|p| p.transform).collect();
    ensure_parent(&a.out)?;
    write_transforms(&transforms, &a.out)?;
    let diag = RegistrationDiagnostics::new(pairs, cfg.registration.clone(), cfg.max_failure_fraction);
    let diag_path = a.diagnostics.unwrap_or_else(|| a.out.with_extension("json"));
    write_json(&diag, &diag_path)?;
    print_json(&serde_json::json!({
        "pairs": diag.pairs.len(),
        "failed": diag.failed,
        "failure_fraction": diag.failure_fraction,
        "transforms": a.out,
        "diagnostics": diag_path,
    }));
    if diag.success() {
        Ok(())
    } else {
        Err(Failure::Unsuccessful(format!(
            "{} of {} pairs failed ({:.1}% > {:.1}%)",
            diag.failed,
            diag.pairs.len(),
            100.0 * diag.failure_fraction,
            100.0 * diag.max_failure_fraction
        )))
    }
}

fn cmd_mosaic(mut cfg: PipelineConfig, a: MosaicArgs) -> CmdResult {
    apply_flags(&mut cfg, &a.registration)?;
    require_dir(&a.frames)?;
    let frames = load_frames(&a.frames)?;
    let vis = visibility_for(a.mask.as_deref(), &frames)?;
    let pairwise = match &a.transforms {
        Some(p) => read_transforms(p)?,
        None if frames.len() == 1 => Vec::new(),
        None => register_sequence(&frames, &vis, &cfg.registration)?
            .into_iter()
            .map(|p| p.transform)
            .collect(),
    };
    if pairwise.len() + 1 != frames.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} frames need {} transforms, got {}",
            frames.len(),
            frames.len() - 1,
            pairwise.len()
        ))
        .into());
    }
    let reference = a.reference.unwrap_or(cfg.reference);
    let chain = chain_transforms(&pairwise, reference.index(frames.len()))?;
    let inputs: Vec<(ScalarImage, BinaryMask)> = frames.into_iter().map(|f| (f, vis.clone())).collect();
    let m = blend(&inputs, &chain)?;
    ensure_parent(&a.out)?;
    let written = render(&m, &a.out, a.annotate)?;
    print_json(&serde_json::json!({
        "width": m.width,
        "height": m.height,
        "offset": [m.offset.0, m.offset.1],
        "reference_index": chain.reference_index,
        "written": written,
    }));
    Ok(())
}

fn cmd_drift(mut cfg: PipelineConfig, a: DriftArgs) -> CmdResult {
    if let Some(w) = a.window {
        cfg.window_size = w;
    }
    if let Some(t) = a.threshold {
        cfg.threshold = t;
    }
    cfg.validate()?;
    require_dir(&a.frames)?;
    require_dir(&a.probmaps)?;
    let frames = load_frames(&a.frames)?;
    let probs = load_frames(&a.probmaps)?;
    let vis = visibility_for(a.mask.as_deref(), &frames)?;
    let pairwise = read_transforms(&a.transforms)?;
    let report = evaluate_drift(&frames, &probs, &vis, &pairwise, cfg.window_size, cfg.threshold)?;
    ensure_parent(&a.out)?;
    write_drift_records(&report.records, &a.out)?;
    let summary_path = a.summary.unwrap_or_else(|| with_suffix(&a.out, "_summary", "csv"));
    write_summary(&summarize(&report)?, &summary_path)?;
    print_json(&serde_json::json!({
        "windows": report.window_count(),
        "records": report.records.len(),
        "out": a.out,
        "summary": summary_path,
    }));
    Ok(())
}

#[derive(Debug, Serialize)]
struct SegRow {
    image: String,
    dice: f64,
    iou: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn csv_sink(out: Option<&Path>) -> Result<csv::Writer<Box<dyn std::io::Write>>> {
    let w: Box<dyn std::io::Write> = match out {
        Some(p) => {
            ensure_parent(p)?;
            Box::new(fs::File::create(p).map_err(|e| Error::io(p, e))?)
        }
        None => Box::new(std::io::stdout()),
    };
    Ok(csv::Writer::from_writer(w))
}

fn csv_fail(e: csv::Error) -> Error {
    Error::Format {
        path: PathBuf::from("<csv output>"),
        reason: e.to_string(),
    }
}

fn cmd_segmetrics(cfg: PipelineConfig, a: SegmetricsArgs) -> CmdResult {
    let threshold = a.threshold.unwrap_or(cfg.threshold);
    require_dir(&a.pred)?;
    require_dir(&a.gt)?;
    let preds = list_frames(&a.pred)?;
    if preds.is_empty() {
        return Err(Error::Empty(format!("no images in {}", a.pred.display())).into());
    }
    let mut rows = Vec::with_capacity(preds.len());
    for p in &preds {
        let name = p.file_name().expect("listed files have names");
        let gt_path = a.gt.join(name);
        let pred = binarize(&load_image(p)?, threshold)?;
        let gt = binarize(&load_image(&gt_path)?, 0.5)?;
        rows.push(SegRow {
            image: name.to_string_lossy().into_owned(),
            dice: dice_score(&pred, &gt)?,
            iou: iou_score(&pred, &gt)?,
        });
    }
    let dice: Vec<f64> = rows.iter().map(|r| r.dice).collect();
    let iou: Vec<f64> = rows.iter().map(|r| r.iou).collect();
    let (dm, ds) = mean_std(&dice);
    let (im, is) = mean_std(&iou);
    let mut w = csv_sink(a.out.as_deref())?;
    for r in &rows {
        w.serialize(r).map_err(csv_fail)?;
    }
    w.serialize(SegRow {
        image: "mean".into(),
        dice: dm,
        iou: im,
    })
    .map_err(csv_fail)?;
    w.serialize(SegRow {
        image: "std".into(),
        dice: ds,
        iou: is,
    })
    .map_err(csv_fail)?;
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

fn cmd_loss(a: LossArgs) -> CmdResult {
    let gt = binarize(&load_image(&a.gt)?, 0.5)?;
    let pred = load_image(&a.pred)?;
    let mut inputs = LossInputs::from_images(&gt, &pred)?;
    if let Some(d) = a.delta {
        let p = gt.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let q = pred.data().iter().map(|&v| f64::from(v)).collect();
        inputs = LossInputs::with_delta(p, q, d)?;
    }
    print_json(&loss_breakdown(&inputs));
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> CmdResult {
    let vessel = read_drift_records(&a.vessel)?;
    let intensity = read_drift_records(&a.intensity)?;
    let rows = compare_runs(&vessel, &intensity)?;
    match &a.out {
        Some(p) => {
            ensure_parent(p)?;
            write_comparison(&rows, p)?;
        }
        None => {
            let mut w = csv_sink(None)?;
            for r in &rows {
                w.serialize(r).map_err(csv_fail)?;
            }
            w.flush().map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(())
}
