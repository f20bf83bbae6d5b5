//! Sequence-level plumbing shared by the command line and the examples:
//! frame discovery, CSV/JSON artefacts, and sequential registration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::drifteval::{DriftRecord, FiveNumber, Metric, SummaryRow};
use crate::error::{Error, Result};
use crate::imagecore::{load_image, BinaryMask, ScalarImage};
use crate::mosaic::Reference;
use crate::register::{register_pair, RegistrationOptions};
use crate::synth::SynthConfig;
use crate::warp::AffineTransform;

/// Which images drive registration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputMode {
    #[default]
    ProbabilityMaps,
    IntensityFrames,
}

/// Settings file accepted by `--config`. Every section is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input_mode: InputMode,
    pub registration: RegistrationOptions,
    pub reference: Reference,
    pub window_size: usize,
    pub threshold: f64,
    /// `register` exits nonzero when more than this fraction of pairs fail.
    pub max_failure_fraction: f64,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input_mode: InputMode::default(),
            registration: RegistrationOptions::default(),
            reference: Reference::default(),
            window_size: crate::drifteval::DEFAULT_WINDOW,
            threshold: crate::drifteval::DEFAULT_THRESHOLD,
            max_failure_fraction: 0.2,
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: PipelineConfig = read_config(path.as_ref())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.registration.validate()?;
        if self.window_size < 2 {
            return Err(Error::Config("window_size must be at least 2".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("threshold must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return Err(Error::Config("max_failure_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// TOML, or JSON when the extension is `.json`.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    } else {
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Sort key: the last run of digits in the file stem, then the full name.
/// Names without digits sort after numbered ones.
fn frame_key(path: &Path) -> (bool, u128, String) {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = path
        .file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let digits: String = stem
        .chars()
        .rev()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    match digits.parse::<u128>() {
        Ok(n) => (false, n, name),
        Err(_) => (true, 0, name),
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "png"))
}

/// PGM and PNG files in `dir`, in frame order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image(&path) {
            paths.push(path);
        }
    }
    paths.sort_by_cached_key(|p| frame_key(p));
    Ok(paths)
}

pub fn load_frames(dir: &Path) -> Result<Vec<ScalarImage>> {
    let paths = list_frames(dir)?;
    if paths.is_empty() {
        return Err(Error::Empty(format!("no PGM or PNG frames in {}", dir.display())));
    }
    let frames = paths.iter().map(load_image).collect::<Result<Vec<_>>>()?;
    let dims = frames[0].dims();
    if let Some((p, f)) = paths.iter().zip(&frames).find(|(_, f)| f.dims() != dims) {
        return Err(Error::DimensionMismatch(format!(
            "{} is {}x{}, first frame is {}x{}",
            p.display(),
            f.width(),
            f.height(),
            dims.0,
            dims.1
        )));
    }
    Ok(frames)
}

/// Loads a visibility mask image (nonzero = visible).
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = load_image(path)?;
    BinaryMask::new(img.width(), img.height(), img.data().iter().map(|&v| v > 0.0).collect())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct TransformRow {
    a11: f64,
    a12: f64,
    a21: f64,
    a22: f64,
    tx: f64,
    ty: f64,
}

pub fn write_transforms(transforms: &[AffineTransform], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for t in transforms {
        let [a11, a12, a21, a22, tx, ty] = t.params();
        w.serialize(TransformRow {
            a11,
            a12,
            a21,
            a22,
            tx,
            ty,
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_transforms(path: &Path) -> Result<Vec<AffineTransform>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<TransformRow>().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let t = AffineTransform::new(row.a11, row.a12, row.a21, row.a22, row.tx, row.ty)
            .map_err(|e| Error::format(path, format!("row {}: {e}", i + 1)))?;
        out.push(t);
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        }
    } else {
        Error::format(path, e.to_string())
    }
}

/// Outcome of registering frame `index + 1` onto frame `index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub index: usize,
    /// Identity when registration failed outright.
    pub transform: AffineTransform,
    pub final_cost: Option<f64>,
    pub iterations_per_level: Vec<usize>,
    pub converged: bool,
    pub valid_pixel_fraction: f64,
    pub error: Option<String>,
}

/// Registers each consecutive pair in order. Pair `k` starts from the
/// transform found for pair `k − 1` (identity for the first pair and after
/// a failure).
pub fn register_sequence(
    images: &[ScalarImage],
    visibility: &BinaryMask,
    opts: &RegistrationOptions,
) -> Result<Vec<PairOutcome>> {
    opts.validate()?;
    if images.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "registration needs at least 2 frames, got {}",
            images.len()
        )));
    }
    let mut init = AffineTransform::IDENTITY;
    let mut out = Vec::with_capacity(images.len() - 1);
    for k in 0..images.len() - 1 {
        let fixed = (&images[k], visibility);
        let moving = (&images[k + 1], visibility);
        let outcome = match register_pair(fixed, moving, &init, opts) {
            Ok(r) => PairOutcome {
                index: k,
                transform: r.transform,
                final_cost: Some(r.final_cost),
                iterations_per_level: r.iterations_per_level,
                converged: r.converged,
                valid_pixel_fraction: r.valid_pixel_fraction,
                error: None,
            },
            Err(e) => PairOutcome {
                index: k,
                transform: AffineTransform::IDENTITY,
                final_cost: None,
                iterations_per_level: Vec::new(),
                converged: false,
                valid_pixel_fraction: match e {
                    Error::InsufficientOverlap { fraction } => fraction,
                    _ => 0.0,
                },
                error: Some(e.to_string()),
            },
        };
        init = outcome.transform;
        out.push(outcome);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationDiagnostics {
    pub pairs: Vec<PairOutcome>,
    pub failed: usize,
    pub failure_fraction: f64,
    pub max_failure_fraction: f64,
    pub options: RegistrationOptions,
}

impl RegistrationDiagnostics {
    pub fn new(pairs: Vec<PairOutcome>, options: RegistrationOptions, max_failure_fraction: f64) -> Self {
        let failed = pairs.iter().filter(|p| !p.converged).count();
        let failure_fraction = failed as f64 / pairs.len().max(1) as f64;
        RegistrationDiagnostics {
            pairs,
            failed,
            failure_fraction,
            max_failure_fraction,
            options,
        }
    }

    pub fn success(&self) -> bool {
        self.failure_fraction <= self.max_failure_fraction
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DriftCsvRow {
    window_start: usize,
    offset: usize,
    ssim: Option<f64>,
    ssim_prob: Option<f64>,
    iou: Option<f64>,
    valid_fraction: f64,
}

pub fn write_drift_records(records: &[DriftRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.serialize(DriftCsvRow {
            window_start: r.window_start,
            offset: r.offset,
            ssim: r.ssim,
            ssim_prob: r.ssim_prob,
            iou: r.iou,
            valid_fraction: r.valid_fraction,
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_drift_records(path: &Path) -> Result<Vec<DriftRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize::<DriftCsvRow>()
        .map(|row| {
            let row = row.map_err(|e| csv_error(path, e))?;
            Ok(DriftRecord {
                window_start: row.window_start,
                offset: row.offset,
                ssim: row.ssim,
                ssim_prob: row.ssim_prob,
                iou: row.iou,
                valid_fraction: row.valid_fraction,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct SummaryCsvRow {
    offset: usize,
    metric: &'static str,
    n: usize,
    min: Option<f64>,
    q1: Option<f64>,
    median: Option<f64>,
    q3: Option<f64>,
    max: Option<f64>,
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        let s = row.stats;
        w.serialize(SummaryCsvRow {
            offset: row.offset,
            metric: row.metric.name(),
            n: s.map_or(0, |s| s.n),
            min: s.map(|s| s.min),
            q1: s.map(|s| s.q1),
            median: s.map(|s| s.median),
            q3: s.map(|s| s.q3),
            max: s.map(|s| s.max),
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One metric at one offset for a vessel-driven and an intensity-driven run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub offset: usize,
    pub metric: &'static str,
    pub vessel_n: usize,
    pub vessel_q1: Option<f64>,
    pub vessel_median: Option<f64>,
    pub vessel_q3: Option<f64>,
    pub intensity_n: usize,
    pub intensity_q1: Option<f64>,
    pub intensity_median: Option<f64>,
    pub intensity_q3: Option<f64>,
    /// Vessel median minus intensity median.
    pub delta_median: Option<f64>,
}

fn window_starts(records: &[DriftRecord]) -> Vec<usize> {
    let mut s: Vec<usize> = records.iter().map(|r| r.window_start).collect();
    s.sort_unstable();
    s.dedup();
    s
}

/// Merges two drift runs over the same sequence into per-offset rows.
pub fn compare_runs(vessel: &[DriftRecord], intensity: &[DriftRecord]) -> Result<Vec<ComparisonRow>> {
    if vessel.is_empty() || intensity.is_empty() {
        return Err(Error::Empty("drift run has no records".into()));
    }
    let (wv, wi) = (window_starts(vessel), window_starts(intensity));
    if wv.len() != wi.len() || vessel.len() != intensity.len() {
        return Err(Error::DimensionMismatch(format!(
            "vessel run has {} windows ({} records), intensity run has {} windows ({} records)",
            wv.len(),
            vessel.len(),
            wi.len(),
            intensity.len()
        )));
    }
    let mut offsets: Vec<usize> = vessel.iter().chain(intensity).map(|r| r.offset).collect();
    offsets.sort_unstable();
    offsets.dedup();
    let stats = |records: &[DriftRecord], d: usize, m: Metric| {
        let v: Vec<f64> = records
            .iter()
            .filter(|r| r.offset == d)
            .filter_map(|r| m.of(r))
            .collect();
        FiveNumber::of(&v)
    };
    let mut rows = Vec::new();
    for d in offsets {
        for m in Metric::ALL {
            let (a, b) = (stats(vessel, d, m), stats(intensity, d, m));
            rows.push(ComparisonRow {
                offset: d,
                metric: m.name(),
                vessel_n: a.map_or(0, |s| s.n),
                vessel_q1: a.map(|s| s.q1),
                vessel_median: a.map(|s| s.median),
                vessel_q3: a.map(|s| s.q3),
                intensity_n: b.map_or(0, |s| s.n),
                intensity_q1: b.map(|s| s.q1),
                intensity_median: b.map(|s| s.median),
                intensity_q3: b.map(|s| s.q3),
                delta_median: a.zip(b).map(|(a, b)| a.median - b.median),
            });
        }
    }
    Ok(rows)
}

pub fn write_comparison(rows: &[ComparisonRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
