//! Ground-truth-free drift measurement.
//!
//! The sequence is cut into non-overlapping windows of `W` frames starting
//! at 0, W, 2W, … (a trailing partial window is dropped). Inside a window
//! starting at `s`, frame `s+d` for `d = 1..W−1` is brought into frame `s`
//! through the composed pairwise transforms and compared with it over the
//! joint validity region: SSIM on intensity frames, SSIM on probability
//! maps, and IoU of the probability maps binarized at `threshold`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{binarize, same_dims, BinaryMask, ScalarImage};
use crate::metrics::{iou_score, ssim, SsimParams};
use crate::register::MIN_VALID_FRACTION;
use crate::warp::{warp_image, AffineTransform};

pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// One (window, offset) comparison. Metrics are `None` when the overlap
/// is too small to evaluate them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRecord {
    pub window_start: usize,
    pub offset: usize,
    /// SSIM of the intensity frames.
    pub ssim: Option<f64>,
    /// SSIM of the probability maps.
    pub ssim_prob: Option<f64>,
    pub iou: Option<f64>,
    /// Joint validity pixels over visibility pixels.
    pub valid_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub records: Vec<DriftRecord>,
    pub window_size: usize,
}

impl DriftReport {
    pub fn window_count(&self) -> usize {
        self.records.len() / (self.window_size - 1).max(1)
    }
}

/// Frame `start + offset` → frame `start`.
pub fn compose_span(pairwise: &[AffineTransform], start: usize, offset: usize) -> Result<AffineTransform> {
    pairwise[start..start + offset]
        .iter()
        .try_fold(AffineTransform::IDENTITY, |acc, g| acc.compose(g))
}

pub fn evaluate_drift(
    frames: &[ScalarImage],
    prob_maps: &[ScalarImage],
    visibility: &BinaryMask,
    pairwise: &[AffineTransform],
    window_size: usize,
    threshold: f64,
) -> Result<DriftReport> {
    if window_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "window size {window_size} must be at least 2"
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} must lie in (0, 1)"
        )));
    }
    let n = frames.len();
    if prob_maps.len() != n || pairwise.len() + 1 != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} frames, {} probability maps, {} transforms",
            prob_maps.len(),
            pairwise.len()
        )));
    }
    for img in frames.iter().chain(prob_maps) {
        same_dims(visibility.dims(), img.dims())?;
    }
    let jobs: Vec<(usize, usize)> = (0..n / window_size)
        .flat_map(|w| (1..window_size).map(move |d| (w * window_size, d)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(s, d)| compare(frames, prob_maps, visibility, pairwise, s, d, threshold))
        .collect::<Result<Vec<_>>>()?;
    Ok(DriftReport { records, window_size })
}

fn compare(
    frames: &[ScalarImage],
    prob_maps: &[ScalarImage],
    visibility: &BinaryMask,
    pairwise: &[AffineTransform],
    s: usize,
    d: usize,
    threshold: f64,
) -> Result<DriftRecord> {
    let (w, h) = visibility.dims();
    let mut record = DriftRecord {
        window_start: s,
        offset: d,
        ssim: None,
        ssim_prob: None,
        iou: None,
        valid_fraction: 0.0,
    };
    // a span whose scale leaves the admissible range has no usable overlap
    let to_source = match compose_span(pairwise, s, d) {
        Ok(t) => t.invert(),
        Err(Error::DegenerateTransform { .. }) => return Ok(record),
        Err(e) => return Err(e),
    };
    let frame = warp_image(&frames[s + d], visibility, &to_source, w, h)?;
    let prob = warp_image(&prob_maps[s + d], visibility, &to_source, w, h)?;
    let joint = frame.validity.and(visibility)?;
    record.valid_fraction = joint.count() as f64 / visibility.count().max(1) as f64;
    if record.valid_fraction < MIN_VALID_FRACTION {
        return Ok(record);
    }
    let params = SsimParams::default();
    record.ssim = optional(ssim(&frames[s], &frame.image, &joint, &params))?;
    record.ssim_prob = optional(ssim(&prob_maps[s], &prob.image, &joint, &params))?;
    let a = binarize(&prob_maps[s], threshold)?.and(&joint)?;
    let b = binarize(&prob.image, threshold)?.and(&joint)?;
    record.iou = Some(iou_score(&a, &b)?);
    Ok(record)
}

fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::InsufficientOverlap { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Box-plot statistics. Quartiles interpolate linearly between order
/// statistics at rank `(n − 1)·p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    pub fn of(values: &[f64]) -> Option<FiveNumber> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = (v.len() - 1) as f64 * p;
            let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(FiveNumber {
            n: v.len(),
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ssim,
    SsimProb,
    Iou,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ssim, Metric::SsimProb, Metric::Iou];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ssim => "ssim",
            Metric::SsimProb => "ssim_prob",
            Metric::Iou => "iou",
        }
    }

    pub fn from_name(s: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn of(self, r: &DriftRecord) -> Option<f64> {
        match self {
            Metric::Ssim => r.ssim,
            Metric::SsimProb => r.ssim_prob,
            Metric::Iou => r.iou,
        }
    }
}

/// Statistics of one metric at one offset, over the records where it is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub offset: usize,
    pub metric: Metric,
    pub stats: Option<FiveNumber>,
}

/// Per-offset summaries, ordered by offset then metric.
pub fn summarize(report: &DriftReport) -> Result<Vec<SummaryRow>> {
    if report.records.is_empty() {
        return Err(Error::Empty("drift report has no records".into()));
    }
    let mut offsets: Vec<usize> = report.records.iter().map(|r| r.offset).collect();
    offsets.sort_unstable();
    offsets.dedup();
    let mut rows = Vec::with_capacity(offsets.len() * Metric::ALL.len());
    for d in offsets {
        for metric in Metric::ALL {
            let values: Vec<f64> = report
                .records
                .iter()
                .filter(|r| r.offset == d)
                .filter_map(|r| metric.of(r))
                .collect();
            rows.push(SummaryRow {
                offset: d,
                metric,
                stats: FiveNumber::of(&values),
            });
        }
    }
    Ok(rows)
}

/// Median of `metric` at `offset`, if any record defines it.
pub fn median_at(report: &DriftReport, offset: usize, metric: Metric) -> Option<f64> {
    let values: Vec<f64> = report
        .records
        .iter()
        .filter(|r| r.offset == offset)
        .filter_map(|r| metric.of(r))
        .collect();
    FiveNumber::of(&values).map(|s| s.median)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_sequence, SynthConfig, Trajectory};
    use proptest::prelude::*;

    fn record(offset: usize, v: f64) -> DriftRecord {
        DriftRecord {
            window_start: 0,
            offset,
            ssim: Some(v),
            ssim_prob: Some(v),
            iou: Some(v),
            valid_fraction: 1.0,
        }
    }

    #[test]
    fn static_scene_is_perfect() {
        let cfg = SynthConfig {
            canvas: 160,
            frame: 64,
            n_frames: 11,
            n_vessels: 3,
            vessel_width_range: [5.0, 8.0],
            trajectory: Trajectory::still(),
            noise_sigma: 0.0,
            ..SynthConfig::default()
        };
        let seq = generate_sequence(&cfg).unwrap();
        let report = evaluate_drift(&seq.frames, &seq.prob_maps, &seq.visibility, &seq.gt_pairwise, 5, 0.5).unwrap();
        assert_eq!(report.records.len(), 8);
        assert_eq!(report.window_count(), 2);
        let starts: Vec<usize> = report.records.iter().map(|r| r.window_start).collect();
        assert_eq!(starts, vec![0, 0, 0, 0, 5, 5, 5, 5]);
        for r in &report.records {
            assert!((1..5).contains(&r.offset));
            assert!((r.ssim.unwrap() - 1.0).abs() < 1e-12);
            assert!((r.ssim_prob.unwrap() - 1.0).abs() < 1e-12);
            assert_eq!(r.iou, Some(1.0));
            assert_eq!(r.valid_fraction, 1.0);
        }
    }

    #[test]
    fn disjoint_views_yield_null_metrics() {
        let img = ScalarImage::constant(32, 32, 0.5).unwrap();
        let vis = BinaryMask::filled(32, 32, true).unwrap();
        let far = AffineTransform::translation(40.0, 0.0);
        let report = evaluate_drift(&[img.clone(), img.clone()], &[img.clone(), img], &vis, &[far], 2, 0.5).unwrap();
        let r = &report.records[0];
        assert_eq!((r.ssim, r.ssim_prob, r.iou, r.valid_fraction), (None, None, None, 0.0));
    }

    #[test]
    fn degenerate_span_yields_null_metrics() {
        let img = ScalarImage::constant(32, 32, 0.5).unwrap();
        let vis = BinaryMask::filled(32, 32, true).unwrap();
        let zoom = AffineTransform::new(3.0, 0.0, 0.0, 3.0, 0.0, 0.0).unwrap();
        let frames = vec![img; 3];
        let report = evaluate_drift(&frames, &frames, &vis, &[zoom, zoom], 3, 0.5).unwrap();
        assert!(report.records[0].iou.is_some());
        let r = &report.records[1];
        assert_eq!((r.offset, r.ssim, r.iou, r.valid_fraction), (2, None, None, 0.0));
    }

    #[test]
    fn rejects_inconsistent_inputs() {
        let img = ScalarImage::constant(16, 16, 0.5).unwrap();
        let vis = BinaryMask::filled(16, 16, true).unwrap();
        let frames = vec![img.clone(); 3];
        let id = vec![AffineTransform::IDENTITY; 2];
        assert!(evaluate_drift(&frames, &frames[..2], &vis, &id, 2, 0.5).is_err());
        assert!(evaluate_drift(&frames, &frames, &vis, &id[..1], 2, 0.5).is_err());
        assert!(evaluate_drift(&frames, &frames, &vis, &id, 1, 0.5).is_err());
        // fewer frames than one window: valid but empty
        let r = evaluate_drift(&frames, &frames, &vis, &id, 5, 0.5).unwrap();
        assert!(r.records.is_empty());
        assert!(summarize(&r).is_err());
    }

    #[test]
    fn summary_examples() {
        let single = DriftReport {
            records: (1..5).map(|d| record(d, 0.1 * d as f64)).collect(),
            window_size: 5,
        };
        let rows = summarize(&single).unwrap();
        assert_eq!(rows.len(), 12);
        for row in &rows {
            let s = row.stats.unwrap();
            assert_eq!(s.median, 0.1 * row.offset as f64);
            assert_eq!(s.iqr(), 0.0);
        }
        assert_eq!(FiveNumber::of(&[0.7; 5]).unwrap().iqr(), 0.0);
        assert!(FiveNumber::of(&[]).is_none());

        // numpy.percentile([1, 2, 3, 4], [25, 50, 75]) = [1.75, 2.5, 3.25]
        let s = FiveNumber::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 1.75, 2.5, 3.25, 4.0));
    }

    #[test]
    fn summary_skips_null_metrics() {
        let mut rec = record(1, 0.5);
        rec.iou = None;
        let report = DriftReport {
            records: vec![rec, record(1, 0.7)],
            window_size: 2,
        };
        let rows = summarize(&report).unwrap();
        let iou = rows.iter().find(|r| r.metric == Metric::Iou).unwrap();
        assert_eq!(iou.stats.unwrap().n, 1);
        assert_eq!(median_at(&report, 1, Metric::Ssim), Some(0.6));
        assert_eq!(Metric::from_name("ssim_prob"), Some(Metric::SsimProb));
    }

    proptest! {
        #[test]
        fn quantiles_match_sort_and_index(values in proptest::collection::vec(0.0f64..1.0, 1..40)) {
            let s = FiveNumber::of(&values).unwrap();
            let mut v = values.clone();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = v.len();
            let pick = |p: f64| {
                let h = (n - 1) as f64 * p;
                let lo = h.floor() as usize;
                let hi = (lo + 1).min(n - 1);
                v[lo] * (1.0 - (h - lo as f64)) + v[hi] * (h - lo as f64)
            };
            prop_assert_eq!(s.min, v[0]);
            prop_assert_eq!(s.max, v[n - 1]);
            for (got, p) in [(s.q1, 0.25), (s.median, 0.5), (s.q3, 0.75)] {
                prop_assert!((got - pick(p)).abs() < 1e-12);
            }
            if n % 2 == 1 {
                prop_assert_eq!(s.median, v[n / 2]);
            }
            prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
        }
    }
}
