//! Segmentation scores, windowed SSIM, and the combined BCE + Jaccard loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{same_dims, BinaryMask, ScalarImage};

/// Predictions are clamped to `[EPS, 1 − EPS]` before taking logarithms.
pub const PREDICTION_CLAMP: f64 = 1e-7;
pub const DEFAULT_DELTA: f64 = 1e-5;

/// Flattened labels `p ∈ {0, 1}` and predictions `p̂ ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossInputs {
    p: Vec<f64>,
    p_hat: Vec<f64>,
    delta: f64,
}

impl LossInputs {
    pub fn new(p: Vec<f64>, p_hat: Vec<f64>) -> Result<Self> {
        LossInputs::with_delta(p, p_hat, DEFAULT_DELTA)
    }

    pub fn with_delta(p: Vec<f64>, p_hat: Vec<f64>, delta: f64) -> Result<Self> {
        if p.len() != p_hat.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels vs {} predictions",
                p.len(),
                p_hat.len()
            )));
        }
        if p.is_empty() {
            return Err(Error::Empty("loss inputs".into()));
        }
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument(format!("delta {delta} must be positive")));
        }
        if p.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        if p_hat.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("predictions must lie in [0, 1]".into()));
        }
        Ok(LossInputs { p, p_hat, delta })
    }

    pub fn from_images(labels: &BinaryMask, prediction: &ScalarImage) -> Result<Self> {
        same_dims(labels.dims(), prediction.dims())?;
        LossInputs::new(
            labels.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            prediction.data().iter().map(|&v| f64::from(v)).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Mean binary cross-entropy.
pub fn bce_loss(inp: &LossInputs) -> f64 {
    let total: f64 = inp
        .p
        .iter()
        .zip(&inp.p_hat)
        .map(|(&p, &q)| {
            let q = q.clamp(PREDICTION_CLAMP, 1.0 - PREDICTION_CLAMP);
            p * q.ln() + (1.0 - p) * (1.0 - q).ln()
        })
        .sum();
    -total / inp.len() as f64
}

/// Soft Jaccard loss `1 − (Σp·p̂ + δ) / (Σ(p + p̂) − Σp·p̂ + δ)`.
pub fn iou_loss(inp: &LossInputs) -> f64 {
    let (mut inter, mut total) = (0.0, 0.0);
    for (&p, &q) in inp.p.iter().zip(&inp.p_hat) {
        inter += p * q;
        total += p + q;
    }
    1.0 - (inter + inp.delta) / (total - inter + inp.delta)
}

pub fn combined_loss(inp: &LossInputs) -> f64 {
    bce_loss(inp) + iou_loss(inp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce: f64,
    pub iou: f64,
    pub combined: f64,
}

pub fn loss_breakdown(inp: &LossInputs) -> LossBreakdown {
    let (bce, iou) = (bce_loss(inp), iou_loss(inp));
    LossBreakdown {
        bce,
        iou,
        combined: bce + iou,
    }
}

fn overlap_counts(a: &BinaryMask, b: &BinaryMask) -> Result<(usize, usize, usize)> {
    same_dims(a.dims(), b.dims())?;
    let (mut inter, mut na, mut nb) = (0, 0, 0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += usize::from(x && y);
        na += usize::from(x);
        nb += usize::from(y);
    }
    Ok((inter, na, nb))
}

/// `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice_score(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, na, nb) = overlap_counts(a, b)?;
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// `|A∩B| / |A∪B|`; two empty masks score 1.
pub fn iou_score(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, na, nb) = overlap_counts(a, b)?;
    let union = na + nb - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Square uniform window SSIM settings; images are assumed to span `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub stride: usize,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            k1: 0.01,
            k2: 0.03,
            stride: 1,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "SSIM window {} must be odd and >= 3",
                self.window
            )));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0) || self.stride == 0 {
            return Err(Error::InvalidArgument("SSIM k1, k2 and stride must be positive".into()));
        }
        Ok(())
    }
}

/// Mean SSIM over every window lying entirely inside `joint_validity`.
///
/// Statistics use uniform weights and population (1/n) moments, with
/// `C1 = k1²` and `C2 = k2²` for a unit dynamic range. Windows partially
/// outside the validity mask are skipped; if none remain the call fails
/// with [`Error::InsufficientOverlap`].
pub fn ssim(a: &ScalarImage, b: &ScalarImage, joint_validity: &BinaryMask, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    same_dims(a.dims(), b.dims())?;
    same_dims(a.dims(), joint_validity.dims())?;
    let (w, h) = a.dims();
    let win = params.window;
    if win > w || win > h {
        return Err(Error::InsufficientOverlap { fraction: 0.0 });
    }
    let c1 = params.k1 * params.k1;
    let c2 = params.k2 * params.k2;
    let n = (win * win) as f64;
    let (ad, bd, md) = (a.data(), b.data(), joint_validity.data());

    // column sums over the current band of `win` rows: a, b, a², b², ab, valid
    let mut cols = vec![[0.0f64; 6]; w];
    let mut total = 0.0;
    let mut windows = 0usize;
    for y in (0..=h - win).step_by(params.stride) {
        for (x, col) in cols.iter_mut().enumerate() {
            let mut s = [0.0; 6];
            for yy in y..y + win {
                let i = yy * w + x;
                let (u, v) = (f64::from(ad[i]), f64::from(bd[i]));
                s[0] += u;
                s[1] += v;
                s[2] += u * u;
                s[3] += v * v;
                s[4] += u * v;
                s[5] += f64::from(u8::from(md[i]));
            }
            *col = s;
        }
        for x in (0..=w - win).step_by(params.stride) {
            let mut s = [0.0; 6];
            for col in &cols[x..x + win] {
                for k in 0..6 {
                    s[k] += col[k];
                }
            }
            if s[5] != n {
                continue;
            }
            let (ma, mb) = (s[0] / n, s[1] / n);
            let va = s[2] / n - ma * ma;
            let vb = s[3] / n - mb * mb;
            let cov = s[4] / n - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            windows += 1;
        }
    }
    if windows == 0 {
        return Err(Error::InsufficientOverlap { fraction: 0.0 });
    }
    Ok(total / windows as f64)
}
