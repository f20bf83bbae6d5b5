//! Synthetic vessel-like sequences with exact ground-truth motion.
//!
//! A large latent scene (textured background plus branching vessels) is
//! viewed through a moving, rotating and zooming circular field of view.
//! Frame `k` is the scene seen through the pose `F_k` (frame → scene
//! coordinates); the ground truth between consecutive frames is
//! `gt_pairwise[k] = F_k⁻¹ ∘ F_{k+1}`, mapping frame `k+1` coordinates into
//! frame `k` coordinates. A camera moving `+d` along x in the scene
//! therefore yields `translate(+d, 0)`.
//!
//! Intensity frames get additive Gaussian noise and, optionally, drifting
//! dark occluders. Probability maps are the noise-free vessel layer through
//! the same poses and never show occluders.
//!
//! All randomness comes from [`rng::CounterRng`]; outputs are a pure
//! function of the configuration.

pub mod rng;
mod scene;

use serde::{Deserialize, Serialize};

pub use scene::SceneLayers;

use crate::error::{Error, Result};
use crate::imagecore::{BinaryMask, ScalarImage};
use crate::warp::{default_visibility, AffineTransform};
use rng::{stream, CounterRng};

/// Smooth camera motion.
///
/// With `period > 0` every component oscillates: the x offset is
/// `tx·A·sin(ωk)`, y is `−ty·A·cos(ωk)`, the rotation angle is
/// `rotation_deg·A·sin(ωk)` and the log-scale is `scale_rate·A·sin(ωk)`,
/// with `ω = 2π/period` and `A = period/2π`, so the quantities below are
/// peak per-frame rates. With `period = 0` motion is uniform (`k` replaces
/// `A·sin(ωk)` everywhere, including y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Trajectory {
    /// Peak translation, px/frame, in scene coordinates.
    pub translation: [f64; 2],
    /// Peak rotation, degrees/frame.
    pub rotation_deg: f64,
    /// Peak change of log-scale per frame.
    pub scale_rate: f64,
    /// Oscillation period in frames; 0 for constant velocity.
    pub period: f64,
}

impl Default for Trajectory {
    fn default() -> Self {
        Trajectory {
            translation: [3.0, 2.0],
            rotation_deg: 0.3,
            scale_rate: 0.002,
            period: 100.0,
        }
    }
}

impl Trajectory {
    pub fn still() -> Self {
        Trajectory {
            translation: [0.0, 0.0],
            rotation_deg: 0.0,
            scale_rate: 0.0,
            period: 0.0,
        }
    }

    /// `(dx, dy, angle_rad, log_scale)` of frame `k` relative to the scene centre.
    fn offsets(&self, k: usize) -> (f64, f64, f64, f64) {
        let k = k as f64;
        let (phase, y_phase) = if self.period > 0.0 {
            let w = std::f64::consts::TAU / self.period;
            let a = self.period / std::f64::consts::TAU;
            (a * (w * k).sin(), -a * (w * k).cos())
        } else {
            (k, k)
        };
        (
            self.translation[0] * phase,
            self.translation[1] * y_phase,
            self.rotation_deg.to_radians() * phase,
            self.scale_rate * phase,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Side of the square latent scene, px.
    pub canvas: usize,
    /// Side of the square frames, px.
    pub frame: usize,
    pub n_frames: usize,
    pub n_vessels: usize,
    /// Vessel full width at half maximum, px.
    pub vessel_width_range: [f64; 2],
    pub trajectory: Trajectory,
    pub noise_sigma: f64,
    /// Probability per frame that a new occluder appears.
    pub occluder_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            canvas: 1024,
            frame: 448,
            n_frames: 100,
            n_vessels: 10,
            vessel_width_range: [6.0, 18.0],
            trajectory: Trajectory::default(),
            noise_sigma: 0.01,
            occluder_rate: 0.0,
        }
    }
}

/// Minimum visible-area overlap required between consecutive frames.
pub const MIN_CONSECUTIVE_OVERLAP: f64 = 0.5;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.frame < 8 || self.frame > self.canvas {
            return bad(format!(
                "frame {} must be within [8, canvas {}]",
                self.frame, self.canvas
            ));
        }
        if self.n_frames == 0 {
            return bad("n_frames must be positive".into());
        }
        let [lo, hi] = self.vessel_width_range;
        if !(lo > 0.0 && hi >= lo) {
            return bad(format!("vessel_width_range {lo}..{hi}"));
        }
        if !(self.noise_sigma >= 0.0) || !(0.0..=1.0).contains(&self.occluder_rate) {
            return bad("noise_sigma must be >= 0 and occluder_rate in [0, 1]".into());
        }
        if !(self.trajectory.period >= 0.0) {
            return bad("trajectory period must be >= 0".into());
        }
        let limit = (self.canvas - 1) as f64;
        let radius = self.visibility_radius();
        let mut prev: Option<(AffineTransform, f64, f64)> = None;
        for k in 0..self.n_frames {
            let pose = self.pose(k)?;
            for (x, y) in crate::warp::frame_corners(self.frame, self.frame) {
                let (sx, sy) = pose.apply(x, y);
                if !(0.0..=limit).contains(&sx) || !(0.0..=limit).contains(&sy) {
                    return bad(format!("frame {k} leaves the {}px scene", self.canvas));
                }
            }
            let c = (self.frame as f64 - 1.0) / 2.0;
            let (cx, cy) = pose.apply(c, c);
            if let Some((prev_pose, px, py)) = prev {
                let r = radius * prev_pose.det().abs().sqrt();
                let overlap = circle_overlap((cx - px).hypot(cy - py), r);
                if overlap < MIN_CONSECUTIVE_OVERLAP {
                    return bad(format!(
                        "frames {} and {k} overlap by {:.2} (< {MIN_CONSECUTIVE_OVERLAP})",
                        k - 1,
                        overlap
                    ));
                }
            }
            prev = Some((pose, cx, cy));
        }
        Ok(())
    }

    fn visibility_radius(&self) -> f64 {
        0.98 * self.frame as f64 / 2.0
    }

    /// `F_k`: frame-`k` pixel coordinates → scene coordinates.
    pub fn pose(&self, k: usize) -> Result<AffineTransform> {
        let (dx, dy, angle, log_scale) = self.trajectory.offsets(k);
        let scale = log_scale.exp();
        let (s, c) = angle.sin_cos();
        let (a11, a12, a21, a22) = (scale * c, -scale * s, scale * s, scale * c);
        let p0 = (self.frame as f64 - 1.0) / 2.0;
        let centre = (self.canvas as f64 - 1.0) / 2.0;
        AffineTransform::new(
            a11,
            a12,
            a21,
            a22,
            centre + dx - a11 * p0 - a12 * p0,
            centre + dy - a21 * p0 - a22 * p0,
        )
    }
}

/// Fraction of one disc of radius `r` covered by an equal disc at distance `d`.
fn circle_overlap(d: f64, r: f64) -> f64 {
    if d >= 2.0 * r {
        return 0.0;
    }
    let lens = 2.0 * r * r * (d / (2.0 * r)).acos() - 0.5 * d * (4.0 * r * r - d * d).sqrt();
    lens / (std::f64::consts::PI * r * r)
}

/// Builds the latent scene layers for `cfg`.
pub fn generate_layers(cfg: &SynthConfig) -> SceneLayers {
    scene::build_layers(cfg.seed, cfg.canvas, cfg.n_vessels, cfg.vessel_width_range)
}

/// The latent intensity scene: bright vessels over a darker texture
/// (background stays below 0.5).
pub fn generate_scene(cfg: &SynthConfig) -> Result<ScalarImage> {
    if cfg.canvas == 0 || !(cfg.vessel_width_range[0] > 0.0) {
        return Err(Error::Config("canvas and vessel widths must be positive".into()));
    }
    let layers = generate_layers(cfg);
    ScalarImage::from_f64_clamped(cfg.canvas, cfg.canvas, &layers.intensity)
}

#[derive(Debug, Clone)]
pub struct SynthSequence {
    pub frames: Vec<ScalarImage>,
    pub prob_maps: Vec<ScalarImage>,
    /// `gt_pairwise[k]` maps frame `k+1` coordinates into frame `k`.
    pub gt_pairwise: Vec<AffineTransform>,
    pub visibility: BinaryMask,
    /// `F_k`, frame → scene coordinates.
    pub poses: Vec<AffineTransform>,
}

#[derive(Debug, Clone)]
struct Occluder {
    birth: usize,
    death: usize,
    centre: (f64, f64),
    velocity: (f64, f64),
    radius: f64,
    level: f64,
}

const OCCLUDER_EDGE: f64 = 6.0;

fn occluder_tracks(cfg: &SynthConfig) -> Vec<Occluder> {
    if cfg.occluder_rate == 0.0 {
        return Vec::new();
    }
    let mut rng = CounterRng::new(cfg.seed, stream::OCCLUDER);
    let c = (cfg.frame as f64 - 1.0) / 2.0;
    let spread = 0.7 * cfg.visibility_radius();
    let mut tracks = Vec::new();
    for k in 0..cfg.n_frames {
        if rng.next_f64() >= cfg.occluder_rate {
            continue;
        }
        let r = spread * rng.next_f64().sqrt();
        let a = rng.uniform(0.0, std::f64::consts::TAU);
        let life = rng.range_inclusive(2, 6) as usize;
        tracks.push(Occluder {
            birth: k,
            death: k + life,
            centre: (c + r * a.cos(), c + r * a.sin()),
            velocity: (rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)),
            radius: rng.uniform(0.07, 0.18) * cfg.frame as f64,
            level: rng.uniform(0.0, 0.15),
        });
    }
    tracks
}

fn sample_layer(layer: &[f64], size: usize, x: f64, y: f64) -> f64 {
    let last = (size - 1) as f64;
    let (x, y) = (x.clamp(0.0, last), y.clamp(0.0, last));
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(size - 1), (y0 + 1).min(size - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |i: usize, j: usize| layer[j * size + i];
    let top = at(x0, y0) + fx * (at(x1, y0) - at(x0, y0));
    let bottom = at(x0, y1) + fx * (at(x1, y1) - at(x0, y1));
    top + fy * (bottom - top)
}

/// Renders intensity frame and probability map `index` at `pose`.
fn render(
    cfg: &SynthConfig,
    layers: &SceneLayers,
    visibility: &BinaryMask,
    pose: &AffineTransform,
    index: usize,
    occluders: &[Occluder],
) -> Result<(ScalarImage, ScalarImage)> {
    let n = cfg.frame;
    let mut noise = CounterRng::new(cfg.seed, stream::NOISE | index as u64);
    let active: Vec<((f64, f64), &Occluder)> = occluders
        .iter()
        .filter(|o| o.birth <= index && index < o.death)
        .map(|o| {
            let t = (index - o.birth) as f64;
            ((o.centre.0 + t * o.velocity.0, o.centre.1 + t * o.velocity.1), o)
        })
        .collect();
    let mut frame = vec![0.0; n * n];
    let mut prob = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let i = y * n + x;
            // noise is drawn for every pixel so the stream layout is fixed
            let eps = noise.normal() * cfg.noise_sigma;
            if !visibility.get(x, y) {
                continue;
            }
            let (sx, sy) = pose.apply(x as f64, y as f64);
            let mut v = sample_layer(&layers.intensity, layers.size, sx, sy);
            for &((ox, oy), o) in &active {
                let d = (x as f64 - ox).hypot(y as f64 - oy);
                let alpha = ((o.radius - d) / OCCLUDER_EDGE + 0.5).clamp(0.0, 1.0);
                v += alpha * (o.level - v);
            }
            frame[i] = v + eps;
            prob[i] = sample_layer(&layers.vessels, layers.size, sx, sy);
        }
    }
    Ok((
        ScalarImage::from_f64_clamped(n, n, &frame)?,
        ScalarImage::from_f64_clamped(n, n, &prob)?,
    ))
}

pub fn generate_sequence(cfg: &SynthConfig) -> Result<SynthSequence> {
    cfg.validate()?;
    let layers = generate_layers(cfg);
    let visibility = default_visibility(cfg.frame, cfg.frame)?;
    let occluders = occluder_tracks(cfg);
    let poses = (0..cfg.n_frames).map(|k| cfg.pose(k)).collect::<Result<Vec<_>>>()?;
    let mut frames = Vec::with_capacity(cfg.n_frames);
    let mut prob_maps = Vec::with_capacity(cfg.n_frames);
    for (k, pose) in poses.iter().enumerate() {
        let (f, p) = render(cfg, &layers, &visibility, pose, k, &occluders)?;
        frames.push(f);
        prob_maps.push(p);
    }
    let gt_pairwise = poses
        .windows(2)
        .map(|w| w[0].invert().compose(&w[1]))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthSequence {
        frames,
        prob_maps,
        gt_pairwise,
        visibility,
        poses,
    })
}

/// A fixed/moving pair related by `gt` (moving → fixed), both viewed from
/// the scene centre. Occluders are not applied.
#[derive(Debug, Clone)]
pub struct SynthPair {
    pub fixed: ScalarImage,
    pub moving: ScalarImage,
    pub fixed_prob: ScalarImage,
    pub moving_prob: ScalarImage,
    pub visibility: BinaryMask,
}

pub fn generate_pair(cfg: &SynthConfig, layers: &SceneLayers, gt: &AffineTransform) -> Result<SynthPair> {
    if layers.size != cfg.canvas {
        return Err(Error::Config("scene layers do not match the configured canvas".into()));
    }
    let visibility = default_visibility(cfg.frame, cfg.frame)?;
    let fixed_pose = cfg.pose(0)?;
    let moving_pose = fixed_pose.compose(gt)?;
    let (fixed, fixed_prob) = render(cfg, layers, &visibility, &fixed_pose, 0, &[])?;
    let (moving, moving_prob) = render(cfg, layers, &visibility, &moving_pose, 1, &[])?;
    Ok(SynthPair {
        fixed,
        moving,
        fixed_prob,
        moving_prob,
        visibility,
    })
}

/// Random similarity about the frame centre: translation up to
/// `max_translation` px in each axis, rotation up to `max_rotation_deg`,
/// scale within `scale_range`.
pub fn random_pair_transform(
    seed: u64,
    frame: usize,
    max_translation: f64,
    max_rotation_deg: f64,
    scale_range: [f64; 2],
) -> Result<AffineTransform> {
    let mut rng = CounterRng::new(seed, stream::PAIR);
    let c = (frame as f64 - 1.0) / 2.0;
    let tx = rng.uniform(-max_translation, max_translation);
    let ty = rng.uniform(-max_translation, max_translation);
    let angle = rng.uniform(-max_rotation_deg, max_rotation_deg).to_radians();
    let scale = rng.uniform(scale_range[0], scale_range[1]);
    AffineTransform::similarity_about(c, c, angle, scale, tx, ty)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n_frames: usize) -> SynthConfig {
        SynthConfig {
            canvas: 256,
            frame: 96,
            n_frames,
            n_vessels: 4,
            vessel_width_range: [5.0, 9.0],
            trajectory: Trajectory {
                translation: [1.5, 1.0],
                rotation_deg: 0.5,
                scale_rate: 0.003,
                period: 40.0,
            },
            ..SynthConfig::default()
        }
    }

    #[test]
    fn scene_is_deterministic() {
        let cfg = small(1);
        let a = generate_scene(&cfg).unwrap();
        let b = generate_scene(&cfg).unwrap();
        assert_eq!(a, b);
        let other = generate_scene(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn no_vessels_means_background_only() {
        let cfg = SynthConfig {
            n_vessels: 0,
            ..small(1)
        };
        let layers = generate_layers(&cfg);
        assert!(layers.vessels.iter().all(|&v| v == 0.0));
        let scene = generate_scene(&cfg).unwrap();
        assert!(scene.data().iter().all(|&v| v < 0.5));
    }

    #[test]
    fn bright_fraction_grows_with_vessels() {
        let mut last = 0.0;
        for n in [0, 1, 2, 4, 8] {
            let cfg = SynthConfig {
                n_vessels: n,
                ..small(1)
            };
            let scene = generate_scene(&cfg).unwrap();
            let frac = scene.data().iter().filter(|&&v| v > 0.5).count() as f64 / scene.len() as f64;
            assert!(frac >= last, "n={n}: {frac} < {last}");
            last = frac;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn still_camera_gives_identity() {
        let cfg = SynthConfig {
            trajectory: Trajectory::still(),
            noise_sigma: 0.0,
            ..small(4)
        };
        let seq = generate_sequence(&cfg).unwrap();
        assert!(seq
            .gt_pairwise
            .iter()
            .all(|t| t.max_abs_diff(&AffineTransform::IDENTITY) < 1e-12));
        assert!(seq.frames.windows(2).all(|w| w[0] == w[1]));
        let noisy = generate_sequence(&SynthConfig {
            noise_sigma: 0.01,
            ..cfg
        })
        .unwrap();
        assert_ne!(noisy.frames[0], noisy.frames[1]);
        assert_eq!(noisy.prob_maps[0], noisy.prob_maps[1]);
    }

    #[test]
    fn pure_translation_direction() {
        let cfg = SynthConfig {
            trajectory: Trajectory {
                translation: [2.0, 0.0],
                ..Trajectory::still()
            },
            ..small(5)
        };
        let seq = generate_sequence(&cfg).unwrap();
        for t in &seq.gt_pairwise {
            assert!(t.max_abs_diff(&AffineTransform::translation(2.0, 0.0)) < 1e-9, "{t:?}");
        }
    }

    #[test]
    fn pairwise_composition_matches_end_to_end() {
        let cfg = small(30);
        let seq = generate_sequence(&cfg).unwrap();
        let mut acc = AffineTransform::IDENTITY;
        for t in &seq.gt_pairwise {
            acc = acc.compose(t).unwrap();
        }
        let direct = seq.poses[0].invert().compose(&seq.poses[29]).unwrap();
        assert!(acc.max_abs_diff(&direct) < 1e-12, "{}", acc.max_abs_diff(&direct));
    }

    #[test]
    fn occluders_touch_frames_not_maps() {
        let base = SynthConfig {
            noise_sigma: 0.0,
            ..small(8)
        };
        let clean = generate_sequence(&base).unwrap();
        let occluded = generate_sequence(&SynthConfig {
            occluder_rate: 1.0,
            ..base
        })
        .unwrap();
        assert_eq!(clean.prob_maps, occluded.prob_maps);
        assert!(clean.frames.iter().zip(&occluded.frames).any(|(a, b)| a != b));
    }

    #[test]
    fn invalid_trajectories_rejected() {
        let cfg = SynthConfig {
            trajectory: Trajectory {
                translation: [80.0, 0.0],
                ..Trajectory::still()
            },
            ..small(3)
        };
        assert!(generate_sequence(&cfg).is_err());
        let leaves = SynthConfig {
            trajectory: Trajectory {
                translation: [5.0, 0.0],
                ..Trajectory::still()
            },
            ..small(60)
        };
        assert!(leaves.validate().is_err());
    }

    #[test]
    fn overlap_formula() {
        assert!((circle_overlap(0.0, 10.0) - 1.0).abs() < 1e-12);
        assert_eq!(circle_overlap(20.0, 10.0), 0.0);
        // d = r: lens area r²(2π/3 − √3/2)
        let want = (2.0 * std::f64::consts::PI / 3.0 - 3f64.sqrt() / 2.0) / std::f64::consts::PI;
        assert!((circle_overlap(10.0, 10.0) - want).abs() < 1e-12);
    }
}
