//! Bidirectional robust photometric cost with its analytic Jacobian.
//!
//! For a transform `T` mapping moving coordinates into fixed coordinates:
//!
//! * forward residuals live on the fixed grid: `e = F(x) − M(T⁻¹x)`;
//! * backward residuals live on the moving grid: `e = M(y) − F(Ty)`.
//!
//! Each error is passed through the Huber penalty `ρ(e) = e²` for
//! `|e| ≤ k`, `2k|e| − k²` beyond, and reported as the signed square root
//! `r = sign(e)·√ρ(e)`, so that `Σ r² = Σ ρ` and the problem keeps its
//! least-squares form. The Jacobian is the exact derivative of `r` with
//! respect to `(a11, a12, a21, a22, tx, ty)`, using the derivative of the
//! bilinear interpolant for image gradients.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imagecore::{same_dims, BinaryMask, ScalarImage};
use crate::warp::{AffineTransform, Sampler};

/// Below this fraction of usable residuals a cost evaluation fails.
pub const MIN_VALID_FRACTION: f64 = 0.05;

const ROWS_PER_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Fixed grid, moving image warped into it.
    Forward,
    /// Moving grid, fixed image warped into it.
    Backward,
}

/// Full cost evaluation, one entry per valid residual.
#[derive(Debug, Clone)]
pub struct CostEvaluation {
    pub cost: f64,
    pub residuals: Vec<f64>,
    pub jacobian: Vec<[f64; 6]>,
    /// Grid and row-major pixel index of each residual.
    pub sites: Vec<(Direction, usize)>,
    pub valid_fraction: f64,
}

/// Huber penalty with the `e²` normalisation.
#[inline]
pub fn huber(e: f64, k: f64) -> f64 {
    let a = e.abs();
    if a <= k {
        e * e
    } else {
        2.0 * k * a - k * k
    }
}

/// `(r, dr/de)` for the signed square-root Huber residual.
#[inline]
fn robust(e: f64, k: f64) -> (f64, f64) {
    let a = e.abs();
    if a <= k {
        (e, 1.0)
    } else {
        let root = (2.0 * k * a - k * k).sqrt();
        (e.signum() * root, k / root)
    }
}

pub(crate) struct CostProblem<'a> {
    fixed: &'a ScalarImage,
    fixed_mask: &'a BinaryMask,
    moving: &'a ScalarImage,
    moving_mask: &'a BinaryMask,
    threshold: f64,
    bidirectional: bool,
    candidates: usize,
}

impl<'a> CostProblem<'a> {
    pub(crate) fn new(
        fixed: (&'a ScalarImage, &'a BinaryMask),
        moving: (&'a ScalarImage, &'a BinaryMask),
        threshold: f64,
        bidirectional: bool,
    ) -> Result<Self> {
        same_dims(fixed.0.dims(), fixed.1.dims())?;
        same_dims(moving.0.dims(), moving.1.dims())?;
        same_dims(fixed.0.dims(), moving.0.dims())?;
        if !(threshold > 0.0) {
            return Err(Error::InvalidArgument(format!("robust threshold {threshold}")));
        }
        let candidates = fixed.1.count() + if bidirectional { moving.1.count() } else { 0 };
        Ok(CostProblem {
            fixed: fixed.0,
            fixed_mask: fixed.1,
            moving: moving.0,
            moving_mask: moving.1,
            threshold,
            bidirectional,
            candidates,
        })
    }

    fn directions(&self) -> &'static [Direction] {
        if self.bidirectional {
            &[Direction::Forward, Direction::Backward]
        } else {
            &[Direction::Forward]
        }
    }

    /// Calls `f(pixel_index, r, dr/dθ)` for each valid residual of one row.
    #[inline]
    fn row<F: FnMut(usize, f64, [f64; 6])>(
        &self,
        dir: Direction,
        t: &AffineTransform,
        t_inv: &AffineTransform,
        y: usize,
        mut f: F,
    ) {
        let width = self.fixed.width();
        let k = self.threshold;
        match dir {
            Direction::Forward => {
                let sampler = Sampler::new(self.moving, Some(self.moving_mask));
                let own = self.fixed_mask.data();
                let vals = self.fixed.data();
                // rows of A⁻¹, used to push moving-image gradients back
                let [[b11, b12], [b21, b22]] = t_inv.linear();
                for x in 0..width {
                    let i = y * width + x;
                    if !own[i] {
                        continue;
                    }
                    let (ux, uy) = t_inv.apply(x as f64, y as f64);
                    let Some((m, gx, gy)) = sampler.sample_with_gradient(ux, uy) else {
                        continue;
                    };
                    let e = f64::from(vals[i]) - m;
                    let (r, dr) = robust(e, k);
                    // de/dθ = ∇Mᵀ A⁻¹ ∂T(u)/∂θ
                    let px = dr * (gx * b11 + gy * b21);
                    let py = dr * (gx * b12 + gy * b22);
                    f(i, r, [px * ux, px * uy, py * ux, py * uy, px, py]);
                }
            }
            Direction::Backward => {
                let sampler = Sampler::new(self.fixed, Some(self.fixed_mask));
                let own = self.moving_mask.data();
                let vals = self.moving.data();
                for x in 0..width {
                    let i = y * width + x;
                    if !own[i] {
                        continue;
                    }
                    let (xf, yf) = (x as f64, y as f64);
                    let (vx, vy) = t.apply(xf, yf);
                    let Some((fv, gx, gy)) = sampler.sample_with_gradient(vx, vy) else {
                        continue;
                    };
                    let e = f64::from(vals[i]) - fv;
                    let (r, dr) = robust(e, k);
                    let (px, py) = (-dr * gx, -dr * gy);
                    f(i, r, [px * xf, px * yf, py * xf, py * yf, px, py]);
                }
            }
        }
    }

    fn fraction(&self, n_valid: usize) -> f64 {
        if self.candidates == 0 {
            0.0
        } else {
            n_valid as f64 / self.candidates as f64
        }
    }

    pub(crate) fn evaluate_full(&self, t: &AffineTransform) -> Result<CostEvaluation> {
        let t_inv = t.invert();
        let mut residuals = Vec::new();
        let mut jacobian = Vec::new();
        let mut sites = Vec::new();
        for &dir in self.directions() {
            for y in 0..self.fixed.height() {
                self.row(dir, t, &t_inv, y, |i, r, j| {
                    residuals.push(r);
                    jacobian.push(j);
                    sites.push((dir, i));
                });
            }
        }
        let valid_fraction = self.fraction(residuals.len());
        if valid_fraction < MIN_VALID_FRACTION {
            return Err(Error::InsufficientOverlap {
                fraction: valid_fraction,
            });
        }
        let cost = residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64;
        Ok(CostEvaluation {
            cost,
            residuals,
            jacobian,
            sites,
            valid_fraction,
        })
    }

    /// Accumulates `JᵀJ`, `Jᵀr` and `Σr²` without materialising `J`.
    /// Rows are reduced in fixed-size chunks and summed in chunk order, so
    /// the result does not depend on the thread count.
    pub(crate) fn normal_equations(&self, t: &AffineTransform) -> Result<NormalEquations> {
        let t_inv = t.invert();
        let h = self.fixed.height();
        let mut total = NormalEquations::default();
        for &dir in self.directions() {
            let chunks: Vec<NormalEquations> = (0..h.div_ceil(ROWS_PER_CHUNK))
                .into_par_iter()
                .map(|c| {
                    let mut acc = NormalEquations::default();
                    for y in c * ROWS_PER_CHUNK..((c + 1) * ROWS_PER_CHUNK).min(h) {
                        self.row(dir, t, &t_inv, y, |_, r, j| acc.add(r, &j));
                    }
                    acc
                })
                .collect();
            for c in &chunks {
                total.merge(c);
            }
        }
        let valid_fraction = self.fraction(total.count);
        if valid_fraction < MIN_VALID_FRACTION {
            return Err(Error::InsufficientOverlap {
                fraction: valid_fraction,
            });
        }
        total.valid_fraction = valid_fraction;
        Ok(total)
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct NormalEquations {
    /// Upper triangle of `JᵀJ`, row-major.
    pub jtj: [f64; 21],
    pub jtr: [f64; 6],
    pub sum_sq: f64,
    pub count: usize,
    pub valid_fraction: f64,
}

impl NormalEquations {
    #[inline]
    fn add(&mut self, r: f64, j: &[f64; 6]) {
        let mut k = 0;
        for a in 0..6 {
            self.jtr[a] += j[a] * r;
            for b in a..6 {
                self.jtj[k] += j[a] * j[b];
                k += 1;
            }
        }
        self.sum_sq += r * r;
        self.count += 1;
    }

    fn merge(&mut self, other: &NormalEquations) {
        self.jtj.iter_mut().zip(&other.jtj).for_each(|(a, b)| *a += b);
        self.jtr.iter_mut().zip(&other.jtr).for_each(|(a, b)| *a += b);
        self.sum_sq += other.sum_sq;
        self.count += other.count;
    }

    pub fn cost(&self) -> f64 {
        self.sum_sq / self.count as f64
    }

    #[allow(clippy::needless_range_loop)]
    pub fn hessian(&self) -> [[f64; 6]; 6] {
        let mut m = [[0.0; 6]; 6];
        let mut k = 0;
        for a in 0..6 {
            for b in a..6 {
                m[a][b] = self.jtj[k];
                m[b][a] = self.jtj[k];
                k += 1;
            }
        }
        m
    }
}

/// Robust photometric cost between `fixed` and `moving` under `t`
/// (moving → fixed), with residuals and their analytic Jacobian.
///
/// `cost = Σ ρ(e) / N` over the `N` residuals valid in both masks.
/// Fails with [`Error::InsufficientOverlap`] when fewer than 5% of the
/// candidate pixels yield a residual.
pub fn photometric_cost(
    fixed: (&ScalarImage, &BinaryMask),
    moving: (&ScalarImage, &BinaryMask),
    t: &AffineTransform,
    robust_threshold: f64,
    bidirectional: bool,
) -> Result<CostEvaluation> {
    CostProblem::new(fixed, moving, robust_threshold, bidirectional)?.evaluate_full(t)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn full(w: usize, h: usize) -> BinaryMask {
        BinaryMask::filled(w, h, true).unwrap()
    }

    #[test]
    fn identical_images_cost_zero() {
        let img = ScalarImage::from_fn(30, 20, |x, y| ((x * 3 + y * 7) % 10) as f64 / 10.0).unwrap();
        let m = full(30, 20);
        let ev = photometric_cost((&img, &m), (&img, &m), &AffineTransform::IDENTITY, 0.1, true).unwrap();
        assert_eq!(ev.cost, 0.0);
        assert!(ev.residuals.iter().all(|&r| r == 0.0));
        assert_eq!(ev.valid_fraction, 1.0);
    }

    #[test]
    fn constant_images_closed_form() {
        let a = ScalarImage::constant(16, 16, 0.30).unwrap();
        let b = ScalarImage::constant(16, 16, 0.35).unwrap();
        let m = full(16, 16);
        let ev = photometric_cost((&a, &m), (&b, &m), &AffineTransform::IDENTITY, 0.1, true).unwrap();
        let d = 0.30f32 as f64 - 0.35f32 as f64;
        assert!((ev.cost - d * d).abs() < 1e-15);
        assert!(ev.jacobian.iter().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn huber_beyond_threshold() {
        let a = ScalarImage::constant(8, 8, 0.0).unwrap();
        let b = ScalarImage::constant(8, 8, 0.5).unwrap();
        let m = full(8, 8);
        let ev = photometric_cost((&a, &m), (&b, &m), &AffineTransform::IDENTITY, 0.1, false).unwrap();
        assert!((ev.cost - huber(0.5, 0.1)).abs() < 1e-12);
        assert!((huber(0.5, 0.1) - 0.09).abs() < 1e-15);
    }

    #[test]
    fn no_overlap_is_an_error() {
        let img = ScalarImage::constant(40, 40, 0.2).unwrap();
        let m = full(40, 40);
        let far = AffineTransform::translation(500.0, 0.0);
        assert!(matches!(
            photometric_cost((&img, &m), (&img, &m), &far, 0.1, true),
            Err(Error::InsufficientOverlap { .. })
        ));
    }

    #[test]
    fn normal_equations_match_full_evaluation() {
        let f = ScalarImage::from_fn(50, 40, |x, y| {
            0.5 + 0.4 * ((x as f64 * 0.3).sin() * (y as f64 * 0.2).cos())
        })
        .unwrap();
        let g = ScalarImage::from_fn(50, 40, |x, y| {
            0.5 + 0.4 * ((x as f64 * 0.31 + 0.2).sin() * (y as f64 * 0.21).cos())
        })
        .unwrap();
        let m = full(50, 40);
        let t = AffineTransform::new(1.01, 0.02, -0.01, 0.99, 0.7, -0.4).unwrap();
        let p = CostProblem::new((&f, &m), (&g, &m), 0.1, true).unwrap();
        let ev = p.evaluate_full(&t).unwrap();
        let ne = p.normal_equations(&t).unwrap();
        assert_eq!(ne.count, ev.residuals.len());
        assert!((ne.cost() - ev.cost).abs() < 1e-12);
        let h = ne.hessian();
        for a in 0..6 {
            let g: f64 = ev.jacobian.iter().zip(&ev.residuals).map(|(j, r)| j[a] * r).sum();
            assert!((g - ne.jtr[a]).abs() <= 1e-9 * (1.0 + g.abs()));
            for b in 0..6 {
                let v: f64 = ev.jacobian.iter().map(|j| j[a] * j[b]).sum();
                assert!((v - h[a][b]).abs() <= 1e-9 * (1.0 + v.abs()));
            }
        }
    }

    /// Smooth random image in [0.1, 0.9] built from three plane waves.
    pub(crate) fn smooth_random_image(seed: u64, w: usize, h: usize) -> ScalarImage {
        let mut rng = crate::synth::rng::CounterRng::new(seed, 77);
        let waves: Vec<[f64; 4]> = (0..3)
            .map(|_| {
                [
                    rng.uniform(-0.35, 0.35),
                    rng.uniform(-0.35, 0.35),
                    rng.uniform(0.0, std::f64::consts::TAU),
                    rng.uniform(0.05, 0.13),
                ]
            })
            .collect();
        ScalarImage::from_fn(w, h, |x, y| {
            0.5 + waves
                .iter()
                .map(|[kx, ky, ph, a]| a * (kx * x as f64 + ky * y as f64 + ph).sin())
                .sum::<f64>()
        })
        .unwrap()
    }

    /// Where residual `site` samples the other image under `t`.
    fn sample_point(site: (Direction, usize), t: &AffineTransform, w: usize) -> (f64, f64) {
        let (x, y) = ((site.1 % w) as f64, (site.1 / w) as f64);
        match site.0 {
            Direction::Forward => t.invert().apply(x, y),
            Direction::Backward => t.apply(x, y),
        }
    }

    /// Largest relative gap between analytic and central-difference
    /// Jacobian entries, over residuals whose bilinear cell and validity
    /// are unchanged across the ±h probes. Returns (max error, rows used).
    pub(crate) fn finite_difference_gap(seed: u64) -> (f64, usize) {
        let (w, h) = (64, 64);
        let fixed = smooth_random_image(seed, w, h);
        let moving = smooth_random_image(seed + 1000, w, h);
        let mask = crate::warp::circular_mask(w, h, 31.5, 31.5, 30.0).unwrap();
        let mut rng = crate::synth::rng::CounterRng::new(seed, 78);
        let t = AffineTransform::similarity_about(
            31.5,
            31.5,
            rng.uniform(-0.1, 0.1),
            rng.uniform(0.95, 1.05),
            rng.uniform(-3.0, 3.0),
            rng.uniform(-3.0, 3.0),
        )
        .unwrap();
        let threshold = 0.05;
        let base = photometric_cost((&fixed, &mask), (&moving, &mask), &t, threshold, true).unwrap();
        let step = 1e-5;
        let mut worst: f64 = 0.0;
        let mut used = std::collections::HashSet::new();
        for k in 0..6 {
            let probe = |sgn: f64| {
                let mut p = t.params();
                p[k] += sgn * step;
                let tp = AffineTransform::from_params(&p).unwrap();
                let ev = photometric_cost((&fixed, &mask), (&moving, &mask), &tp, threshold, true).unwrap();
                let map: std::collections::HashMap<_, _> =
                    ev.sites.iter().copied().zip(ev.residuals.iter().copied()).collect();
                (tp, map)
            };
            let (tp, plus) = probe(1.0);
            let (tm, minus) = probe(-1.0);
            for (n, &site) in base.sites.iter().enumerate() {
                let (Some(rp), Some(rm)) = (plus.get(&site), minus.get(&site)) else {
                    continue;
                };
                let cell = |t: &AffineTransform| {
                    let (u, v) = sample_point(site, t, w);
                    (u.floor() as i64, v.floor() as i64)
                };
                if cell(&tp) != cell(&t) || cell(&tm) != cell(&t) {
                    continue;
                }
                let fd = (rp - rm) / (2.0 * step);
                let an = base.jacobian[n][k];
                worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-6));
                used.insert(n);
            }
        }
        (worst, used.len())
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for seed in 0..4 {
            let (gap, rows) = finite_difference_gap(seed);
            assert!(rows > 4000, "only {rows} rows compared");
            assert!(gap < 1e-4, "seed {seed}: relative gap {gap:e}");
        }
    }
}
