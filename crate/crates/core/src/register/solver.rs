use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use super::cost::CostProblem;
use super::options::RegistrationOptions;
use super::pyramid::{build_pyramid, presmooth};
use crate::error::{Error, Result};
use crate::imagecore::{same_dims, BinaryMask, ScalarImage};
use crate::warp::AffineTransform;

/// Damping beyond which a factorisation failure is reported as singular.
const MAX_LAMBDA: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Maps moving-frame coordinates into fixed-frame coordinates.
    pub transform: AffineTransform,
    pub final_cost: f64,
    /// Indexed by pyramid level, 0 = full resolution.
    pub iterations_per_level: Vec<usize>,
    /// Cost after initialisation and after every accepted step, per level.
    pub cost_trace: Vec<Vec<f64>>,
    pub converged: bool,
    pub valid_pixel_fraction: f64,
}

/// Levenberg–Marquardt on one resolution level.
///
/// Solves `(JᵀJ + λ·diag(JᵀJ))·δ = −Jᵀr` each iteration, applies `δ`
/// additively to `(a11, a12, a21, a22, tx, ty)`, and keeps the step only
/// if the normalised robust cost drops.
pub fn lm_solve(
    fixed: (&ScalarImage, &BinaryMask),
    moving: (&ScalarImage, &BinaryMask),
    t_init: &AffineTransform,
    opts: &RegistrationOptions,
) -> Result<RegistrationResult> {
    opts.validate()?;
    let problem = CostProblem::new(fixed, moving, opts.robust_threshold, opts.bidirectional)?;
    let mut t = *t_init;
    let mut current = problem.normal_equations(&t)?;
    let mut trace = vec![current.cost()];
    let mut lambda = opts.lm_lambda_init;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations_per_level {
        let g = Vector6::from_column_slice(&current.jtr);
        if g.amax() == 0.0 {
            converged = true;
            break;
        }
        let h = Matrix6::from_fn(|r, c| current.hessian()[r][c]);
        let diag_floor = 1e-12 * h.diagonal().amax();
        let mut damped = h;
        for i in 0..6 {
            damped[(i, i)] += lambda * h[(i, i)].max(diag_floor);
        }
        let Some(chol) = damped.cholesky() else {
            if lambda > MAX_LAMBDA {
                return Err(Error::SingularSystem { lambda });
            }
            lambda *= opts.lm_lambda_up;
            iterations += 1;
            continue;
        };
        let delta = chol.solve(&(-g));
        if delta.norm() < opts.param_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let mut p = t.params();
        p.iter_mut().zip(delta.iter()).for_each(|(a, d)| *a += d);
        let trial = AffineTransform::from_params(&p)
            .ok()
            .and_then(|c| problem.normal_equations(&c).ok().map(|ne| (c, ne)));
        match trial {
            Some((candidate, ne)) if ne.cost() < current.cost() => {
                t = candidate;
                current = ne;
                trace.push(current.cost());
                lambda /= opts.lm_lambda_down;
            }
            _ => {
                lambda *= opts.lm_lambda_up;
                if lambda > MAX_LAMBDA {
                    break;
                }
            }
        }
    }

    Ok(RegistrationResult {
        transform: t,
        final_cost: current.cost(),
        iterations_per_level: vec![iterations],
        cost_trace: vec![trace],
        converged,
        valid_pixel_fraction: current.valid_fraction,
    })
}

/// Coarse-to-fine registration of `moving` onto `fixed`.
///
/// Both images are first smoothed with `presmooth_sigma` (see
/// [`presmooth`]). Without it, sensor noise biases the optimum: bilinear
/// resampling averages noise by an amount that depends on the sub-pixel
/// phase, which pulls the estimate by tenths of a pixel.
///
/// `t_init` is expressed at full resolution. Between levels the linear part
/// carries over unchanged and the translation scales by `1 / scale_factor`.
/// Coarse levels that cannot be solved (too little overlap after mask
/// erosion, singular system) are skipped; full-resolution errors propagate.
pub fn register_pair(
    fixed: (&ScalarImage, &BinaryMask),
    moving: (&ScalarImage, &BinaryMask),
    t_init: &AffineTransform,
    opts: &RegistrationOptions,
) -> Result<RegistrationResult> {
    opts.validate()?;
    same_dims(fixed.0.dims(), moving.0.dims())?;
    let s = opts.scale_factor;
    let (fixed_img, fixed_mask) = presmooth(fixed.0, fixed.1, opts.presmooth_sigma)?;
    let (moving_img, moving_mask) = presmooth(moving.0, moving.1, opts.presmooth_sigma)?;
    let fp = build_pyramid(&fixed_img, &fixed_mask, opts.pyramid_levels, s)?;
    let mp = build_pyramid(&moving_img, &moving_mask, opts.pyramid_levels, s)?;
    let levels = fp.len().min(mp.len());

    let mut t = t_init.rescaled(s.powi(levels as i32 - 1));
    let mut iterations = vec![0; levels];
    let mut traces = vec![Vec::new(); levels];
    let mut last = None;
    for level in (0..levels).rev() {
        let (fi, fm) = &fp.levels[level];
        let (mi, mm) = &mp.levels[level];
        match lm_solve((fi, fm), (mi, mm), &t, opts) {
            Ok(res) => {
                t = res.transform;
                iterations[level] = res.iterations_per_level[0];
                traces[level] = res.cost_trace[0].clone();
                if level == 0 {
                    last = Some(res);
                }
            }
            Err(e) if level == 0 => return Err(e),
            Err(_) => {}
        }
        if level > 0 {
            t = t.rescaled(1.0 / s);
        }
    }
    let res = last.expect("level 0 either succeeds or returns");
    Ok(RegistrationResult {
        transform: res.transform,
        final_cost: res.final_cost,
        iterations_per_level: iterations,
        cost_trace: traces,
        converged: res.converged,
        valid_pixel_fraction: res.valid_pixel_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_layers, generate_pair, random_pair_transform, SynthConfig, Trajectory};
    use crate::warp::{corner_reprojection_error, default_visibility};
    use proptest::prelude::*;

    fn wavy(dx: f64, dy: f64) -> ScalarImage {
        ScalarImage::from_fn(96, 96, |x, y| {
            let (u, v) = (x as f64 + dx, y as f64 + dy);
            0.5 + 0.2 * (u / 7.0).sin() * (v / 9.0).cos() + 0.15 * ((u + 2.0 * v) / 13.0).sin()
        })
        .unwrap()
    }

    fn single_level() -> RegistrationOptions {
        RegistrationOptions {
            pyramid_levels: 1,
            presmooth_sigma: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn identical_images_stay_at_identity() {
        let img = wavy(0.0, 0.0);
        let m = default_visibility(96, 96).unwrap();
        let r = lm_solve((&img, &m), (&img, &m), &AffineTransform::IDENTITY, &single_level()).unwrap();
        assert!(r.iterations_per_level[0] <= 1);
        assert!(r.converged);
        assert_eq!(r.transform, AffineTransform::IDENTITY);
        let r = register_pair(
            (&img, &m),
            (&img, &m),
            &AffineTransform::IDENTITY,
            &RegistrationOptions::default(),
        )
        .unwrap();
        assert!(r.transform.max_abs_diff(&AffineTransform::IDENTITY) < 1e-6);
    }

    #[test]
    fn recovers_translation() {
        // M(y) = F(y + t), so T = translate(t)
        let fixed = wavy(0.0, 0.0);
        let moving = wavy(2.0, -1.5);
        let m = default_visibility(96, 96).unwrap();
        let r = lm_solve((&fixed, &m), (&moving, &m), &AffineTransform::IDENTITY, &single_level()).unwrap();
        let (tx, ty) = r.transform.translation_part();
        assert!((tx - 2.0).abs() < 0.05 && (ty + 1.5).abs() < 0.05, "{tx} {ty}");
        assert!(r.converged);
    }

    #[test]
    fn recovers_rotation_about_centre() {
        let c = 47.5;
        let rot = AffineTransform::similarity_about(c, c, 2f64.to_radians(), 1.0, 0.0, 0.0).unwrap();
        let fixed = wavy(0.0, 0.0);
        let moving = ScalarImage::from_fn(96, 96, |x, y| {
            let (u, v) = rot.apply(x as f64, y as f64);
            0.5 + 0.2 * (u / 7.0).sin() * (v / 9.0).cos() + 0.15 * ((u + 2.0 * v) / 13.0).sin()
        })
        .unwrap();
        let m = default_visibility(96, 96).unwrap();
        let r = lm_solve((&fixed, &m), (&moving, &m), &AffineTransform::IDENTITY, &single_level()).unwrap();
        let (got, want) = (r.transform.linear(), rot.linear());
        for i in 0..2 {
            for j in 0..2 {
                assert!((got[i][j] - want[i][j]).abs() < 1e-3, "{got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn disjoint_views_are_insufficient_overlap() {
        let img = wavy(0.0, 0.0);
        let m = default_visibility(96, 96).unwrap();
        let far = AffineTransform::translation(500.0, 0.0);
        assert!(matches!(
            register_pair((&img, &m), (&img, &m), &far, &RegistrationOptions::default()),
            Err(Error::InsufficientOverlap { .. })
        ));
        assert!(lm_solve((&img, &m), (&img, &m), &far, &single_level()).is_err());
    }

    fn small_scene() -> SynthConfig {
        SynthConfig {
            canvas: 400,
            frame: 160,
            n_frames: 1,
            n_vessels: 6,
            vessel_width_range: [5.0, 10.0],
            trajectory: Trajectory::still(),
            noise_sigma: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn registration_is_symmetric() {
        let cfg = small_scene();
        let layers = generate_layers(&cfg);
        for seed in 0..3 {
            let gt = random_pair_transform(seed, cfg.frame, 5.0, 2.0, [0.98, 1.02]).unwrap();
            let pair = generate_pair(&cfg, &layers, &gt).unwrap();
            let v = &pair.visibility;
            let opts = RegistrationOptions::default();
            let ab = register_pair((&pair.fixed, v), (&pair.moving, v), &AffineTransform::IDENTITY, &opts).unwrap();
            let ba = register_pair((&pair.moving, v), (&pair.fixed, v), &AffineTransform::IDENTITY, &opts).unwrap();
            let err = corner_reprojection_error(&ab.transform, &ba.transform.invert(), cfg.frame, cfg.frame);
            assert!(err < 0.1, "seed {seed}: {err}");
        }
    }

    #[test]
    fn coarse_to_fine_refines_coarse_estimate() {
        let cfg = small_scene();
        let layers = generate_layers(&cfg);
        let gt = AffineTransform::translation(6.3, -4.8);
        let pair = generate_pair(&cfg, &layers, &gt).unwrap();
        let v = &pair.visibility;
        let opts = RegistrationOptions::default();
        let r = register_pair((&pair.fixed, v), (&pair.moving, v), &AffineTransform::IDENTITY, &opts).unwrap();
        assert_eq!(r.iterations_per_level.len(), 3); // 160, 80, 40
        assert_eq!(r.cost_trace.len(), 3);
        assert!(corner_reprojection_error(&r.transform, &gt, cfg.frame, cfg.frame) < 0.1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn accepted_steps_never_raise_cost(seed in 0u64..10_000, tx in -3.0f64..3.0, ty in -3.0f64..3.0) {
            let fixed = crate::register::cost::tests::smooth_random_image(seed, 64, 64);
            let moving = crate::register::cost::tests::smooth_random_image(seed + 1, 64, 64);
            let m = BinaryMask::filled(64, 64, true).unwrap();
            let t0 = AffineTransform::translation(tx, ty);
            let r = register_pair((&fixed, &m), (&moving, &m), &t0, &RegistrationOptions::default()).unwrap();
            for trace in &r.cost_trace {
                prop_assert!(trace.windows(2).all(|w| w[1] <= w[0]));
            }
            let last = r.cost_trace[0].last().copied().unwrap();
            prop_assert_eq!(last, r.final_cost);
            prop_assert!(r.final_cost <= r.cost_trace[0][0]);
            prop_assert!((0.0..=1.0).contains(&r.valid_pixel_fraction));
        }
    }
}
