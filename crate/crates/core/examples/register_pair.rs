//! Registers synthetic 448×448 frame pairs with known motion and reports
//! the recovered transform against ground truth.
//!
//! ```bash
//! cargo run --release --example register_pair -- [n_pairs] [noise_sigma]
//! ```

use std::time::Instant;

use fetomosaic::register::{register_pair, RegistrationOptions};
use fetomosaic::synth::{generate_layers, generate_pair, random_pair_transform, SynthConfig};
use fetomosaic::warp::{corner_reprojection_error, AffineTransform};

fn main() -> fetomosaic::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: u64 = args.next().map_or(5, |a| a.parse().expect("n_pairs"));
    let sigma: f64 = args.next().map_or(0.0, |a| a.parse().expect("noise_sigma"));

    let cfg = SynthConfig {
        noise_sigma: sigma,
        ..SynthConfig::default()
    };
    let layers = generate_layers(&cfg);
    let opts = RegistrationOptions::default();
    for seed in 0..n {
        let gt = random_pair_transform(seed, cfg.frame, 15.0, 3.0, [0.97, 1.03])?;
        let pair = generate_pair(&cfg, &layers, &gt)?;
        let vis = &pair.visibility;
        let start = Instant::now();
        let res = register_pair(
            (&pair.fixed, vis),
            (&pair.moving, vis),
            &AffineTransform::IDENTITY,
            &opts,
        )?;
        let err = corner_reprojection_error(&res.transform, &gt, cfg.frame, cfg.frame);
        println!(
            "pair {seed}: corner error {err:.4} px, cost {:.3e}, iterations {:?}, converged {}, {:.2}s",
            res.final_cost,
            res.iterations_per_level,
            res.converged,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
