//! Runs the windowed drift protocol on a synthetic sequence three times:
//! with ground-truth transforms, with transforms registered on the
//! probability maps, and with transforms registered on intensity frames.
//!
//! ```bash
//! cargo run --release --example drift_eval -- [n_frames] [noise_sigma] [seed] [occluder_rate]
//! ```

use std::time::Instant;

use fetomosaic::drifteval::{evaluate_drift, median_at, DriftReport, Metric};
use fetomosaic::mosaic::chain_transforms;
use fetomosaic::pipeline::register_sequence;
use fetomosaic::register::RegistrationOptions;
use fetomosaic::synth::{generate_sequence, SynthConfig};
use fetomosaic::warp::{corner_reprojection_error, AffineTransform};

fn print_medians(label: &str, report: &DriftReport) {
    print!("{label:>10}:");
    for d in 1..report.window_size {
        let m = |metric| median_at(report, d, metric).map_or("-".to_string(), |v| format!("{v:.4}"));
        print!(
            "  d={d} ssim {} ssim_prob {} iou {}",
            m(Metric::Ssim),
            m(Metric::SsimProb),
            m(Metric::Iou)
        );
    }
    println!();
}

fn end_frame_error(estimated: &[AffineTransform], gt: &[AffineTransform], frame: usize) -> fetomosaic::Result<f64> {
    let est = chain_transforms(estimated, 0)?;
    let truth = chain_transforms(gt, 0)?;
    let last = est.len() - 1;
    Ok(corner_reprojection_error(
        &est.absolute[last],
        &truth.absolute[last],
        frame,
        frame,
    ))
}

fn main() -> fetomosaic::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_frames: usize = args.next().map_or(40, |a| a.parse().expect("n_frames"));
    let noise_sigma: f64 = args.next().map_or(0.01, |a| a.parse().expect("noise_sigma"));
    let seed: u64 = args.next().map_or(0, |a| a.parse().expect("seed"));
    let occluder_rate: f64 = args.next().map_or(0.0, |a| a.parse().expect("occluder_rate"));

    let cfg = SynthConfig {
        seed,
        n_frames,
        noise_sigma,
        occluder_rate,
        ..SynthConfig::default()
    };
    let seq = generate_sequence(&cfg)?;
    let drift =
        |pairwise: &[AffineTransform]| evaluate_drift(&seq.frames, &seq.prob_maps, &seq.visibility, pairwise, 5, 0.5);

    print_medians("truth", &drift(&seq.gt_pairwise)?);

    let opts = RegistrationOptions::default();
    for (label, images) in [("vessel", &seq.prob_maps), ("intensity", &seq.frames)] {
        let start = Instant::now();
        let pairs = register_sequence(images, &seq.visibility, &opts)?;
        let pairwise: Vec<AffineTransform> = pairs.iter().map(|p| p.transform).collect();
        let failed = pairs.iter().filter(|p| !p.converged).count();
        print_medians(label, &drift(&pairwise)?);
        println!(
            "{:>10}  end-frame corner error {:.3} px, {failed} unconverged pairs, {:.1}s",
            "",
            end_frame_error(&pairwise, &seq.gt_pairwise, cfg.frame)?,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
