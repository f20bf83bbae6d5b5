//! Compares registration on vessel probability maps with registration on
//! intensity frames when occluders cover parts of the frames. Occluders
//! are painted on the frames only, as a segmentation network would ignore
//! them.
//!
//! ```bash
//! cargo run --release --example vessel_vs_intensity -- [n_seeds] [n_frames] [occluder_rate]
//! ```

use fetomosaic::drifteval::{evaluate_drift, Metric};
use fetomosaic::pipeline::{compare_runs, register_sequence};
use fetomosaic::register::RegistrationOptions;
use fetomosaic::synth::{generate_sequence, SynthConfig};
use fetomosaic::warp::AffineTransform;

fn main() -> fetomosaic::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_seeds: u64 = args.next().map_or(3, |a| a.parse().expect("n_seeds"));
    let n_frames: usize = args.next().map_or(30, |a| a.parse().expect("n_frames"));
    let occluder_rate: f64 = args.next().map_or(0.5, |a| a.parse().expect("occluder_rate"));

    let opts = RegistrationOptions::default();
    for seed in 0..n_seeds {
        let cfg = SynthConfig {
            seed,
            n_frames,
            occluder_rate,
            ..SynthConfig::default()
        };
        let seq = generate_sequence(&cfg)?;
        let mut reports = Vec::new();
        for images in [&seq.prob_maps, &seq.frames] {
            let pairwise: Vec<AffineTransform> = register_sequence(images, &seq.visibility, &opts)?
                .into_iter()
                .map(|p| p.transform)
                .collect();
            reports.push(evaluate_drift(
                &seq.frames,
                &seq.prob_maps,
                &seq.visibility,
                &pairwise,
                5,
                0.5,
            )?);
        }
        println!("seed {seed}");
        for row in compare_runs(&reports[0].records, &reports[1].records)? {
            if row.metric == Metric::Iou.name() {
                let f = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.4}"));
                println!(
                    "  offset {}: IoU median vessel {} intensity {}",
                    row.offset,
                    f(row.vessel_median),
                    f(row.intensity_median)
                );
            }
        }
    }
    Ok(())
}
