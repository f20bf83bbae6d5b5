//! Generates a synthetic sequence and writes frames, probability maps,
//! the visibility mask and ground-truth pairwise transforms.
//!
//! ```bash
//! cargo run --release --example synth_sequence -- [out_dir] [n_frames] [seed]
//! ```

use std::path::PathBuf;

use fetomosaic::imagecore::{save_image, BitDepth};
use fetomosaic::pipeline::write_transforms;
use fetomosaic::synth::{generate_sequence, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synth_out".into()));
    let n_frames: usize = args.next().map_or(Ok(20), |a| a.parse())?;
    let seed: u64 = args.next().map_or(Ok(0), |a| a.parse())?;

    let cfg = SynthConfig {
        seed,
        n_frames,
        ..SynthConfig::default()
    };
    let seq = generate_sequence(&cfg)?;
    std::fs::create_dir_all(out.join("frames"))?;
    std::fs::create_dir_all(out.join("probmaps"))?;
    for (k, (frame, prob)) in seq.frames.iter().zip(&seq.prob_maps).enumerate() {
        save_image(frame, out.join(format!("frames/frame_{k:04}.pgm")), BitDepth::Sixteen)?;
        save_image(prob, out.join(format!("probmaps/frame_{k:04}.pgm")), BitDepth::Sixteen)?;
    }
    save_image(&seq.visibility.to_image(), out.join("mask.pgm"), BitDepth::Eight)?;
    write_transforms(&seq.gt_pairwise, &out.join("gt_transforms.csv"))?;

    let visible = seq.visibility.count() as f64 / seq.visibility.data().len() as f64;
    println!(
        "{} frames of {}x{} in {} ({:.1}% of each frame visible)",
        seq.frames.len(),
        cfg.frame,
        cfg.frame,
        out.display(),
        100.0 * visible
    );
    Ok(())
}
