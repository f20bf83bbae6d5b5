//! Registers a synthetic sequence on its probability maps and blends the
//! maps into a mosaic, once with the estimated transforms and once with
//! ground truth.
//!
//! ```bash
//! cargo run --release --example build_mosaic -- [n_frames] [out_dir]
//! ```

use std::path::PathBuf;

use fetomosaic::imagecore::{BinaryMask, ScalarImage};
use fetomosaic::mosaic::{blend, chain_transforms, render, Reference};
use fetomosaic::pipeline::register_sequence;
use fetomosaic::register::RegistrationOptions;
use fetomosaic::synth::{generate_sequence, SynthConfig};
use fetomosaic::warp::AffineTransform;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n_frames: usize = args.next().map_or(Ok(30), |a| a.parse())?;
    let out = PathBuf::from(args.next().unwrap_or_else(|| "mosaic_out".into()));
    std::fs::create_dir_all(&out)?;

    let cfg = SynthConfig {
        n_frames,
        ..SynthConfig::default()
    };
    let seq = generate_sequence(&cfg)?;
    let pairs = register_sequence(&seq.prob_maps, &seq.visibility, &RegistrationOptions::default())?;
    let estimated: Vec<AffineTransform> = pairs.iter().map(|p| p.transform).collect();

    let inputs: Vec<(ScalarImage, BinaryMask)> = seq
        .prob_maps
        .iter()
        .map(|p| (p.clone(), seq.visibility.clone()))
        .collect();
    let reference = Reference::Center.index(n_frames);
    for (label, pairwise) in [("estimated", &estimated), ("truth", &seq.gt_pairwise)] {
        let chain = chain_transforms(pairwise, reference)?;
        let mosaic = blend(&inputs, &chain)?;
        let written = render(&mosaic, out.join(format!("{label}.pgm")), true)?;
        println!(
            "{label:>9}: canvas {}x{} at offset {:?}, wrote {:?}",
            mosaic.width, mosaic.height, mosaic.offset, written
        );
    }
    Ok(())
}
