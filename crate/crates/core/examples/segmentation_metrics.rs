//! Scores thresholded synthetic probability maps against the clean vessel
//! layer, and evaluates the BCE + Jaccard training loss on one map.
//!
//! ```bash
//! cargo run --release --example segmentation_metrics -- [threshold]
//! ```

use fetomosaic::imagecore::{binarize, ScalarImage};
use fetomosaic::metrics::{dice_score, iou_score, loss_breakdown, LossInputs};
use fetomosaic::synth::{generate_sequence, SynthConfig};

fn main() -> fetomosaic::Result<()> {
    let threshold: f64 = std::env::args().nth(1).map_or(0.5, |a| a.parse().expect("threshold"));
    let cfg = SynthConfig {
        n_frames: 5,
        canvas: 512,
        frame: 256,
        ..SynthConfig::default()
    };
    let seq = generate_sequence(&cfg)?;
    for (k, prob) in seq.prob_maps.iter().enumerate() {
        // a degraded prediction: the map shifted by k px and pulled toward 0.5
        let pred = ScalarImage::from_fn(prob.width(), prob.height(), |x, y| {
            0.25 + 0.5 * f64::from(prob.get(x.saturating_sub(k), y))
        })?;
        let gt = binarize(prob, 0.5)?;
        let hard = binarize(&pred, threshold)?;
        let loss = loss_breakdown(&LossInputs::from_images(&gt, &pred)?);
        println!(
            "frame {k}: dice {:.4} iou {:.4}  loss bce {:.4} + jaccard {:.4} = {:.4}",
            dice_score(&hard, &gt)?,
            iou_score(&hard, &gt)?,
            loss.bce,
            loss.iou,
            loss.combined
        );
    }
    Ok(())
}
