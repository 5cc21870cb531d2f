//! Color conversion, skin detection and chroma statistics on synthetic faces.
//!
//! Skin chroma barely moves while luminance sweeps from dark to light,
//! which is why skin type can be varied through Y alone.

use skintone_audit::audit::HairLength;
use skintone_audit::imaging::{
    chroma_histograms, detect_skin, rgb_pixel_to_ycrcb, rgb_to_ycrcb, skin_luminance_histogram,
    SkinRule,
};
use skintone_audit::model::Gender;
use skintone_audit::synthetic::{draw_face, FaceSpec};
use skintone_audit::transform::luminance_mode;

fn weighted_mean(counts: &[u64; 256]) -> f64 {
    let n: u64 = counts.iter().sum();
    counts.iter().enumerate().map(|(v, &c)| v as f64 * c as f64).sum::<f64>() / n as f64
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("(255,0,0) -> YCrCb {:?}", rgb_pixel_to_ycrcb([255, 0, 0]));

    let rule = SkinRule::default();
    println!("skin_y  pixels  mode  mean_cr  mean_cb");
    for skin_y in [60u8, 90, 120, 150, 180] {
        let face = draw_face(&FaceSpec {
            side: 64,
            gender: Gender::Female,
            skin_y,
            hair: HairLength::Long,
            seed: u64::from(skin_y),
        });
        let ycc = rgb_to_ycrcb(&face.image);
        let mask = detect_skin(&ycc, &rule);
        let hist = skin_luminance_histogram(&ycc, &mask)?;
        let chroma = chroma_histograms([(&ycc, &mask)])?;
        println!(
            "{skin_y:>6}  {:>6}  {:>4}  {:>7.2}  {:>7.2}",
            mask.count(),
            luminance_mode(&hist)?,
            weighted_mean(&chroma.cr_counts),
            weighted_mean(&chroma.cb_counts)
        );
    }
    Ok(())
}
