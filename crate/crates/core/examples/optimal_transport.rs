//! Optimal transport of skin luminance onto the shipped reference palettes.
//!
//! In one dimension the quadratic-cost plan is the monotone quantile
//! coupling, so the map is computed in closed form.

use std::path::Path;

use skintone_audit::audit::HairLength;
use skintone_audit::imaging::{detect_skin, rgb_to_ycrcb, skin_luminance_histogram, SkinRule};
use skintone_audit::model::Gender;
use skintone_audit::synthetic::{draw_face, FaceSpec};
use skintone_audit::transform::{apply_transport, transport_map_to_masses, Palette};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let palettes = Palette::load_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("palettes"))?;
    let face = draw_face(&FaceSpec {
        side: 64,
        gender: Gender::Female,
        skin_y: 85,
        hair: HairLength::Long,
        seed: 11,
    });
    let ycc = rgb_to_ycrcb(&face.image);
    let mask = detect_skin(&ycc, &SkinRule::default());
    let hist = skin_luminance_histogram(&ycc, &mask)?;
    println!("source skin mean Y {:.2}", hist.mean().unwrap_or(0.0));
    println!("palette              mean    moved_mean  split_bins  cost/pixel");
    for p in &palettes {
        let map = transport_map_to_masses(&hist, &p.masses)?;
        let out = apply_transport(&ycc, &mask, &map)?;
        let cost: f64 = mask
            .indices()
            .map(|i| {
                let d = f64::from(out.pixels()[i][0]) - f64::from(ycc.pixels()[i][0]);
                d * d
            })
            .sum::<f64>()
            / mask.count() as f64;
        println!(
            "{:<20} {:>6.2}  {:>10.2}  {:>10}  {:>10.1}",
            p.id,
            p.mean(),
            skin_luminance_histogram(&out, &mask)?.mean().unwrap_or(0.0),
            map.fractional_splits().len(),
            cost
        );
    }
    Ok(())
}
