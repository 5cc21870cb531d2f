//! Luminance mode-shift: move the skin luminance mode of a dark face to a
//! series of lighter targets, then build the full lightening ensemble.

use skintone_audit::audit::HairLength;
use skintone_audit::imaging::{detect_skin, rgb_to_ycrcb, skin_luminance_histogram, SkinRule};
use skintone_audit::model::Gender;
use skintone_audit::synthetic::{draw_face, FaceSpec};
use skintone_audit::transform::{
    build_ensemble, luminance_mode, mode_shift, Direction, EnsembleConfig, Method, ModeShiftSpec,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let face = draw_face(&FaceSpec {
        side: 64,
        gender: Gender::Male,
        skin_y: 80,
        hair: HairLength::Short,
        seed: 3,
    });
    let ycc = rgb_to_ycrcb(&face.image);
    let mask = detect_skin(&ycc, &SkinRule::default());
    let mode = luminance_mode(&skin_luminance_histogram(&ycc, &mask)?)?;
    println!("original skin mode {mode}");

    for target in [100u8, 140, 180] {
        let shifted = mode_shift(&ycc, &mask, ModeShiftSpec::new(target))?;
        let got = luminance_mode(&skin_luminance_histogram(&shifted, &mask)?)?;
        println!("target {target} -> mode {got}");
    }

    let ensemble = build_ensemble(
        &ycc,
        &mask,
        Direction::Lighten,
        Method::ModeShift,
        &EnsembleConfig::default(),
    )?;
    println!("lightening ensemble has {} members", ensemble.members.len());
    let dir = std::env::temp_dir().join("skin_audit_mode_shift");
    ensemble.export(&dir)?;
    println!("members written to {}", dir.display());
    Ok(())
}
