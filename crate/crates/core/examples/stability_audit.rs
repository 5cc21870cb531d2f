//! The stability experiment: lighten dark-skinned faces with both methods,
//! score every ensemble member and summarize the score differences.

use std::path::Path;

use skintone_audit::audit::{load_manifest, SkinType};
use skintone_audit::imaging::{detect_skin, rgb_to_ycrcb, RasterImage, SkinRule};
use skintone_audit::model::{train, NetClassifier, TrainConfig};
use skintone_audit::stability::{
    run_stability, ReportConfig, StabilityInput, StabilityReport,
};
use skintone_audit::synthetic::write_dataset;
use skintone_audit::transform::{Direction, EnsembleConfig, Method, Palette};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    write_dataset(dir.path(), 40, 48, 21)?;
    let manifest = load_manifest(dir.path().join("manifest.csv"))?;
    let mut labeled = Vec::new();
    let mut dark = Vec::new();
    for row in &manifest.rows {
        let image = RasterImage::load(manifest.image_path(row))?;
        labeled.push((image.clone(), row.gender));
        if row.skin_type == SkinType::Dark {
            let mask = detect_skin(&rgb_to_ycrcb(&image), &SkinRule::default());
            dark.push(StabilityInput {
                id: row.id(),
                image,
                mask,
                gender: Some(row.gender),
            });
        }
    }
    let config = TrainConfig {
        side: 24,
        epochs: 15,
        seed: 21,
        ..TrainConfig::default()
    };
    let classifier = NetClassifier::new(train(&config, &labeled)?);

    let ensembles = EnsembleConfig {
        palettes: Palette::load_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("palettes"))?,
        ..EnsembleConfig::default()
    };
    for method in [Method::ModeShift, Method::OptimalTransport] {
        let run = run_stability(&classifier, &dark, Direction::Lighten, method, &ensembles, 4)?;
        let report = StabilityReport::build(
            format!("dark-{}", method.as_str()),
            Direction::Lighten,
            method,
            run.records,
            run.excluded.len(),
            &ReportConfig::default(),
        )?;
        println!("{}", report.to_text());
    }
    Ok(())
}
