//! Intersectional accuracy tables for a model that only saw light-skinned
//! faces: skin type by hair length on whole images, then skin type by
//! gender on face crops with growing padding.

use skintone_audit::audit::{group_accuracy, load_manifest, Attribute, SkinType};
use skintone_audit::imaging::{crop_face, RasterImage};
use skintone_audit::model::{train, Classifier, NetClassifier, TrainConfig};
use skintone_audit::synthetic::write_dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    write_dataset(dir.path(), 48, 48, 5)?;
    let manifest = load_manifest(dir.path().join("manifest.csv"))?;
    let images = manifest
        .rows
        .iter()
        .map(|r| RasterImage::load(manifest.image_path(r)))
        .collect::<Result<Vec<_>, _>>()?;
    // a short run on light-skinned whole images only
    let config = TrainConfig {
        side: 16,
        epochs: 3,
        seed: 5,
        ..TrainConfig::default()
    };
    let labeled: Vec<_> = images
        .iter()
        .zip(&manifest.rows)
        .filter(|(_, r)| r.skin_type == SkinType::Light)
        .map(|(img, r)| (img.clone(), r.gender))
        .collect();
    let classifier = NetClassifier::new(train(&config, &labeled)?);

    let scores = images
        .iter()
        .map(|img| classifier.score(img).map(Some))
        .collect::<Result<Vec<_>, _>>()?;
    let females: Vec<_> = manifest.rows.iter().filter(|r| r.gender.as_str() == "female").cloned().collect();
    let female_scores: Vec<_> = manifest
        .rows
        .iter()
        .zip(&scores)
        .filter(|(r, _)| r.gender.as_str() == "female")
        .map(|(_, s)| *s)
        .collect();
    let table = group_accuracy(&females, &female_scores, &[Attribute::SkinType, Attribute::HairLength])?;
    println!("females, whole image\n{}", table.to_csv());

    for pad in [0.0, 0.25, 0.5] {
        let scores = manifest
            .rows
            .iter()
            .zip(&images)
            .map(|(r, img)| {
                let crop = crop_face(img, r.crop.expect("synthetic rows carry crops"), pad)?;
                Ok(Some(classifier.score(&crop)?))
            })
            .collect::<Result<Vec<_>, Box<dyn std::error::Error>>>()?;
        let table = group_accuracy(&manifest.rows, &scores, &[Attribute::SkinType, Attribute::Gender])?;
        println!("face crops, pad {pad}\n{}", table.to_csv());
    }
    Ok(())
}
