//! Train the built-in network on a synthetic dataset, save and reload the
//! checkpoint, and compare an analytic input gradient with finite
//! differences.

use skintone_audit::audit::load_manifest;
use skintone_audit::imaging::RasterImage;
use skintone_audit::model::{
    train, Classifier, CompactNet, LogitObjective, MaleLogProb, NetClassifier, Preprocessor,
    TrainConfig,
};
use skintone_audit::synthetic::write_dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    write_dataset(dir.path(), 40, 48, 7)?;
    let manifest = load_manifest(dir.path().join("manifest.csv"))?;
    let data = manifest
        .rows
        .iter()
        .map(|r| Ok((RasterImage::load(manifest.image_path(r))?, r.gender)))
        .collect::<Result<Vec<_>, Box<dyn std::error::Error>>>()?;

    let config = TrainConfig {
        side: 24,
        epochs: 20,
        seed: 7,
        ..TrainConfig::default()
    };
    let net = train(&config, &data)?;
    let path = dir.path().join("model.skcn");
    net.save(&path)?;
    let classifier = NetClassifier::new(CompactNet::load(&path)?);
    let correct = data
        .iter()
        .filter(|(img, g)| classifier.score(img).map(|s| s.decision() == *g).unwrap_or(false))
        .count();
    println!(
        "{} parameters, training accuracy {correct}/{}",
        net.parameter_count(),
        data.len()
    );

    let x = Preprocessor::for_shape(net.input_shape()).apply(&data[0].0);
    let grad = net.gradient(&x, &MaleLogProb)?;
    let h = 1e-4;
    for i in [0, x.len() / 2, x.len() - 1] {
        let (mut hi, mut lo) = (x.clone(), x.clone());
        hi[i] += h;
        lo[i] -= h;
        let fd = (MaleLogProb.value(&net.logits(&hi)?) - MaleLogProb.value(&net.logits(&lo)?))
            / (2.0 * h);
        println!("d/dx[{i}]: analytic {:.6e} finite-difference {fd:.6e}", grad[i]);
    }
    Ok(())
}
