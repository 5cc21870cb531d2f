//! Pertinent positives: the smallest part of an input that alone keeps the
//! model's decision.
//!
//! First on a two-feature linear model where the answer is easy to read,
//! then on a network trained on synthetic faces with per-gender averages.

use skintone_audit::audit::load_manifest;
use skintone_audit::explain::{average_mask, export_delta, search_c, CemParams};
use skintone_audit::imaging::RasterImage;
use skintone_audit::model::{train, CompactNet, Gender, InputShape, Preprocessor, TrainConfig};
use skintone_audit::synthetic::write_dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // male logit grows with feature 0 only
    let toy = CompactNet::linear(InputShape::flat(2), [vec![0.0, 0.0], vec![30.0, 0.0]], [0.0, 0.0])?;
    let pp = search_c(&toy, &[0.9, 0.8], Gender::Male, &CemParams::default())?;
    println!(
        "toy: delta {:?} chosen c {} f_kappa {:.3}",
        pp.delta, pp.chosen_c, pp.achieved_f_kappa
    );

    let dir = tempfile::tempdir()?;
    write_dataset(dir.path(), 16, 48, 9)?;
    let manifest = load_manifest(dir.path().join("manifest.csv"))?;
    let data = manifest
        .rows
        .iter()
        .map(|r| Ok((RasterImage::load(manifest.image_path(r))?, r.gender)))
        .collect::<Result<Vec<_>, Box<dyn std::error::Error>>>()?;
    let config = TrainConfig {
        side: 16,
        epochs: 20,
        seed: 9,
        ..TrainConfig::default()
    };
    let net = train(&config, &data)?;
    let pre = Preprocessor::for_shape(net.input_shape());
    let params = CemParams {
        max_iters: 300,
        ..CemParams::default()
    };
    let out = dir.path().join("explanations");
    for g in [Gender::Female, Gender::Male] {
        let mut found = Vec::new();
        for (img, label) in data.iter().filter(|(_, l)| *l == g).take(3) {
            let x = pre.apply(img);
            if net.logits(&x)?.argmax() != *label {
                continue;
            }
            let pp = search_c(&net, &x, g, &params)?;
            println!("{g}: c {} support {} l1 {:.3}", pp.chosen_c, pp.support(), pp.l1());
            found.push(pp);
        }
        match average_mask(g.as_str(), &found) {
            Ok(avg) => {
                export_delta(&out, &format!("average_{g}"), &avg.mean, net.input_shape(), None)?;
                println!("{g}: averaged {} masks", avg.count);
            }
            Err(e) => println!("{g}: {e}"),
        }
    }
    Ok(())
}
