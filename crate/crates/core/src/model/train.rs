use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{CompactNet, InputShape, Preprocessor};
use super::{Gender, LogitVector, ModelError, Result};
use crate::imaging::RasterImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub side: usize,
    pub channels: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            side: 32,
            channels: 3,
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 30,
            batch_size: 8,
            seed: 0,
        }
    }
}

/// Softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &LogitVector, label: Gender) -> (f64, [f64; 2]) {
    let [a, b] = logits.0;
    let m = a.max(b);
    let lse = m + ((a - m).exp() + (b - m).exp()).ln();
    let p = [(a - lse).exp(), (b - lse).exp()];
    let mut g = p;
    g[label.index()] -= 1.0;
    (lse - logits.0[label.index()], g)
}

fn mean_loss(net: &CompactNet, data: &[(Vec<f64>, Gender)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in data {
        total += cross_entropy(&net.logits(x)?, *y).0;
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSummary {
    pub initial_loss: f64,
    pub final_loss: f64,
}

fn check_classes<T>(data: &[(T, Gender)]) -> Result<()> {
    let has = |g| data.iter().any(|(_, y)| *y == g);
    if !has(Gender::Female) || !has(Gender::Male) {
        return Err(ModelError::DegenerateData);
    }
    Ok(())
}

/// Minibatch SGD with momentum on mean cross-entropy. Sample order per epoch
/// comes from a ChaCha stream seeded with `config.seed`, so a run is fully
/// reproducible. The returned parameters are those with the lowest full-data
/// loss seen at an epoch boundary, so the final loss never exceeds the
/// initial one.
pub fn fit(
    net: &mut CompactNet,
    config: &TrainConfig,
    data: &[(Vec<f64>, Gender)],
) -> Result<TrainSummary> {
    check_classes(data)?;
    let initial_loss = mean_loss(net, data)?;
    let mut best = (initial_loss, net.parameters());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let n_params = net.parameter_count();
    let mut velocity = vec![0.0; n_params];
    let mut grads = vec![0.0; n_params];
    let batch = config.batch_size.max(1);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            for &i in chunk {
                let (x, y) = &data[i];
                let acts = net.forward_trace(x)?;
                let last = acts.last().expect("nonempty");
                let (_, dl) = cross_entropy(&LogitVector([last[0], last[1]]), *y);
                net.backward(&acts, dl, Some(&mut grads));
            }
            let scale = config.learning_rate / chunk.len() as f64;
            let mut params = net.parameters();
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grads) {
                *v = config.momentum * *v - scale * g;
                *p += *v;
            }
            net.set_parameters(&params)?;
        }
        let loss = mean_loss(net, data)?;
        if loss < best.0 {
            best = (loss, net.parameters());
        }
    }
    net.set_parameters(&best.1)?;
    Ok(TrainSummary {
        initial_loss,
        final_loss: best.0,
    })
}

/// Trains the standard two-block network on labeled images.
pub fn train(config: &TrainConfig, data: &[(RasterImage, Gender)]) -> Result<CompactNet> {
    check_classes(data)?;
    let mut net = CompactNet::standard(config.channels, config.side, config.seed)?;
    let pre = Preprocessor::for_shape(InputShape::square(config.channels, config.side));
    let tensors: Vec<(Vec<f64>, Gender)> =
        data.iter().map(|(img, y)| (pre.apply(img), *y)).collect();
    fit(&mut net, config, &tensors)?;
    Ok(net)
}
