use std::fs;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LogitObjective, LogitVector, ModelError, Result};
use crate::imaging::RasterImage;

/// Channel-major tensor shape `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn square(channels: usize, side: usize) -> Self {
        Self::new(channels, side, side)
    }

    /// A flat vector of `n` features.
    pub fn flat(n: usize) -> Self {
        Self::new(1, 1, n)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// Zero-padded "same" convolution with an odd square kernel.
    Conv { out_channels: usize, kernel: usize },
    Relu,
    /// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
    MaxPool2,
    /// Fully connected layer over the flattened input.
    Dense { out: usize },
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    spec: LayerSpec,
    input: InputShape,
    output: InputShape,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    fn resolve(spec: LayerSpec, input: InputShape) -> Result<Self> {
        let (output, n_weights, n_bias) = match spec {
            LayerSpec::Conv {
                out_channels,
                kernel,
            } => {
                if kernel % 2 == 0 || out_channels == 0 {
                    return Err(ModelError::Architecture(format!(
                        "conv needs an odd kernel and at least one channel, got {kernel}/{out_channels}"
                    )));
                }
                (
                    InputShape::new(out_channels, input.height, input.width),
                    out_channels * input.channels * kernel * kernel,
                    out_channels,
                )
            }
            LayerSpec::Relu => (input, 0, 0),
            LayerSpec::MaxPool2 => {
                if input.height < 2 || input.width < 2 {
                    return Err(ModelError::Architecture(format!(
                        "cannot pool a {}x{} map",
                        input.height, input.width
                    )));
                }
                (
                    InputShape::new(input.channels, input.height / 2, input.width / 2),
                    0,
                    0,
                )
            }
            LayerSpec::Dense { out } => {
                if out == 0 {
                    return Err(ModelError::Architecture("dense layer with no outputs".into()));
                }
                (InputShape::flat(out), out * input.len(), out)
            }
        };
        Ok(Self {
            spec,
            input,
            output,
            weights: vec![0.0; n_weights],
            bias: vec![0.0; n_bias],
        })
    }

    fn fan_in(&self) -> usize {
        match self.spec {
            LayerSpec::Conv { kernel, .. } => self.input.channels * kernel * kernel,
            LayerSpec::Dense { .. } => self.input.len(),
            _ => 0,
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let inp = self.input;
        let out = self.output;
        match self.spec {
            LayerSpec::Conv { kernel, .. } => {
                let pad = (kernel / 2) as isize;
                let (h, w) = (inp.height as isize, inp.width as isize);
                let mut y = vec![0.0; out.len()];
                for o in 0..out.channels {
                    for r in 0..inp.height {
                        for c in 0..inp.width {
                            let mut acc = self.bias[o];
                            for i in 0..inp.channels {
                                let wbase = (o * inp.channels + i) * kernel * kernel;
                                let xbase = i * inp.height * inp.width;
                                for kr in 0..kernel {
                                    let rr = r as isize + kr as isize - pad;
                                    if rr < 0 || rr >= h {
                                        continue;
                                    }
                                    for kc in 0..kernel {
                                        let cc = c as isize + kc as isize - pad;
                                        if cc < 0 || cc >= w {
                                            continue;
                                        }
                                        acc += self.weights[wbase + kr * kernel + kc]
                                            * x[xbase + rr as usize * inp.width + cc as usize];
                                    }
                                }
                            }
                            y[(o * inp.height + r) * inp.width + c] = acc;
                        }
                    }
                }
                y
            }
            LayerSpec::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            LayerSpec::MaxPool2 => {
                let mut y = vec![0.0; out.len()];
                for ch in 0..out.channels {
                    for r in 0..out.height {
                        for c in 0..out.width {
                            let (i, _) = pool_argmax(x, inp, ch, r, c);
                            y[(ch * out.height + r) * out.width + c] = x[i];
                        }
                    }
                }
                y
            }
            LayerSpec::Dense { out: n } => (0..n)
                .map(|o| {
                    let row = &self.weights[o * inp.len()..(o + 1) * inp.len()];
                    self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect(),
        }
    }

    /// Returns the input gradient; accumulates parameter gradients when asked.
    fn backward(&self, x: &[f64], dy: &[f64], grads: Option<(&mut [f64], &mut [f64])>) -> Vec<f64> {
        let inp = self.input;
        let out = self.output;
        let mut dx = vec![0.0; inp.len()];
        match self.spec {
            LayerSpec::Conv { kernel, .. } => {
                let pad = (kernel / 2) as isize;
                let (h, w) = (inp.height as isize, inp.width as isize);
                let mut grads = grads;
                for o in 0..out.channels {
                    for r in 0..inp.height {
                        for c in 0..inp.width {
                            let g = dy[(o * inp.height + r) * inp.width + c];
                            if g == 0.0 {
                                continue;
                            }
                            if let Some((_, db)) = grads.as_mut() {
                                db[o] += g;
                            }
                            for i in 0..inp.channels {
                                let wbase = (o * inp.channels + i) * kernel * kernel;
                                let xbase = i * inp.height * inp.width;
                                for kr in 0..kernel {
                                    let rr = r as isize + kr as isize - pad;
                                    if rr < 0 || rr >= h {
                                        continue;
                                    }
                                    for kc in 0..kernel {
                                        let cc = c as isize + kc as isize - pad;
                                        if cc < 0 || cc >= w {
                                            continue;
                                        }
                                        let xi = xbase + rr as usize * inp.width + cc as usize;
                                        let wi = wbase + kr * kernel + kc;
                                        dx[xi] += self.weights[wi] * g;
                                        if let Some((dw, _)) = grads.as_mut() {
                                            dw[wi] += x[xi] * g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerSpec::Relu => {
                for ((d, &v), &g) in dx.iter_mut().zip(x).zip(dy) {
                    if v > 0.0 {
                        *d = g;
                    }
                }
            }
            LayerSpec::MaxPool2 => {
                for ch in 0..out.channels {
                    for r in 0..out.height {
                        for c in 0..out.width {
                            let (i, _) = pool_argmax(x, inp, ch, r, c);
                            dx[i] += dy[(ch * out.height + r) * out.width + c];
                        }
                    }
                }
            }
            LayerSpec::Dense { out: n } => {
                let len = inp.len();
                let mut grads = grads;
                for (o, &g) in dy.iter().enumerate().take(n) {
                    let row = &self.weights[o * len..(o + 1) * len];
                    for (d, w) in dx.iter_mut().zip(row) {
                        *d += w * g;
                    }
                    if let Some((dw, db)) = grads.as_mut() {
                        db[o] += g;
                        for (dwi, v) in dw[o * len..(o + 1) * len].iter_mut().zip(x) {
                            *dwi += v * g;
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Index and value of the first maximum in a 2×2 window.
fn pool_argmax(x: &[f64], inp: InputShape, ch: usize, r: usize, c: usize) -> (usize, f64) {
    let base = ch * inp.height * inp.width;
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for dr in 0..2 {
        for dc in 0..2 {
            let i = base + (2 * r + dr) * inp.width + 2 * c + dc;
            if x[i] > best.1 || best.0 == usize::MAX {
                best = (i, x[i]);
            }
        }
    }
    best
}

/// Small feed-forward network producing `(female, male)` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactNet {
    input: InputShape,
    layers: Vec<Layer>,
}

const MAGIC: &[u8; 4] = b"SKCN";
const CHECKPOINT_VERSION: u32 = 1;

impl CompactNet {
    /// Builds the layer stack with He-uniform weights and zero biases.
    pub fn new(input: InputShape, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(input, specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let fan_in = layer.fan_in();
            if fan_in == 0 {
                continue;
            }
            let a = (6.0 / fan_in as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-a..a);
            }
        }
        Ok(net)
    }

    /// Same architecture with every parameter zero.
    pub fn zeros(input: InputShape, specs: &[LayerSpec]) -> Result<Self> {
        if input.is_empty() {
            return Err(ModelError::Architecture("empty input".into()));
        }
        let mut shape = input;
        let mut layers = Vec::with_capacity(specs.len());
        for &spec in specs {
            let layer = Layer::resolve(spec, shape)?;
            shape = layer.output;
            layers.push(layer);
        }
        if shape.len() != 2 {
            return Err(ModelError::Architecture(format!(
                "network must end in 2 logits, ends in {}",
                shape.len()
            )));
        }
        Ok(Self { input, layers })
    }

    /// Two conv blocks and a dense head.
    pub fn standard_specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv {
                out_channels: 6,
                kernel: 3,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2,
            LayerSpec::Conv {
                out_channels: 12,
                kernel: 3,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2,
            LayerSpec::Dense { out: 2 },
        ]
    }

    pub fn standard(channels: usize, side: usize, seed: u64) -> Result<Self> {
        Self::new(InputShape::square(channels, side), &Self::standard_specs(), seed)
    }

    /// A single dense layer from `input` to the two logits.
    pub fn linear(input: InputShape, weights: [Vec<f64>; 2], bias: [f64; 2]) -> Result<Self> {
        let mut net = Self::zeros(input, &[LayerSpec::Dense { out: 2 }])?;
        let n = input.len();
        if weights.iter().any(|w| w.len() != n) {
            return Err(ModelError::InputShape {
                expected: n,
                actual: weights[0].len().max(weights[1].len()),
            });
        }
        let layer = &mut net.layers[0];
        layer.weights[..n].copy_from_slice(&weights[0]);
        layer.weights[n..].copy_from_slice(&weights[1]);
        layer.bias.copy_from_slice(&bias);
        Ok(net)
    }

    pub fn input_shape(&self) -> InputShape {
        self.input
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Flattened parameters, layer by layer, weights before bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Zeroes the last layer, making both logits zero for every input.
    pub fn zero_output_layer(&mut self) {
        if let Some(l) = self.layers.last_mut() {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input.len() {
            return Err(ModelError::InputShape {
                expected: self.input.len(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Activations of every layer, starting with the input itself.
    pub(crate) fn forward_trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("nonempty"));
            acts.push(next);
        }
        Ok(acts)
    }

    pub fn logits(&self, x: &[f64]) -> Result<LogitVector> {
        let acts = self.forward_trace(x)?;
        let last = acts.last().expect("nonempty");
        Ok(LogitVector([last[0], last[1]]))
    }

    /// Back-propagates `dlogits` through a recorded trace. Parameter
    /// gradients are accumulated into `param_grads` (laid out like
    /// [`parameters`](Self::parameters)) when given.
    pub(crate) fn backward(
        &self,
        acts: &[Vec<f64>],
        dlogits: [f64; 2],
        mut param_grads: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.weights.len() + l.bias.len();
        }
        let mut grad = dlogits.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let pg = param_grads.as_deref_mut().map(|pg| {
                let nw = layer.weights.len();
                let (dw, db) =
                    pg[offsets[i]..offsets[i] + nw + layer.bias.len()].split_at_mut(nw);
                (dw, db)
            });
            grad = layer.backward(&acts[i], &grad, pg);
        }
        grad
    }

    /// Vector-Jacobian product `dlogitsᵀ · ∂logits/∂x`.
    pub fn input_gradient(&self, x: &[f64], dlogits: [f64; 2]) -> Result<Vec<f64>> {
        let acts = self.forward_trace(x)?;
        Ok(self.backward(&acts, dlogits, None))
    }

    /// Exact gradient of `objective ∘ logits` with respect to the input.
    pub fn gradient(&self, x: &[f64], objective: &dyn LogitObjective) -> Result<Vec<f64>> {
        let acts = self.forward_trace(x)?;
        let last = acts.last().expect("nonempty");
        let logits = LogitVector([last[0], last[1]]);
        Ok(self.backward(&acts, objective.grad(&logits), None))
    }

    /// Versioned little-endian checkpoint: magic, version, input shape,
    /// layer specs, then every parameter as f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        for d in [self.input.channels, self.input.height, self.input.width] {
            put_u32(&mut out, d as u32);
        }
        put_u32(&mut out, self.layers.len() as u32);
        for l in &self.layers {
            let (tag, a, b) = match l.spec {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                } => (0u8, out_channels, kernel),
                LayerSpec::Relu => (1, 0, 0),
                LayerSpec::MaxPool2 => (2, 0, 0),
                LayerSpec::Dense { out } => (3, out, 0),
            };
            out.push(tag);
            put_u32(&mut out, a as u32);
            put_u32(&mut out, b as u32);
        }
        let params = self.parameters();
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(ModelError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let input = InputShape::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let n_layers = r.u32()? as usize;
        let mut specs = Vec::with_capacity(n_layers.min(1024));
        for _ in 0..n_layers {
            let tag = r.take(1)?[0];
            let a = r.u32()? as usize;
            let b = r.u32()? as usize;
            specs.push(match tag {
                0 => LayerSpec::Conv {
                    out_channels: a,
                    kernel: b,
                },
                1 => LayerSpec::Relu,
                2 => LayerSpec::MaxPool2,
                3 => LayerSpec::Dense { out: a },
                t => return Err(ModelError::Checkpoint(format!("unknown layer tag {t}"))),
            });
        }
        let mut net = Self::zeros(input, &specs)?;
        let count = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
        if count != net.parameter_count() {
            return Err(ModelError::Checkpoint(format!(
                "checkpoint holds {count} parameters, architecture needs {}",
                net.parameter_count()
            )));
        }
        let params = (0..count)
            .map(|_| Ok(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"))))
            .collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(ModelError::Checkpoint("trailing bytes".into()));
        }
        net.set_parameters(&params)?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(ModelError::Checkpoint("truncated".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Resizes to the model's input grid and scales pixels to `[0, 1]`.
/// Single-channel models see BT.601 luma.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preprocessor {
    pub shape: InputShape,
}

impl Preprocessor {
    pub fn for_shape(shape: InputShape) -> Self {
        Self { shape }
    }

    pub fn apply(&self, img: &RasterImage) -> Vec<f64> {
        let (w, h) = (self.shape.width, self.shape.height);
        let resized;
        let img = if img.width() == w && img.height() == h {
            img
        } else {
            let buf = image::imageops::resize(
                &img.to_rgb8(),
                w as u32,
                h as u32,
                image::imageops::FilterType::Triangle,
            );
            resized = RasterImage::from_rgb8(&buf);
            &resized
        };
        let plane = w * h;
        let mut out = vec![0.0; self.shape.len()];
        for (i, &[r, g, b]) in img.pixels().iter().enumerate() {
            if self.shape.channels == 1 {
                out[i] = (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b))
                    / 255.0;
            } else {
                for (c, v) in [r, g, b].into_iter().enumerate().take(self.shape.channels) {
                    out[c * plane + i] = f64::from(v) / 255.0;
                }
            }
        }
        out
    }
}
