//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skintone_audit::explain::{f_kappa, CemParams};
use skintone_audit::imaging::{
    detect_skin, rgb_to_ycrcb, skin_luminance_histogram, RasterImage, SkinRule,
};
use skintone_audit::model::{
    Classifier, CompactNet, Gender, GenderScore, InputShape, ModelError,
};

// ---------------------------------------------------------------------------
// stub classifiers

/// Ignores pixel values entirely.
pub struct ConstantClassifier(pub f64);

impl Classifier for ConstantClassifier {
    fn score(&self, _: &RasterImage) -> Result<GenderScore, ModelError> {
        GenderScore::new(self.0)
    }
}

/// Mean skin luminance / 255; NoFace when no skin is found.
pub struct SkinBrightness;

impl Classifier for SkinBrightness {
    fn score(&self, img: &RasterImage) -> Result<GenderScore, ModelError> {
        let ycc = rgb_to_ycrcb(img);
        let mask = detect_skin(&ycc, &SkinRule::default());
        let hist = skin_luminance_histogram(&ycc, &mask).map_err(|_| ModelError::NoFace)?;
        GenderScore::new(hist.mean().unwrap_or(0.0) / 255.0)
    }
}

// ---------------------------------------------------------------------------
// stub HTTP service

pub struct StubServer {
    pub endpoint: String,
    pub hits: Arc<AtomicUsize>,
}

/// Serves `reply(request_index, body) -> (status, body)` on a local port.
pub fn stub_server<F>(reply: F) -> StubServer
where
    F: Fn(usize, &str) -> (u16, String) + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}/score", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let reply = Arc::new(reply);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let counter = counter.clone();
            let reply = reply.clone();
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
                let mut body = vec![0; len];
                let _ = reader.read_exact(&mut body);
                let i = counter.fetch_add(1, Ordering::SeqCst);
                let (status, text) = reply(i, &String::from_utf8_lossy(&body));
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}",
                    text.len()
                );
            });
        }
    });
    StubServer { endpoint, hits }
}

// ---------------------------------------------------------------------------
// t intervals

/// Two-sided 95% Student t quantiles t_{0.975, df}, df = 1..=26.
pub const T975: [f64; 26] = [
    12.706204736432095,
    4.302652729696142,
    3.182446305284263,
    2.7764451051977987,
    2.570581835636314,
    2.4469118511449692,
    2.3646242515927844,
    2.306004135204166,
    2.2621571628540993,
    2.2281388519649385,
    2.200985160082949,
    2.1788128296634177,
    2.1603686564610127,
    2.1447866879169273,
    2.131449545559323,
    2.1199052992210112,
    2.1098155778331806,
    2.10092204024096,
    2.093024054408263,
    2.0859634472658364,
    2.079613844727662,
    2.0738730679040147,
    2.0686576104190406,
    2.0638985616280205,
    2.059538552753294,
    2.055529438642871,
];
pub const T975_DF49: f64 = 2.0095752371292397;

pub fn t975(df: usize) -> f64 {
    match df {
        1..=26 => T975[df - 1],
        49 => T975_DF49,
        _ => panic!("df {df} not tabulated"),
    }
}

/// Textbook interval: mean ± t·s/√n with the (n − 1) sample deviation.
pub fn naive_ci95(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let hw = t975(x.len() - 1) * var.sqrt() / n.sqrt();
    (mean - hw, mean + hw)
}

// ---------------------------------------------------------------------------
// transport

/// Largest-remainder rounding of integer masses to `n` units, ties to the
/// lower level; all arithmetic exact.
pub fn rounded_target(masses: &[u64; 256], n: u64) -> [u64; 256] {
    let total: u64 = masses.iter().sum();
    let mut counts = [0u64; 256];
    let mut rems = Vec::new();
    for (y, &m) in masses.iter().enumerate() {
        let p = u128::from(n) * u128::from(m);
        counts[y] = (p / u128::from(total)) as u64;
        rems.push((p % u128::from(total), y));
    }
    let short = n - counts.iter().sum::<u64>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, y) in rems.iter().take(short as usize) {
        counts[y] += 1;
    }
    counts
}

/// Minimum of Σ (src_i − tgt_σ(i))² over all permutations σ.
pub fn brute_force_cost(src: &[u8], tgt: &[u8]) -> u64 {
    fn go(i: usize, src: &[u8], tgt: &[u8], used: &mut [bool], acc: u64, best: &mut u64) {
        if acc >= *best {
            return;
        }
        if i == src.len() {
            *best = acc;
            return;
        }
        for j in 0..tgt.len() {
            if !used[j] && (j == 0 || tgt[j] != tgt[j - 1] || used[j - 1]) {
                used[j] = true;
                let d = i64::from(src[i]) - i64::from(tgt[j]);
                go(i + 1, src, tgt, used, acc + (d * d) as u64, best);
                used[j] = false;
            }
        }
    }
    let mut tgt = tgt.to_vec();
    tgt.sort_unstable();
    let mut best = u64::MAX;
    go(0, src, &tgt, &mut vec![false; tgt.len()], 0, &mut best);
    best
}

// ---------------------------------------------------------------------------
// CEM on two-feature linear models

pub struct Instance {
    pub net: CompactNet,
    pub x: [f64; 2],
    pub k: Gender,
    pub c: f64,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    loop {
        let w = [
            vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
            vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
        ];
        let b = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let net = CompactNet::linear(InputShape::flat(2), w, b).unwrap();
        let x = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let l = net.logits(&x).unwrap();
        if (l.male() - l.female()).abs() < 1e-6 {
            continue;
        }
        let c = [0.1, 1.0, 10.0, 100.0][rng.random_range(0..4usize)];
        return Instance {
            k: l.argmax(),
            net,
            x,
            c,
        };
    }
}

pub fn instances(seed: u64, n: usize) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_instance(&mut rng)).collect()
}

pub fn objective(inst: &Instance, d: &[f64], p: &CemParams) -> f64 {
    let l = inst.net.logits(d).unwrap();
    inst.c * f_kappa(&l, inst.k, p.kappa)
        + p.beta * d.iter().map(|v| v.abs()).sum::<f64>()
        + d.iter().map(|v| v * v).sum::<f64>()
}

/// Minimum over a 41×41 lattice of the feasible box.
pub fn grid_oracle(inst: &Instance, p: &CemParams) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..=40 {
        for j in 0..=40 {
            let d = [inst.x[0] * i as f64 / 40.0, inst.x[1] * j as f64 / 40.0];
            best = best.min(objective(inst, &d, p));
        }
    }
    best
}

/// Dense scalar search for `argmin ½(z − v)² + λ|z|` over `[0, upper]`.
///
/// `h(a) − h(b)` is evaluated in the factored form
/// `(a − b)(½(a + b) − v + λ)` (valid for `a, b ≥ 0`) so comparisons stay
/// exact near the flat minimum.
pub fn scalar_prox_oracle(v: f64, lambda: f64, upper: f64) -> f64 {
    let less = |a: f64, b: f64| (a - b) * (0.5 * (a + b) - v + lambda) < 0.0;
    let n = 20_000;
    let step = upper / n as f64;
    let mut best = 0.0;
    for i in 1..=n {
        let z = step * i as f64;
        if less(z, best) {
            best = z;
        }
    }
    let (mut lo, mut hi) = ((best - step).max(0.0), (best + step).min(upper));
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if less(m2, m1) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    (lo + hi) / 2.0
}

// ---------------------------------------------------------------------------
// gradients

use skintone_audit::model::{LayerSpec, LogitObjective};

/// A small network of random architecture with a random input in [0, 1].
pub fn random_net(rng: &mut ChaCha8Rng) -> (CompactNet, Vec<f64>) {
    let channels = [1, 3][rng.random_range(0..2usize)];
    let side = [4, 6, 8][rng.random_range(0..3usize)];
    let k = [1, 3, 5][rng.random_range(0..3usize)];
    let hidden = rng.random_range(2..6usize);
    let specs = match rng.random_range(0..4u8) {
        0 => CompactNet::standard_specs(),
        1 => vec![
            LayerSpec::Conv { out_channels: hidden, kernel: k },
            LayerSpec::Relu,
            LayerSpec::Dense { out: 2 },
        ],
        2 => vec![
            LayerSpec::Conv { out_channels: hidden, kernel: k },
            LayerSpec::MaxPool2,
            LayerSpec::Dense { out: hidden },
            LayerSpec::Relu,
            LayerSpec::Dense { out: 2 },
        ],
        _ => vec![LayerSpec::Dense { out: hidden }, LayerSpec::Relu, LayerSpec::Dense { out: 2 }],
    };
    let net = CompactNet::new(InputShape::square(channels, side), &specs, rng.random()).unwrap();
    let x = (0..net.input_shape().len()).map(|_| rng.random_range(0.0..1.0)).collect();
    (net, x)
}

/// ‖analytic − central difference‖₂ / ‖central difference‖₂ with step `h`.
pub fn gradient_rel_error(net: &CompactNet, x: &[f64], obj: &dyn LogitObjective, h: f64) -> f64 {
    let analytic = net.gradient(x, obj).unwrap();
    let mut num = 0.0;
    let mut den = 0.0;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let hi = obj.value(&net.logits(&probe).unwrap());
        probe[i] = x[i] - h;
        let lo = obj.value(&net.logits(&probe).unwrap());
        probe[i] = x[i];
        let fd = (hi - lo) / (2.0 * h);
        num += (analytic[i] - fd).powi(2);
        den += fd * fd;
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}
