//! Pertinent-positive explanations.
//!
//! Given an input `X` that the model assigns to class `k`, find a small
//! nonnegative sub-input `Δ` (with `0 ≤ Δ ≤ X`, in normalized pixel space)
//! that on its own still yields class `k`:
//!
//! ```text
//! minimize  c · f_κ(Δ) + β‖Δ‖₁ + ‖Δ‖₂²
//! f_κ(Δ) = max( max_{k'≠k} logit_{k'}(Δ) − logit_k(Δ), −κ )
//! ```
//!
//! The smooth part `c · f_κ + ‖Δ‖₂²` is handled by gradient steps with
//! backtracking; the L1 term and the box are handled exactly by the prox,
//! which is soft thresholding followed by clipping to `[0, X]`. Iterations
//! use Nesterov momentum with a restart whenever the objective increases.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::imaging::RasterImage;
use crate::model::{CompactNet, Gender, InputShape, LogitVector, ModelError};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("model assigns the input to {actual}, not {expected}")]
    NotClassifiedK { expected: Gender, actual: Gender },
    #[error("objective became non-finite at iteration {0}")]
    Diverged(usize),
    #[error("group {0} has no converged explanation")]
    EmptyGroup(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("input value {value} at {index} outside [0, 1]")]
    OutOfBox { index: usize, value: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
}

pub type Result<T, E = ExplainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct CemParams {
    pub kappa: f64,
    pub beta: f64,
    pub c_grid: Vec<f64>,
    pub max_iters: usize,
    /// First trial step of the backtracking search.
    pub step_size: f64,
    /// Best-objective improvement below which a 20-iteration window counts
    /// as converged.
    pub tolerance: f64,
}

impl Default for CemParams {
    fn default() -> Self {
        Self {
            kappa: 10.0,
            beta: 0.1,
            c_grid: vec![0.1, 1.0, 10.0, 100.0],
            max_iters: 1000,
            step_size: 1.0,
            tolerance: 1e-7,
        }
    }
}

impl CemParams {
    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(ExplainError::InvalidParams(what.into()));
        if !(self.kappa >= 0.0) {
            return bad("kappa must be nonnegative");
        }
        if !(self.beta > 0.0) {
            return bad("beta must be positive");
        }
        if self.c_grid.is_empty() || self.c_grid.iter().any(|c| !(*c > 0.0)) {
            return bad("c_grid must be nonempty and positive");
        }
        if self.max_iters == 0 || !(self.step_size > 0.0) || !(self.tolerance > 0.0) {
            return bad("max_iters, step_size and tolerance must be positive");
        }
        Ok(())
    }
}

/// Window over which convergence is judged.
const WINDOW: usize = 20;

/// Hinge `max(max_{k'≠k} logit_{k'} − logit_k, −κ)`.
pub fn f_kappa(logits: &LogitVector, k: Gender, kappa: f64) -> f64 {
    (logits.get(k.other()) - logits.get(k)).max(-kappa)
}

pub fn soft_threshold(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

/// Minimizer of `½(z − v)² + λ|z|` over `z ∈ [0, upper]`.
pub fn prox_l1_box(v: f64, lambda: f64, upper: f64) -> f64 {
    soft_threshold(v, lambda).clamp(0.0, upper)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PertinentPositive {
    pub delta: Vec<f64>,
    pub achieved_f_kappa: f64,
    pub chosen_c: f64,
    pub objective: f64,
    /// Best objective seen after each iteration (index 0 is the start).
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl PertinentPositive {
    pub fn l1(&self) -> f64 {
        self.delta.iter().map(|d| d.abs()).sum()
    }

    pub fn support(&self) -> usize {
        self.delta.iter().filter(|&&d| d != 0.0).count()
    }

    /// Per-run diagnostics as `key value` lines.
    pub fn diagnostics(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "c {}", self.chosen_c);
        let _ = writeln!(s, "objective {}", self.objective);
        let _ = writeln!(s, "f_kappa {}", self.achieved_f_kappa);
        let _ = writeln!(s, "l1 {}", self.l1());
        let _ = writeln!(s, "support {}", self.support());
        let _ = writeln!(s, "iterations {}", self.iterations);
        let _ = writeln!(s, "converged {}", self.converged);
        s
    }
}

struct Problem<'a> {
    net: &'a CompactNet,
    upper: &'a [f64],
    k: Gender,
    kappa: f64,
    beta: f64,
    c: f64,
}

impl Problem<'_> {
    fn logits(&self, d: &[f64]) -> Result<LogitVector> {
        Ok(self.net.logits(d)?)
    }

    fn smooth(&self, d: &[f64], logits: &LogitVector) -> f64 {
        self.c * f_kappa(logits, self.k, self.kappa) + d.iter().map(|v| v * v).sum::<f64>()
    }

    fn objective(&self, d: &[f64], logits: &LogitVector) -> f64 {
        self.smooth(d, logits) + self.beta * d.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Gradient of the smooth part; the hinge contributes only while active.
    fn smooth_grad(&self, d: &[f64], logits: &LogitVector) -> Result<Vec<f64>> {
        let margin = logits.get(self.k.other()) - logits.get(self.k);
        let mut g = if margin > -self.kappa {
            let mut dl = [0.0; 2];
            dl[self.k.other().index()] = self.c;
            dl[self.k.index()] = -self.c;
            self.net.input_gradient(d, dl)?
        } else {
            vec![0.0; d.len()]
        };
        for (gi, di) in g.iter_mut().zip(d) {
            *gi += 2.0 * di;
        }
        Ok(g)
    }

    fn prox_step(&self, y: &[f64], grad: &[f64], step: f64) -> Vec<f64> {
        y.iter()
            .zip(grad)
            .zip(self.upper)
            .map(|((yi, gi), ui)| prox_l1_box(yi - step * gi, step * self.beta, *ui))
            .collect()
    }
}

fn support_of(d: &[f64]) -> Vec<bool> {
    d.iter().map(|&v| v != 0.0).collect()
}

/// Solves for a single `c`.
pub fn pertinent_positive(
    net: &CompactNet,
    x: &[f64],
    k: Gender,
    params: &CemParams,
    c: f64,
) -> Result<PertinentPositive> {
    params.validate()?;
    if !(c > 0.0) {
        return Err(ExplainError::InvalidParams("c must be positive".into()));
    }
    if let Some((index, &value)) = x
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(ExplainError::OutOfBox { index, value });
    }
    let actual = net.logits(x)?.argmax();
    if actual != k {
        return Err(ExplainError::NotClassifiedK { expected: k, actual });
    }
    let p = Problem {
        net,
        upper: x,
        k,
        kappa: params.kappa,
        beta: params.beta,
        c,
    };

    let mut cur = vec![0.0; x.len()];
    let mut cur_logits = p.logits(&cur)?;
    let mut cur_obj = p.objective(&cur, &cur_logits);
    let mut y = cur.clone();
    let mut t = 1.0f64;
    let mut step = params.step_size;
    let mut best = (cur_obj, cur.clone(), cur_logits);
    let mut trace = vec![cur_obj];
    let mut support = support_of(&cur);
    let mut support_stable = 0usize;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=params.max_iters {
        iterations = iter;
        let y_logits = p.logits(&y)?;
        let y_smooth = p.smooth(&y, &y_logits);
        let grad = p.smooth_grad(&y, &y_logits)?;
        if !y_smooth.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(ExplainError::Diverged(iter));
        }
        // backtracking on the quadratic upper model of the smooth part
        let (next, next_logits) = loop {
            let z = p.prox_step(&y, &grad, step);
            let z_logits = p.logits(&z)?;
            let diff: Vec<f64> = z.iter().zip(&y).map(|(a, b)| a - b).collect();
            let lin: f64 = grad.iter().zip(&diff).map(|(g, d)| g * d).sum();
            let quad: f64 = diff.iter().map(|d| d * d).sum::<f64>() / (2.0 * step);
            if p.smooth(&z, &z_logits) <= y_smooth + lin + quad + 1e-12 * y_smooth.abs()
                || step < 1e-14
            {
                break (z, z_logits);
            }
            step *= 0.5;
        };
        let next_obj = p.objective(&next, &next_logits);
        if !next_obj.is_finite() {
            return Err(ExplainError::Diverged(iter));
        }

        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        if next_obj > cur_obj {
            // restart momentum from the better of the two points
            t = 1.0;
            y = next.clone();
        } else {
            let beta = (t - 1.0) / t_next;
            y = next
                .iter()
                .zip(&cur)
                .map(|(n, c)| (n + beta * (n - c)).clamp(0.0, f64::INFINITY))
                .collect();
            t = t_next;
        }
        let moved = next
            .iter()
            .zip(&cur)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        cur = next;
        cur_logits = next_logits;
        cur_obj = next_obj;
        if cur_obj < best.0 {
            best = (cur_obj, cur.clone(), cur_logits);
        }
        trace.push(best.0);
        // allow the step to recover after a kink forced it down
        step = (step * 1.25).min(params.step_size);

        let new_support = support_of(&cur);
        if new_support == support {
            support_stable += 1;
        } else {
            support = new_support;
            support_stable = 0;
        }
        let window_gain = if trace.len() > WINDOW {
            trace[trace.len() - 1 - WINDOW] - best.0
        } else {
            f64::INFINITY
        };
        let saturated = f_kappa(&cur_logits, k, params.kappa) <= -params.kappa;
        if window_gain < params.tolerance
            || (saturated && support_stable >= WINDOW && moved < params.tolerance)
        {
            converged = true;
            break;
        }
    }

    let (objective, delta, logits) = best;
    Ok(PertinentPositive {
        achieved_f_kappa: f_kappa(&logits, k, params.kappa),
        delta,
        chosen_c: c,
        objective,
        objective_trace: trace,
        iterations,
        converged,
    })
}

/// Runs every `c` in the grid and keeps the sparsest (smallest L1) solution
/// that preserves class `k` (`f_κ < 0`). When no run preserves the class,
/// the run with the lowest `f_κ` is returned with `converged = false`.
pub fn search_c(
    net: &CompactNet,
    x: &[f64],
    k: Gender,
    params: &CemParams,
) -> Result<PertinentPositive> {
    params.validate()?;
    let mut runs = Vec::with_capacity(params.c_grid.len());
    for &c in &params.c_grid {
        runs.push(pertinent_positive(net, x, k, params, c)?);
    }
    let preserving = runs
        .iter()
        .filter(|r| r.achieved_f_kappa < 0.0)
        .min_by(|a, b| a.l1().total_cmp(&b.l1()));
    if let Some(best) = preserving {
        return Ok(best.clone());
    }
    let mut fallback = runs
        .into_iter()
        .min_by(|a, b| a.achieved_f_kappa.total_cmp(&b.achieved_f_kappa))
        .expect("grid is nonempty");
    fallback.converged = false;
    Ok(fallback)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AverageMask {
    pub group: String,
    pub mean: Vec<f64>,
    pub count: usize,
}

/// Elementwise mean over the converged explanations of one group.
pub fn average_mask(group: &str, explanations: &[PertinentPositive]) -> Result<AverageMask> {
    let members: Vec<&PertinentPositive> = explanations.iter().filter(|e| e.converged).collect();
    let Some(first) = members.first() else {
        return Err(ExplainError::EmptyGroup(group.to_string()));
    };
    let mut mean = vec![0.0; first.delta.len()];
    for e in &members {
        if e.delta.len() != mean.len() {
            return Err(ExplainError::InvalidParams(
                "explanations differ in size".into(),
            ));
        }
        for (m, d) in mean.iter_mut().zip(&e.delta) {
            *m += d;
        }
    }
    let n = members.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(AverageMask {
        group: group.to_string(),
        mean,
        count: members.len(),
    })
}

/// Renders a `[0, 1]` grid as an 8-bit image (grayscale for one channel).
pub fn delta_to_image(delta: &[f64], shape: InputShape) -> Result<RasterImage> {
    let plane = shape.height * shape.width;
    let to8 = |v: f64| crate::imaging::quantize(v * 255.0);
    let pixels = (0..plane)
        .map(|i| match shape.channels {
            1 => [to8(delta[i]); 3],
            _ => [
                to8(delta[i]),
                to8(delta[plane + i]),
                to8(delta[2 * plane + i]),
            ],
        })
        .collect();
    Ok(RasterImage::new(shape.width, shape.height, pixels)?)
}

/// Writes `<stem>.png`, the raw values as `<stem>.txt` and, for single
/// explanations, `<stem>.diag.txt`.
pub fn export_delta(
    dir: impl AsRef<Path>,
    stem: &str,
    delta: &[f64],
    shape: InputShape,
    diagnostics: Option<&str>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    delta_to_image(delta, shape)?.save(dir.join(format!("{stem}.png")))?;
    let mut raw = format!(
        "# channels {} height {} width {}\n",
        shape.channels, shape.height, shape.width
    );
    for row in delta.chunks(shape.width) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        raw.push_str(&line.join(" "));
        raw.push('\n');
    }
    fs::write(dir.join(format!("{stem}.txt")), raw)?;
    if let Some(diag) = diagnostics {
        fs::write(dir.join(format!("{stem}.diag.txt")), diag)?;
    }
    Ok(())
}
