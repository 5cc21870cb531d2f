//! Stability of classifier scores under skin-type changes.
//!
//! For each image the original score is compared with the mean score over a
//! lighten or darken ensemble. The per-image difference `avg_new - original`
//! feeds a stability fraction, a one-sample t interval on the mean
//! difference, and counts of decisions that cross 0.5.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::imaging::{rgb_to_ycrcb, ycrcb_to_rgb, RasterImage, SkinMask};
use crate::model::{Classifier, Gender, GenderScore, ModelError};
use crate::transform::{build_ensemble, Direction, EnsembleConfig, Method, TransformError};

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("no records")]
    EmptyInput,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("record {0} has no ground-truth gender")]
    MissingLabel(String),
    #[error("record {0} has no ensemble scores")]
    EmptyEnsemble(String),
    #[error("confidence level {0} not in (0, 1)")]
    InvalidLevel(f64),
    #[error("scoring {id}: {source}")]
    Classifier { id: String, source: ModelError },
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = StabilityError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub image_id: String,
    pub gender: Option<Gender>,
    pub original_score: GenderScore,
    pub ensemble_scores: Vec<GenderScore>,
    pub avg_new_score: f64,
    pub diff: f64,
}

impl ScoreRecord {
    pub fn new(
        image_id: impl Into<String>,
        gender: Option<Gender>,
        original_score: GenderScore,
        ensemble_scores: Vec<GenderScore>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        if ensemble_scores.is_empty() {
            return Err(StabilityError::EmptyEnsemble(image_id));
        }
        // pivoting on the first score keeps constant ensembles exact
        let pivot = ensemble_scores[0].value();
        let avg_new_score = pivot
            + ensemble_scores.iter().map(|s| s.value() - pivot).sum::<f64>()
                / ensemble_scores.len() as f64;
        Ok(Self {
            image_id,
            gender,
            original_score,
            diff: avg_new_score - original_score.value(),
            ensemble_scores,
            avg_new_score,
        })
    }
}

/// One image to audit: the original RGB image and its skin mask.
#[derive(Debug, Clone)]
pub struct StabilityInput {
    pub id: String,
    pub image: RasterImage,
    pub mask: SkinMask,
    pub gender: Option<Gender>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exclusion {
    pub image_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct StabilityRun {
    /// Sorted by image id.
    pub records: Vec<ScoreRecord>,
    pub excluded: Vec<Exclusion>,
}

enum Outcome {
    Record(ScoreRecord),
    Excluded(Exclusion),
}

fn score_one<C: Classifier + ?Sized>(
    classifier: &C,
    input: &StabilityInput,
    direction: Direction,
    method: Method,
    config: &EnsembleConfig,
) -> Result<Outcome> {
    let exclude = |reason: String| {
        Ok(Outcome::Excluded(Exclusion {
            image_id: input.id.clone(),
            reason,
        }))
    };
    let classify = |img: &RasterImage| {
        classifier
            .score(img)
            .map_err(|source| StabilityError::Classifier {
                id: input.id.clone(),
                source,
            })
    };
    let original = match classify(&input.image) {
        Ok(s) => s,
        Err(StabilityError::Classifier {
            source: ModelError::NoFace,
            ..
        }) => return exclude("no face".into()),
        Err(e) => return Err(e),
    };
    let ycc = rgb_to_ycrcb(&input.image);
    let ensemble = match build_ensemble(&ycc, &input.mask, direction, method, config) {
        Ok(e) => e,
        Err(e @ (TransformError::EmptyEnsemble(_) | TransformError::EmptyMask)) => {
            return exclude(e.to_string())
        }
        Err(e) => return Err(e.into()),
    };
    let mut scores = Vec::with_capacity(ensemble.members.len());
    for m in &ensemble.members {
        match classify(&ycrcb_to_rgb(&m.image)) {
            Ok(s) => scores.push(s),
            Err(StabilityError::Classifier {
                source: ModelError::NoFace,
                ..
            }) => {}
            Err(e) => return Err(e),
        }
    }
    if scores.is_empty() {
        return exclude("no face in any ensemble member".into());
    }
    Ok(Outcome::Record(ScoreRecord::new(
        input.id.clone(),
        input.gender,
        original,
        scores,
    )?))
}

/// Scores every image and its ensemble. Images the classifier finds no face
/// in, or that admit no ensemble member, are excluded and listed. Work is
/// spread over up to `threads` scoped threads; output order is by image id
/// regardless.
pub fn run_stability<C: Classifier + ?Sized>(
    classifier: &C,
    inputs: &[StabilityInput],
    direction: Direction,
    method: Method,
    config: &EnsembleConfig,
    threads: usize,
) -> Result<StabilityRun> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<Outcome>)>> = Mutex::new(Vec::new());
    let workers = threads.clamp(1, inputs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= inputs.len() {
                    break;
                }
                let r = score_one(classifier, &inputs[i], direction, method, config);
                results.lock().unwrap_or_else(|e| e.into_inner()).push((i, r));
            });
        }
    });
    let mut results = results.into_inner().unwrap_or_else(|e| e.into_inner());
    results.sort_by_key(|(i, _)| *i);
    let mut run = StabilityRun::default();
    for (_, r) in results {
        match r? {
            Outcome::Record(rec) => run.records.push(rec),
            Outcome::Excluded(ex) => run.excluded.push(ex),
        }
    }
    run.records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    run.excluded.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(run)
}

/// Fraction of records with `|diff| <= threshold`.
pub fn stability_fraction(records: &[ScoreRecord], threshold: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(StabilityError::EmptyInput);
    }
    let stable = records.iter().filter(|r| r.diff.abs() <= threshold).count();
    Ok(stable as f64 / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub n: usize,
    pub mean: f64,
    pub stddev: f64,
}

/// Two-sided t quantile `t_{(1+level)/2, df}`.
pub fn t_quantile(level: f64, df: usize) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(StabilityError::InvalidLevel(level));
    }
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|_| StabilityError::TooFewSamples(df + 1))?;
    Ok(dist.inverse_cdf((1.0 + level) / 2.0))
}

/// `mean ± t · s / √n` with the sample (n − 1) standard deviation.
pub fn one_sample_t_ci(diffs: &[f64], level: f64) -> Result<ConfidenceInterval> {
    let n = diffs.len();
    if n < 2 {
        return Err(StabilityError::TooFewSamples(n));
    }
    // shifted by the first sample so constant data yields that value exactly
    let pivot = diffs[0];
    let mean = pivot + diffs.iter().map(|d| d - pivot).sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let stddev = var.sqrt();
    let t = t_quantile(level, n - 1)?;
    let half = t * stddev / (n as f64).sqrt();
    Ok(ConfidenceInterval {
        lo: mean - half,
        hi: mean + half,
        level,
        n,
        mean,
        stddev,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlipCounts {
    pub direction: Direction,
    pub n: usize,
    /// Misclassified originally, correct after averaging over the ensemble.
    pub to_correct: usize,
    /// Correct originally, misclassified after averaging.
    pub to_incorrect: usize,
}

pub fn decision_flips(records: &[ScoreRecord], direction: Direction) -> Result<FlipCounts> {
    let mut flips = FlipCounts {
        direction,
        n: records.len(),
        to_correct: 0,
        to_incorrect: 0,
    };
    for r in records {
        let truth = r
            .gender
            .ok_or_else(|| StabilityError::MissingLabel(r.image_id.clone()))?;
        let before = r.original_score.decision() == truth;
        let after = (r.avg_new_score > 0.5) == (truth == Gender::Male);
        match (before, after) {
            (false, true) => flips.to_correct += 1,
            (true, false) => flips.to_incorrect += 1,
            _ => {}
        }
    }
    Ok(flips)
}

/// Equal-width histogram of diffs over `[-1, 1]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffHistogram {
    pub counts: Vec<u64>,
}

impl DiffHistogram {
    pub fn new(diffs: impl IntoIterator<Item = f64>, bins: usize) -> Self {
        let bins = bins.max(1);
        let mut counts = vec![0; bins];
        for d in diffs {
            let i = ((d + 1.0) / 2.0 * bins as f64).floor();
            let i = (i.max(0.0) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Self { counts }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn edges(&self, i: usize) -> (f64, f64) {
        let w = 2.0 / self.bins() as f64;
        (-1.0 + i as f64 * w, -1.0 + (i + 1) as f64 * w)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportConfig {
    pub threshold: f64,
    pub level: f64,
    pub bins: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            level: 0.95,
            bins: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub group: String,
    pub direction: Direction,
    pub method: Method,
    pub records: Vec<ScoreRecord>,
    pub excluded: usize,
    pub threshold: f64,
    pub fraction_stable: f64,
    /// `None` when fewer than two records remain.
    pub ci: Option<ConfidenceInterval>,
    pub flips: FlipCounts,
    pub histogram: DiffHistogram,
}

impl StabilityReport {
    pub fn build(
        group: impl Into<String>,
        direction: Direction,
        method: Method,
        mut records: Vec<ScoreRecord>,
        excluded: usize,
        config: &ReportConfig,
    ) -> Result<Self> {
        records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let fraction_stable = stability_fraction(&records, config.threshold)?;
        let diffs: Vec<f64> = records.iter().map(|r| r.diff).collect();
        let ci = match one_sample_t_ci(&diffs, config.level) {
            Ok(ci) => Some(ci),
            Err(StabilityError::TooFewSamples(_)) => None,
            Err(e) => return Err(e),
        };
        let flips = decision_flips(&records, direction)?;
        let histogram = DiffHistogram::new(diffs, config.bins);
        Ok(Self {
            group: group.into(),
            direction,
            method,
            records,
            excluded,
            threshold: config.threshold,
            fraction_stable,
            ci,
            flips,
            histogram,
        })
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    /// `key value` lines; numbers carry 6 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} {v}");
        };
        kv("group", self.group.clone());
        kv("direction", self.direction.as_str().into());
        kv("method", self.method.as_str().into());
        kv("n", self.n().to_string());
        kv("excluded", self.excluded.to_string());
        kv("threshold", sig6(self.threshold));
        kv("fraction_stable", sig6(self.fraction_stable));
        match &self.ci {
            Some(ci) => {
                kv("ci_level", sig6(ci.level));
                kv("mean_diff", sig6(ci.mean));
                kv("sd_diff", sig6(ci.stddev));
                kv("ci_lo", sig6(ci.lo));
                kv("ci_hi", sig6(ci.hi));
            }
            None => {
                kv("ci_lo", "NA".into());
                kv("ci_hi", "NA".into());
            }
        }
        kv("flips_to_correct", self.flips.to_correct.to_string());
        kv("flips_to_incorrect", self.flips.to_incorrect.to_string());
        s
    }

    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.histogram.counts.iter().enumerate() {
            let (lo, hi) = self.histogram.edges(i);
            let _ = writeln!(s, "{},{},{c}", sig6(lo), sig6(hi));
        }
        s
    }

    pub fn scatter_csv(&self) -> String {
        let mut s = String::from("image_id,original,avg_new\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{}",
                r.image_id,
                sig6(r.original_score.value()),
                sig6(r.avg_new_score)
            );
        }
        s
    }

    /// Raw per-image scores, full precision, one row per record.
    pub fn records_csv(&self) -> String {
        let mut s = String::from("image_id,gender,original,ensemble_scores\n");
        for r in &self.records {
            let scores: Vec<String> = r
                .ensemble_scores
                .iter()
                .map(|v| format!("{:?}", v.value()))
                .collect();
            let _ = writeln!(
                s,
                "{},{},{:?},{}",
                r.image_id,
                r.gender.map_or("", |g| g.as_str()),
                r.original_score.value(),
                scores.join(";")
            );
        }
        s
    }
}

/// Writes `hist_<group>.csv` and `scatter_<group>.csv` into `dir`.
pub fn export_plot_data(report: &StabilityReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join(format!("hist_{}.csv", report.group)),
        report.histogram_csv(),
    )?;
    fs::write(
        dir.join(format!("scatter_{}.csv", report.group)),
        report.scatter_csv(),
    )?;
    Ok(())
}

/// Formats with 6 significant digits, `%g` style.
pub fn sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        trim_zeros(&fixed)
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(v: f64) -> GenderScore {
        GenderScore::new(v).unwrap()
    }

    fn rec(id: &str, g: Gender, original: f64, new: f64) -> ScoreRecord {
        ScoreRecord::new(id, Some(g), score(original), vec![score(new)]).unwrap()
    }

    fn with_diffs(diffs: &[f64]) -> Vec<ScoreRecord> {
        diffs
            .iter()
            .enumerate()
            .map(|(i, d)| rec(&format!("{i}"), Gender::Female, 0.5, 0.5 + d))
            .collect()
    }

    #[test]
    fn record_arithmetic() {
        let r = ScoreRecord::new("a", None, score(0.5), vec![score(0.2), score(0.4)]).unwrap();
        assert!((r.avg_new_score - 0.3).abs() < 1e-15);
        assert!((r.diff + 0.2).abs() < 1e-15);
        assert!(ScoreRecord::new("a", None, score(0.5), vec![]).is_err());
    }

    #[test]
    fn fraction_examples() {
        let recs = with_diffs(&[0.05, 0.2, -0.01]);
        assert!((stability_fraction(&recs, 0.1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(stability_fraction(&recs, 1.0).unwrap(), 1.0);
        assert!(matches!(
            stability_fraction(&[], 0.1),
            Err(StabilityError::EmptyInput)
        ));
    }

    #[test]
    fn ci_examples() {
        let ci = one_sample_t_ci(&[0.05; 6], 0.95).unwrap();
        assert_eq!((ci.lo, ci.hi), (0.05, 0.05));
        let ci = one_sample_t_ci(&[0.1, -0.1, 0.1, -0.1], 0.95).unwrap();
        assert!(ci.mean.abs() < 1e-15);
        assert!((ci.hi - 0.18372).abs() < 1e-4);
        assert!((ci.lo + ci.hi).abs() < 1e-15);
        assert!(matches!(
            one_sample_t_ci(&[1.0], 0.95),
            Err(StabilityError::TooFewSamples(1))
        ));
        assert!(one_sample_t_ci(&[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn flip_definitions() {
        let recs = [
            rec("a", Gender::Female, 0.8, 0.4),
            rec("b", Gender::Female, 0.4, 0.45),
            rec("c", Gender::Female, 0.3, 0.7),
            rec("d", Gender::Male, 0.3, 0.7),
            rec("e", Gender::Male, 0.9, 0.5),
        ];
        let f = decision_flips(&recs, Direction::Lighten).unwrap();
        assert_eq!((f.to_correct, f.to_incorrect, f.n), (2, 2, 5));
        let mut unlabeled = recs.to_vec();
        unlabeled[1].gender = None;
        assert!(matches!(
            decision_flips(&unlabeled, Direction::Lighten),
            Err(StabilityError::MissingLabel(id)) if id == "b"
        ));
    }

    #[test]
    fn histogram_bins() {
        let h = DiffHistogram::new([0.0], 20);
        assert_eq!(h.counts[10], 1);
        assert_eq!(h.total(), 1);
        let h = DiffHistogram::new([-1.0, 1.0, 0.999, -0.95], 20);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[19], 2);
        let (lo, hi) = h.edges(10);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.1).abs() < 1e-12);
    }

    #[test]
    fn sig6_format() {
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(0.1), "0.1");
        assert_eq!(sig6(2.0 / 3.0), "0.666667");
        assert_eq!(sig6(-0.18371173), "-0.183712");
        assert_eq!(sig6(123456789.0), "1.23457e8");
        assert_eq!(sig6(1.5e-7), "1.5e-7");
        assert_eq!(sig6(40.0), "40");
        assert_eq!(sig6(0.999_999_7), "1");
    }

    #[test]
    fn report_text_layout() {
        let recs = with_diffs(&[0.05, 0.2, -0.01]);
        let rep = StabilityReport::build(
            "DF",
            Direction::Lighten,
            Method::ModeShift,
            recs,
            1,
            &ReportConfig::default(),
        )
        .unwrap();
        let text = rep.to_text();
        assert!(text.starts_with("group DF\ndirection lighten\nmethod mode-shift\nn 3\nexcluded 1\n"));
        assert!(text.contains("fraction_stable 0.666667\n"));
        assert_eq!(rep.scatter_csv().lines().nth(1), Some("0,0.5,0.55"));
    }
}
