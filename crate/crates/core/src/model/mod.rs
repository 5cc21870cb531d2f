//! Score semantics, the classifier abstraction and its two backends.
//!
//! A classifier answers with a [`GenderScore`] `s ∈ [0, 1]`, the probability
//! that the face is male; `s > 0.5` decides male. The built-in
//! [`CompactNet`] produces two logits `(female, male)` and its score is the
//! softmax male component, i.e. the logistic of the male-minus-female gap.

mod net;
mod remote;
mod train;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::RasterImage;

pub use net::{CompactNet, InputShape, LayerSpec, Preprocessor};
pub use remote::{RemoteClassifier, RemoteConfig, ENDPOINT_ENV};
pub use train::{cross_entropy, fit, train, TrainConfig, TrainSummary};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("no face detected")]
    NoFace,
    #[error("input has {actual} values, model expects {expected}")]
    InputShape { expected: usize, actual: usize },
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed reply: {0}")]
    MalformedReply(String),
    #[error("training data holds a single class")]
    DegenerateData,
    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Binary gender label; the discriminant is the logit index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female = 0,
    Male = 1,
}

impl Gender {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> Gender {
        match self {
            Gender::Female => Gender::Male,
            Gender::Male => Gender::Female,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Probability that the face is male.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct GenderScore(f64);

impl GenderScore {
    pub fn new(s: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&s) {
            Ok(Self(s))
        } else {
            Err(ModelError::InvalidScore(s))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn decision(self) -> Gender {
        if self.0 > 0.5 {
            Gender::Male
        } else {
            Gender::Female
        }
    }

    pub fn is_male(self) -> bool {
        self.decision() == Gender::Male
    }
}

impl TryFrom<f64> for GenderScore {
    type Error = ModelError;

    fn try_from(s: f64) -> Result<Self> {
        Self::new(s)
    }
}

impl From<GenderScore> for f64 {
    fn from(s: GenderScore) -> f64 {
        s.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitVector(pub [f64; 2]);

impl LogitVector {
    pub fn female(&self) -> f64 {
        self.0[0]
    }

    pub fn male(&self) -> f64 {
        self.0[1]
    }

    pub fn get(&self, class: Gender) -> f64 {
        self.0[class.index()]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn argmax(&self) -> Gender {
        if self.male() > self.female() {
            Gender::Male
        } else {
            Gender::Female
        }
    }

    /// Softmax male component.
    pub fn score(&self) -> GenderScore {
        let gap = self.male() - self.female();
        let s = if gap >= 0.0 {
            1.0 / (1.0 + (-gap).exp())
        } else {
            let e = gap.exp();
            e / (1.0 + e)
        };
        GenderScore(s)
    }
}

/// Anything that scores a face image.
pub trait Classifier: Sync {
    fn score(&self, img: &RasterImage) -> Result<GenderScore>;
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn score(&self, img: &RasterImage) -> Result<GenderScore> {
        (**self).score(img)
    }
}

impl<C: Classifier + ?Sized> Classifier for Box<C> {
    fn score(&self, img: &RasterImage) -> Result<GenderScore> {
        (**self).score(img)
    }
}

/// Scalar function of the logits with a known derivative.
pub trait LogitObjective {
    fn value(&self, logits: &LogitVector) -> f64;
    fn grad(&self, logits: &LogitVector) -> [f64; 2];
}

/// Picks one logit.
pub struct ClassLogit(pub Gender);

impl LogitObjective for ClassLogit {
    fn value(&self, l: &LogitVector) -> f64 {
        l.get(self.0)
    }

    fn grad(&self, _: &LogitVector) -> [f64; 2] {
        let mut g = [0.0; 2];
        g[self.0.index()] = 1.0;
        g
    }
}

pub struct ConstantObjective(pub f64);

impl LogitObjective for ConstantObjective {
    fn value(&self, _: &LogitVector) -> f64 {
        self.0
    }

    fn grad(&self, _: &LogitVector) -> [f64; 2] {
        [0.0; 2]
    }
}

/// `w · logits` for fixed weights.
pub struct LinearObjective(pub [f64; 2]);

impl LogitObjective for LinearObjective {
    fn value(&self, l: &LogitVector) -> f64 {
        self.0[0] * l.0[0] + self.0[1] * l.0[1]
    }

    fn grad(&self, _: &LogitVector) -> [f64; 2] {
        self.0
    }
}

/// Log-probability of the male class; smooth in both logits.
pub struct MaleLogProb;

impl LogitObjective for MaleLogProb {
    fn value(&self, l: &LogitVector) -> f64 {
        l.score().value().ln()
    }

    fn grad(&self, l: &LogitVector) -> [f64; 2] {
        let s = l.score().value();
        [-(1.0 - s), 1.0 - s]
    }
}

/// A [`CompactNet`] behind its preprocessor.
#[derive(Debug, Clone)]
pub struct NetClassifier {
    pub net: CompactNet,
    pub preprocessor: Preprocessor,
}

impl NetClassifier {
    pub fn new(net: CompactNet) -> Self {
        let preprocessor = Preprocessor::for_shape(net.input_shape());
        Self { net, preprocessor }
    }
}

impl Classifier for NetClassifier {
    fn score(&self, img: &RasterImage) -> Result<GenderScore> {
        let x = self.preprocessor.apply(img);
        Ok(self.net.logits(&x)?.score())
    }
}
