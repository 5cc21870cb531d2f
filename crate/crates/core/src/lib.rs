//! Skin-tone stability auditing for face gender classifiers.
//!
//! The crate is organized around the audit workflow:
//!
//! * [`imaging`]: RGB and YCrCb grids, chrominance skin detection, luminance
//!   histograms and face crops.
//! * [`transform`]: luminance mode-shift and 1-D optimal transport of the
//!   skin luminance distribution, plus lighten/darken ensembles.
//! * [`model`]: the [`model::Classifier`] abstraction, a small
//!   differentiable CNN with exact input gradients, and a remote scoring
//!   client.
//! * [`stability`]: ensemble score differences, stability fractions,
//!   one-sample t intervals and decision flips.
//! * [`explain`]: pertinent-positive explanations via accelerated proximal
//!   gradient on the elastic-net objective.
//! * [`audit`]: manifests and intersectional accuracy tables.
//! * [`synthetic`]: seeded cartoon faces and reference palettes for demos
//!   and tests.
//! * [`cli`]: the `skin-audit` command-line surface.

pub mod imaging;
pub mod transform;
pub mod model;
pub mod stability;
pub mod explain;
pub mod audit;
pub mod synthetic;
pub mod cli;

/// Union of the module errors, used where workflows span several modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Imaging(#[from] imaging::ImagingError),
    #[error(transparent)]
    Transform(#[from] transform::TransformError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Stability(#[from] stability::StabilityError),
    #[error(transparent)]
    Explain(#[from] explain::ExplainError),
    #[error(transparent)]
    Audit(#[from] audit::AuditError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
