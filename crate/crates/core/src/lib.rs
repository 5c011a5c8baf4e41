//! Maximum-likelihood accident severity (multinomial and mixed logit) and
//! accident frequency (negative binomial, fixed or random-parameter) models,
//! with elasticities, marginal effects, likelihood-ratio tests and an
//! influence-distance search.

pub mod cli;
pub mod dataset;
pub mod design;
pub mod effects;
pub mod error;
pub mod fit;
pub mod influence;
pub mod lrtest;
pub mod manifest;
pub mod mixed;
pub mod mle;
pub mod mnl;
pub mod nb;
pub mod report;
pub mod rng;
pub mod spec;
pub mod special;
pub mod synth;

pub use dataset::{load_csv, LoadOptions, Mode, ObservationTable, Outcome};
pub use design::{build_design, DesignMatrix};
pub use effects::EffectsReport;
pub use error::{Error, Result};
pub use fit::{fit, FitOptions};
pub use mle::{FitResult, OptimSettings};
pub use spec::{CoefKind, Family, ModelSpec, Term};
