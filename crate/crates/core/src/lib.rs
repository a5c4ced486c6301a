//! Fairness-aware sample reweighting through influence functions.
//!
//! A classifier is first trained by empirical risk minimisation. Influence
//! functions then estimate how up-weighting each training sample would move
//! group fairness metrics measured on a small annotated validation set. A
//! ridge-regularised least-squares problem turns those estimates into sample
//! weight perturbations, and the classifier is retrained on the reweighted
//! data. Training data never needs sensitive attributes.

pub mod data;
pub mod error;
pub mod influence;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod reweight;

pub use data::{Dataset, Sample};
pub use error::{Error, Result};
pub use influence::{InfluenceCoefficients, Solver};
pub use metrics::{FairnessReport, GroupRates, RateKind, SoftMetricConfig};
pub use model::{Architecture, Curvature, Model, ParameterVector};
pub use pipeline::{fairif_train, FairIfConfig, RunReport};
pub use reweight::{EpsilonVector, WeightPolicy, WeightVector};
