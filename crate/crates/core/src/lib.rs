//! A desk-scale laboratory for generative models trained on their own output.
//!
//! Generation 0 of a diffusion model is trained on real data; every later
//! generation is trained from scratch on samples drawn from its predecessor.
//! Each generation is scored against the original data with Fréchet distance,
//! k-NN precision/recall/density/coverage and classifier fidelity.

pub mod classifier;
pub mod datasets;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use classifier::{Classifier, ClassifierConfig};
pub use datasets::{Dataset, Provenance};
pub use diffusion::{DiffusionModel, GuidanceConfig, SamplerKind, Schedule};
pub use error::{Error, ErrorCategory, Result};
pub use metrics::{Evaluator, FeatureSpace, MetricReport};
pub use nn::{Network, NetworkSpec};
pub use rng::Philox;
