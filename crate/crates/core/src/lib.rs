//! Active learning for multimodal continuous regression.
//!
//! The crate scores pool candidates by a closed-form lower bound on the
//! mutual information between an ensemble member index and the output,
//! computed from Gaussian-mixture entropy bounds over an ensemble of
//! mixture density networks. Baseline acquisitions (random, epistemic
//! variance, BAIT, core-set), batch selection strategies, three
//! benchmark simulators and an experiment harness are included.
//!
//! Module map:
//!
//! * [`rng`] seedable counter-based random streams and samplers
//! * [`gmm`] diagonal Gaussian mixtures and their entropy bounds
//! * [`mdn`] mixture density networks, AdamW training, ensembles
//! * [`acquisition`] per-candidate scores and set-valued selectors
//! * [`selection`] score-to-batch strategies (top-k, SBAL, MaxDist)
//! * [`benchmarks`] data-generating processes and labeled pools
//! * [`harness`] the active-learning loop, configs, records, CLI

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod benchmarks;
pub mod error;
pub mod gmm;
pub mod harness;
pub mod mdn;
pub mod rng;
pub mod selection;

pub use error::{Error, Result};
pub use gmm::{DiagGaussianMixture, EnsemblePrediction};
pub use rng::RngStream;
