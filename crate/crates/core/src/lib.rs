//! Time-decaying information-propagation probabilities on follow graphs.
//!
//! The crate turns retweet-style event logs into labelled exposure examples,
//! measures how the retweet probability falls off with the latency since an
//! edge's latest activation, fits a per-edge power-law decay model alongside
//! static baselines, scores them, and feeds their predicted probabilities into
//! influence maximization.
//!
//! Module map:
//!
//! * [`corpus`]: ingestion, example extraction, latency computation, persistence.
//! * [`scaling`]: log-binned latency histograms, propagation-ratio curves, power-law fits.
//! * [`estimators`]: the decay model (MAP) and the MLE / EM / static Bernoulli baselines.
//! * [`evaluation`]: splits, perplexity, ROC/AUC, sequential prediction.
//! * [`viral`]: independent-cascade spread, CELF++ seed selection, pseudo-actual spread.
//! * [`synthgen`]: synthetic corpora with known ground truth.
//! * [`experiment`]: the end-to-end pipelines shared by the CLI and the test suites.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod diag;
pub mod estimators;
pub mod evaluation;
pub mod experiment;
pub mod rng;
pub mod scaling;
pub mod synthgen;
pub mod viral;

pub use corpus::{EdgeKey, Example, ExampleSet, MessageId, Timestamp, UserId};
pub use diag::{Diagnostic, Diagnostics};

pub use estimators::{EdgeParams, FittedModel, ModelKind, Priors};
