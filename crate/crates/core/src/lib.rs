//! Crisis tweet triage.
//!
//! Classifies crisis-related tweets into humanitarian information types (ITs,
//! multi-label) and estimates a priority score in `[0, 1]` for each tweet.
//!
//! The crate is split along the stages of the pipeline:
//!
//! - [`corpus`]: taxonomy, tweet ingestion, label vectors, train/dev splits.
//! - [`baseline`]: fixed embedding features with a binary-relevance Gaussian
//!   Naive Bayes classifier and an IT-to-priority lookup table.
//! - [`mtl`]: the multi-task model (shared encoder, classification head,
//!   priority regression head), its loss, scheduler and training loop.
//! - [`augmentation`]: EDA perturbations, prompt-based generation and noisy
//!   label annealing of augmented examples.
//! - [`ensemble`]: union/max combination of member runs and the
//!   `Irrelevant` post-processing rule.
//! - [`metrics`]: IT F1/accuracy, priority F1/recall, per-event nDCG@100 and
//!   leaderboard aggregation.
//! - [`pipeline`]: declarative run configs, run files and orchestration.

pub mod augmentation;
pub mod baseline;
pub mod corpus;
pub mod ensemble;
pub mod metrics;
pub mod mtl;
pub mod pipeline;
pub mod rng;
pub mod synthetic;
pub mod text;

pub use corpus::{LabelVector, Taxonomy, TweetRecord};
pub use ensemble::Prediction;
pub use metrics::MetricReport;
