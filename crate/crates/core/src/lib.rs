//! Genre discovery over large collections of OCR'd historical volumes.
//!
//! The crate covers the machine side of an iterative workflow: a balanced,
//! expert-verified ground truth is vectorized with hashed unigram + bigram
//! features, several classifier families are trained and evaluated, the best
//! one ranks the unlabeled candidate pool, and expert verdicts on the top of
//! that ranking flow back into the ground truth.
//!
//! Module map:
//!
//! * [`corpus`]: manifests, century partitions, negative sampling, annotation records
//! * [`textprep`]: tokenization and corpus frequency statistics
//! * [`features`]: n-gram extraction and feature hashing
//! * [`models`]: classifier families behind a name-keyed registry
//! * [`eval`]: stratified split, k-fold CV, precision/recall/F1, random baseline
//! * [`curve`]: ground-truth size sweep
//! * [`discover`]: candidate scoring and review-queue export
//! * [`synth`]: generator for synthetic two-topic corpora

pub mod corpus;
pub mod curve;
pub mod dataset;
pub mod discover;
pub mod error;
pub mod eval;
pub mod features;
pub mod fingerprint;
pub mod models;
pub mod synth;
pub mod textprep;

pub use error::{Error, Result};
