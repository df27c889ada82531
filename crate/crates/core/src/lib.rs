//! 30-day psychiatric readmission risk pipeline.
//!
//! The crate covers the full path from raw clinical notes to an evaluated
//! classifier:
//!
//! - [`corpus`]: EHR object model, JSONL ingestion and readmission labels.
//! - [`syngen`]: deterministic synthetic corpus generator with planted effects.
//! - [`textproc`]: tokenizer, sentence splitter and header-field extraction.
//! - [`neural`]: hashing sentence encoder and a small MLP training engine.
//! - [`domains`]: lexicon weak labeling, topic and clinical-sentiment models,
//!   admission-level aggregation.
//! - [`features`]: the 45-feature admission vector and its one-hot matrix.
//! - [`classifiers`]: six natively implemented classifiers.
//! - [`eval`]: metrics, repeated evaluation, ablation and recursive feature
//!   elimination.
//! - [`pipeline`]: glue used by the command-line driver.

pub mod classifiers;
pub mod config;
pub mod corpus;
pub mod digest;
pub mod domains;
pub mod error;
pub mod eval;
pub mod features;
pub mod neural;
pub mod pipeline;
pub mod seed;
pub mod syngen;
pub mod textproc;

pub use error::{Error, Result};
