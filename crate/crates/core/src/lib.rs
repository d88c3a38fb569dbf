//! Hierarchical temporal-graph pipeline for longitudinal risk prediction
//! from clinical note timelines.
//!
//! Stages, in pipeline order: [`ingest`] (per-note extraction files to
//! reduced temporal graphs), [`knowledge`] (semantic-type augmentation),
//! [`features`] (node features), [`model`] (GraphSAGE + bidirectional LSTM
//! trajectory model), [`cohort`] (leakage filtering and propensity
//! matching), [`eval`] (metrics, fairness, horizons, bootstrap), and
//! [`reveal`] (verifier-aided label aggregation). [`synth`] builds cohorts
//! with a planted temporal signal, [`pipeline`] chains the stages and
//! [`cli`] exposes them as subcommands.

pub mod cli;
pub mod cohort;
pub mod error;
pub mod features;
pub mod eval;
pub mod ingest;
pub mod knowledge;
pub mod model;
pub mod pipeline;
pub mod reveal;
pub mod synth;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
