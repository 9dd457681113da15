//! Ontology-aware pointer-generator summarization.
//!
//! The pipeline links findings text to a concept ontology, encodes the
//! matched concept tokens with a second BiLSTM, and injects the resulting
//! context vector into every decoder gate of a pointer-generator model.
//! Extractive baselines (LexRank, LSA), ROUGE scoring, and a paired t-test
//! round out the evaluation machinery.

pub mod autodiff;
pub mod baselines;
pub mod config;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod model;
pub mod ontology;
pub mod params;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
