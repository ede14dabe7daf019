//! Neurosymbolic text-classification pipeline for health-surveillance-style
//! corpora: lexicon-guided semantic filtering, topic/embedding-based weak
//! labeling, Sylvester-equation embedding alignment, and imbalance-aware
//! classifiers.
//!
//! The crate is organized around the three pipeline phases: semantic gap
//! management ([`corpus`], [`embedding`], [`topic`], [`lexicon`],
//! [`semantic`]), metadata scoring ([`scoring`]), and adaptive classifier
//! training ([`sedo`], [`classify`], [`eval`]). [`pipeline`] wires the phases
//! together behind a config file and an artifact manifest.

pub mod classify;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod lexicon;
pub mod par;
pub mod pipeline;
pub mod scoring;
pub mod sedo;
pub mod semantic;
pub mod synth;
pub mod topic;

pub use error::{Error, Result};
