//! Representation learning and generative modeling for tabular time series.
//!
//! The pipeline turns a table into a language-modeling problem: continuous
//! fields are quantized onto per-field local vocabularies (`datapipe`), rows
//! are grouped into sliding windows, a hierarchical masked-field encoder
//! learns row and sequence embeddings (`tabbert`), a causal model generates
//! synthetic rows (`tabgpt`), downstream heads consume frozen features
//! (`heads`), and fidelity metrics compare real and generated data (`eval`).
//! Everything runs on a small built-in tensor engine with reverse-mode
//! autodiff (`tensor`) and is reproducible from a single seed (`rng`).

pub mod datapipe;
pub mod error;
pub mod eval;
pub mod heads;
pub mod nn;
pub mod rng;
pub mod synthgen;
pub mod tabbert;
pub mod tabgpt;
pub mod tensor;

pub use error::{Error, Result};
