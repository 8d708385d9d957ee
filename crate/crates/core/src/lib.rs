//! Intermediate-task transferability prediction from soft-prompt weights.
//!
//! Task embeddings are built from prompt weight matrices (or precomputed
//! sentence embeddings), source tasks are ranked per target by similarity,
//! and predicted rankings are scored against measured transfer results with
//! nDCG, Regret@k and best-of-top-k gains.

pub mod pipeline;
pub mod ranking_metrics;
pub mod rng;
pub mod similarity;
pub mod tensor_io;
