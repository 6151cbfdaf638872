//! Confidence-aware reranking (CAR) for retrieval-augmented generation.
//!
//! A baseline ranker's candidate list is treated as a prior order. For
//! uncertain queries, each candidate document is scored by how much it
//! changes the consistency of a generator's sampled answers, and the list is
//! corrected by moving documents between promote / preserve / demote bins
//! while keeping baseline order inside each bin.

pub mod backend;
pub mod cache;
pub mod clustering;
pub mod domain;
pub mod engine;
pub mod evaluation;
pub mod sweep;
