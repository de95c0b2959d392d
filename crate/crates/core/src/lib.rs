//! Diverse passage retrieval for subjective questions.
//!
//! The crate retrieves passage sets (BM25 or dense), optionally diversifies
//! them (MMR re-ranking or perspective-based query expansion), judges which
//! gold perspectives each passage contains, and scores the result with
//! set-level coverage metrics (MRecall@k, Precision@k, leaning Δ, union
//! upper bound, rank-to-cover).

pub mod benchmark;
pub mod corpus;
pub mod dense;
pub mod digest;
pub mod error;
pub mod expansion;
pub mod judge;
pub mod metrics;
pub mod mmr;
pub mod pipeline;
pub mod providers;
pub mod ranked;
pub mod retrieval;
pub mod sparse;
pub mod synthetic;

pub use error::{Error, Result};
pub use ranked::{RankedEntry, RankedList};
