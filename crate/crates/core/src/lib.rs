//! Event-reflection memory for news-driven stock movement prediction.
//!
//! News documents are turned into structured events, merged per day,
//! linked into bounded chains across days, and paired with realized price
//! moves as reflections. At prediction time the recent event sequence is
//! matched against historical sequences by hierarchical Jaccard similarity
//! and the selected reflections feed the final prompt.

pub mod backends;
pub mod context;
pub mod domain;
pub mod extraction;
pub mod harness;
pub mod inference;
pub mod merging;
pub mod prompts;
pub mod reflection;
pub mod retrieval;
pub mod scalar;
pub mod store;
pub mod taxonomy;
pub mod tracking;

use sha2::{Digest, Sha256};

/// Similarity values reported to callers.
pub type Sim = f64;
/// Exact similarity used for ranking.
pub type ExactSim = num_rational::BigRational;
/// Evaluation metric values.
pub type Metric = f64;

/// Hex SHA-256 of `text`.
pub fn digest_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
