//! Hyperbolic hierarchical knowledge-graph embeddings.
//!
//! Entities and relations live in the tangent space at the origin of a
//! Poincaré ball. A triple `(h, r, t)` is scored by mapping the head onto the
//! ball with a curvature derived from `h` and `r`, applying the relation's
//! inter-level scaling and intra-level rotation, translating with a Möbius
//! addition and measuring the squared hyperbolic distance to the tail.
//!
//! Modules:
//! - [`geometry`]: origin-anchored ball kernels and block transforms.
//! - [`model`]: parameters, curvature heads, scoring, checkpoints.
//! - [`training`]: negative sampling, loss, exact gradients, optimisers.
//! - [`data`]: TSV ingestion, vocabularies, reciprocal triples, filters.
//! - [`eval`]: filtered ranking and MRR / Hits@K reports.
//! - [`hierarchy`]: Krackhardt score and triangle curvature estimates.

pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod hierarchy;
pub mod model;
pub mod training;

pub use error::{Error, Result};
