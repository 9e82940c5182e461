//! Streaming multivariate anomaly detection.
//!
//! The pipeline for one stream is:
//!
//! ```text
//! readings -> align -> windows -> denoise -> min-max normalize
//!          -> per-sensor embedding -> memory context -> additive attention
//!          -> attended vector -> Mahalanobis score -> threshold decision
//!          -> gradient attribution -> explanation record
//! ```
//!
//! A static rule-based detector ([`rules`]) is provided as the comparator, and
//! [`eval`] holds the metric suite used to compare the two. [`simgen`] produces
//! deterministic synthetic telemetry with labelled fault injection.

pub mod context;
pub mod detector;
pub mod error;
pub mod eval;
pub mod explain;
pub mod linalg;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod rules;
pub mod simgen;
pub mod telemetry;

pub use error::{Error, Result};
