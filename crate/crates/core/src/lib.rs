//! Learning when to stop gathering information: per-prefix success labels,
//! counterfactual termination datasets, termination policies, and metrics.

pub mod cfgen;
pub mod domain;
pub mod eval;
pub mod labeling;
pub mod policy;
pub mod seeding;
pub mod segment;
pub mod transport;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));
