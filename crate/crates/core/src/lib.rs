//! Partial-and-imbalanced adversarial domain adaptation.
//!
//! A source domain labeled over `K` classes is adapted to an unlabeled target
//! domain containing only the `K'` shared classes, which are rare in the
//! source. Training alternates a conditional adversarial step on the shared
//! classes with a reward-weighted step over all classes regularized by a
//! two-level label hierarchy.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod hierarchy;
pub mod metrics;
pub mod nn;
pub mod rewards;
pub mod rng;
pub mod trainer;

pub use error::{AidaError, Result};
