//! Automatic prompt optimization.
//!
//! Turns a natural-language task objective into an optimized prompt: the task
//! is parsed and completed by a teacher model, a synthetic dataset is
//! generated and split, candidate prompts are scored against a cost-aware
//! objective on a student model, and the result is kept in a versioned
//! session that accepts offset-anchored feedback.

pub mod config;
mod error;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod providers;
pub mod reply;
pub mod session;
pub mod synthgen;

pub use error::{Error, Result};
pub use pipeline::{Engine, RunOptions, RunOutput};
