//! Hierarchical transition-aware memory for iterative operator optimization.
//!
//! The engine keeps a two-level graph of optimization directions (globals)
//! and concrete strategies (locals), scores the next direction from the
//! transitions observed so far, asks a backend for a strategy and an
//! implementation, evaluates it, and writes the outcome back.

pub mod adapters;
pub mod campaign;
pub mod config;
pub mod cost;
pub mod engine;
pub mod local;
pub mod memory;
pub mod policy;
pub mod prompts;
pub mod report;
pub mod scoring;
pub mod state;
pub mod trajectory;

pub use config::{RunConfig, TaskSpec};
pub use engine::{Engine, EngineError};
pub use memory::MemoryBank;
pub use trajectory::TrajectoryRecord;
