//! Runs a multi-agent ensemble over question benchmarks, analyses how the
//! agents disagree, and scores the confidence methods built on top.

pub mod client;
pub mod config;
pub mod error;
pub mod export;
pub mod ingest;
pub mod mock;
pub mod orchestrate;
pub mod parse;
pub mod pipeline;
pub mod prompts;
pub mod store;

pub use error::{PipelineError, Result};
