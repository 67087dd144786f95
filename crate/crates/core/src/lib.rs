//! Confidence estimation for multi-agent LLM ensembles from the structure of
//! their disagreement.
//!
//! The crate is pure computation: records in, features, models, scores and
//! metrics out. Network access and storage live in `quorum-pipeline`.

pub mod baselines;
pub mod bootstrap;
pub mod error;
pub mod experiments;
pub mod features;
pub mod geometry;
mod linalg;
pub mod metrics;
pub mod model;
pub mod models;

pub use error::{Error, Result};
