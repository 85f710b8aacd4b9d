//! Label-space organization of security questionnaires: overlapping
//! clustering, one LLM call per cluster, kNN label propagation, and
//! retrieval over the resulting labels.

pub mod annotation;
pub mod cli;
pub mod clustering;
pub mod config;
pub mod embedding;
pub mod error;
pub mod eval;
mod http;
pub mod knn;
mod par;
pub mod pipeline;
pub mod repository;
pub mod retrieval;

pub use error::{Error, Result};
pub use http::RetryPolicy;
