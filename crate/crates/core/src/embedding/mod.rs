//! Sentence-embedding backends, cosine similarity and the embedding cache.

mod cache;
mod remote;
mod stub;
mod vector;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use cache::{cache_key, EmbeddingCache};
pub use remote::RemoteEmbedder;
pub use stub::{deterministic_stub_embed, fnv1a64, StubEmbedder};
pub use vector::{cosine_similarity, EmbeddingVector};

pub(crate) use stub::splitmix64;
pub(crate) use vector::dot;

use crate::error::{Error, Result};
use crate::http::RetryPolicy;
use crate::repository::{Phase, UsageMeter};

/// Texts per provider request.
pub const MAX_BATCH: usize = 128;
pub const DEFAULT_DIMS: usize = 3072;
pub const EMBED_ENDPOINT_ENV: &str = "SSSL_EMBED_ENDPOINT";

/// A text-to-vector function `f`, fixed for a run.
pub trait Embedder: Send + Sync {
    fn model_name(&self) -> &str;

    fn dims(&self) -> usize;

    /// One provider round-trip; returns one vector per input, in order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;

    fn max_parallel(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingKind {
    RemoteHttp,
    DeterministicStub,
}

fn default_model() -> String {
    "deterministic-stub".to_string()
}
fn default_dims() -> usize {
    DEFAULT_DIMS
}
fn default_parallel() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingProviderConfig {
    pub kind: EmbeddingKind,
    #[serde(default = "default_model")]
    pub model_name: String,
    #[serde(default = "default_dims")]
    pub dims: usize,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_parallel")]
    pub max_parallel_requests: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        EmbeddingProviderConfig {
            kind: EmbeddingKind::DeterministicStub,
            model_name: default_model(),
            dims: DEFAULT_DIMS,
            endpoint: None,
            max_parallel_requests: default_parallel(),
            retry: RetryPolicy::default(),
        }
    }
}

impl EmbeddingProviderConfig {
    pub fn stub(dims: usize) -> Self {
        EmbeddingProviderConfig {
            dims,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims < 1 {
            return Err(Error::Config("embedding.dims must be >= 1".into()));
        }
        if self.max_parallel_requests < 1 {
            return Err(Error::Config("embedding.max_parallel_requests must be >= 1".into()));
        }
        if self.model_name.is_empty() {
            return Err(Error::Config("embedding.model_name must not be empty".into()));
        }
        self.retry.validate()
    }

    /// Instantiates the provider. For remote providers the
    /// `SSSL_EMBED_ENDPOINT` environment variable overrides `endpoint`.
    pub fn build(&self) -> Result<Box<dyn Embedder>> {
        self.validate()?;
        match self.kind {
            EmbeddingKind::DeterministicStub => {
                Ok(Box::new(StubEmbedder::new(self.model_name.clone(), self.dims)))
            }
            EmbeddingKind::RemoteHttp => {
                let endpoint = std::env::var(EMBED_ENDPOINT_ENV)
                    .ok()
                    .filter(|s| !s.is_empty())
                    .or_else(|| self.endpoint.clone())
                    .ok_or_else(|| Error::Config("remote embedding provider needs an endpoint".into()))?;
                Ok(Box::new(RemoteEmbedder::new(
                    endpoint,
                    self.model_name.clone(),
                    self.dims,
                    self.max_parallel_requests,
                    self.retry,
                )))
            }
        }
    }
}

/// Embeds `texts` in order. Cached vectors are reused; misses are fetched in
/// batches of at most [`MAX_BATCH`], up to `provider.max_parallel()` at a
/// time, then written back to the cache. Each round-trip counts as one call
/// under [`Phase::Embedding`].
pub fn embed_texts(
    texts: &[String],
    provider: &dyn Embedder,
    cache: &EmbeddingCache,
    meter: &UsageMeter,
) -> Result<Vec<EmbeddingVector>> {
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(Error::InvalidInput(format!("text #{i} is empty")));
    }
    let model = provider.model_name();
    let dims = provider.dims();
    meter.timed(Phase::Embedding, || {
        let mut resolved: HashMap<&str, EmbeddingVector> = HashMap::new();
        let mut misses: Vec<String> = Vec::new();
        for text in texts {
            if resolved.contains_key(text.as_str()) || misses.iter().any(|m| m == text) {
                continue;
            }
            match cache.get(model, text).filter(|v| v.dims() == dims) {
                Some(v) => {
                    resolved.insert(text, v);
                }
                None => misses.push(text.clone()),
            }
        }

        let batches: Vec<&[String]> = misses.chunks(MAX_BATCH).collect();
        let fetched = run_batches(&batches, provider, meter)?;
        for (text, values) in misses.iter().zip(fetched) {
            if values.len() != dims {
                return Err(Error::Protocol(format!(
                    "expected {dims}-dimensional vectors, got {}",
                    values.len()
                )));
            }
            let v = EmbeddingVector::new(values)?;
            cache.insert(model, text, &v);
            resolved.insert(text.as_str(), v);
        }
        Ok(texts.iter().map(|t| resolved[t.as_str()].clone()).collect())
    })
}

fn run_batches(
    batches: &[&[String]],
    provider: &dyn Embedder,
    meter: &UsageMeter,
) -> Result<Vec<Vec<f64>>> {
    let run_one = |batch: &[String]| -> Result<Vec<Vec<f64>>> {
        let out = provider.embed_batch(batch)?;
        meter.record_call(Phase::Embedding, 0, 0);
        if out.len() != batch.len() {
            return Err(Error::Protocol(format!(
                "expected {} vectors, got {}",
                batch.len(),
                out.len()
            )));
        }
        Ok(out)
    };

    let results = crate::par::ordered_map(batches, provider.max_parallel(), |b| run_one(b));

    let mut flat = Vec::new();
    for r in results {
        flat.extend(r?);
    }
    Ok(flat)
}
