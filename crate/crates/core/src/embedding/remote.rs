use serde::{Deserialize, Serialize};

use super::Embedder;
use crate::error::{Error, Result};
use crate::http::{JsonClient, RetryPolicy};

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    inputs: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for `POST {"model", "inputs"} -> {"vectors"}` embedding services.
pub struct RemoteEmbedder {
    model_name: String,
    dims: usize,
    max_parallel: usize,
    client: JsonClient,
}

impl RemoteEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model_name: impl Into<String>,
        dims: usize,
        max_parallel: usize,
        retry: RetryPolicy,
    ) -> Self {
        RemoteEmbedder {
            model_name: model_name.into(),
            dims,
            max_parallel: max_parallel.max(1),
            client: JsonClient::new(endpoint.into(), retry),
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn max_parallel(&self) -> usize {
        self.max_parallel
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let response: EmbedResponse = self.client.post(&EmbedRequest {
            model: &self.model_name,
            inputs: texts,
        })?;
        if response.vectors.len() != texts.len() {
            return Err(Error::Protocol(format!(
                "expected {} vectors, got {}",
                texts.len(),
                response.vectors.len()
            )));
        }
        if let Some(bad) = response.vectors.iter().find(|v| v.len() != self.dims) {
            return Err(Error::Protocol(format!(
                "expected {}-dimensional vectors, got {}",
                self.dims,
                bad.len()
            )));
        }
        Ok(response.vectors)
    }
}
