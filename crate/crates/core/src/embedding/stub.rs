//! Deterministic offline embedder.
//!
//! Recipe: `seed = fnv1a64(utf8(text))`; component `i` (0-based) is
//! `2 * u_i - 1` where `u_i` is the top 53 bits of
//! `splitmix64(seed + (i + 1) * 0x9E3779B97F4A7C15)` scaled to [0, 1).
//! The result is L2-normalized. Each component depends only on the text and
//! its index, so vectors are identical across processes, platforms and
//! batch orderings.

use super::{EmbeddingVector, Embedder};
use crate::error::Result;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Unit-norm pseudo-random vector keyed by `text`.
pub fn deterministic_stub_embed(text: &str, dims: usize) -> EmbeddingVector {
    assert!(dims >= 1, "stub dims must be >= 1");
    let seed = fnv1a64(text.as_bytes());
    let mut values: Vec<f64> = (0..dims as u64)
        .map(|i| {
            let z = splitmix64(seed.wrapping_add((i + 1).wrapping_mul(GOLDEN_GAMMA)));
            2.0 * ((z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)) - 1.0
        })
        .collect();
    if values.iter().all(|&v| v == 0.0) {
        // every draw landed exactly on 0.5; astronomically unlikely
        values[0] = 1.0;
    }
    EmbeddingVector::unit(values).expect("non-zero finite stub vector")
}

#[derive(Debug, Clone)]
pub struct StubEmbedder {
    model_name: String,
    dims: usize,
}

impl StubEmbedder {
    pub fn new(model_name: impl Into<String>, dims: usize) -> Self {
        StubEmbedder {
            model_name: model_name.into(),
            dims,
        }
    }
}

impl Embedder for StubEmbedder {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts
            .iter()
            .map(|t| deterministic_stub_embed(t, self.dims).into_values())
            .collect())
    }
}
