//! Run configuration file (JSON). Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotation::AnnotatorConfig;
use crate::clustering::{KneeConfig, PcmConfig};
use crate::embedding::EmbeddingProviderConfig;
use crate::error::{Error, Result};
use crate::eval::JudgeConfig;
use crate::knn::KnnConfig;
use crate::pipeline::BuildSettings;
use crate::retrieval::Aggregation;

fn default_top() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalDefaults {
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default = "default_top")]
    pub top: usize,
}

impl Default for RetrievalDefaults {
    fn default() -> Self {
        RetrievalDefaults {
            aggregation: Aggregation::Mean,
            top: default_top(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Embedding cache JSONL; in-memory only when absent.
    #[serde(default)]
    pub embedding_cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// The only source of randomness for a run.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub embedding: EmbeddingProviderConfig,
    #[serde(default)]
    pub annotator: AnnotatorConfig,
    #[serde(default)]
    pub pcm: PcmConfig,
    #[serde(default)]
    pub knee: KneeConfig,
    #[serde(default)]
    pub knn: KnnConfig,
    #[serde(default)]
    pub retrieval: RetrievalDefaults,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<JudgeConfig>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut config: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.base_dir = base_dir.into();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.embedding.validate()?;
        self.annotator.validate()?;
        self.pcm.validate()?;
        self.knee.validate()?;
        self.knn.validate()?;
        if self.retrieval.top < 1 {
            return Err(Error::Config("retrieval.top must be >= 1".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }

    pub fn cache_path(&self) -> Option<PathBuf> {
        self.paths.embedding_cache.as_deref().map(|p| self.resolve(p))
    }

    /// Clustering and labeling settings, with the run seed applied.
    pub fn build_settings(&self) -> BuildSettings {
        BuildSettings {
            pcm: PcmConfig {
                seed: self.seed,
                ..self.pcm.clone()
            },
            knee: self.knee.clone(),
            policy: self.annotator.policy(),
        }
    }

    /// Every setting that affects a run, for report manifests.
    pub fn manifest(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let serde_json::Value::Object(m) = &mut v {
            m.insert(
                "bm25".into(),
                serde_json::json!({
                    "k1": crate::retrieval::DEFAULT_K1,
                    "b": crate::retrieval::DEFAULT_B,
                    "tokenizer": "lowercase, split on non-alphanumeric runs, no stemming or stop words",
                }),
            );
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c = PipelineConfig::from_json("{}", ".").unwrap();
        assert_eq!(c.knn.k_neighbors, 5);
        assert_eq!(c.annotator.max_labels_per_cluster, 5);
        assert_eq!(c.retrieval.aggregation, Aggregation::Mean);
    }

    #[test]
    fn unknown_keys_rejected_with_name() {
        for bad in [r#"{"seeed": 1}"#, r#"{"knn": {"k_neighbours": 3}}"#, r#"{"pcm": {"seed": 3}}"#] {
            let err = PipelineConfig::from_json(bad, ".").unwrap_err().to_string();
            assert!(err.contains("unknown field"), "{err}");
        }
        let err = PipelineConfig::from_json(r#"{"seeed": 1}"#, ".").unwrap_err().to_string();
        assert!(err.contains("seeed"));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(PipelineConfig::from_json(r#"{"knn": {"k_neighbors": 0}}"#, ".").is_err());
        assert!(PipelineConfig::from_json(r#"{"retrieval": {"top": 0}}"#, ".").is_err());
        assert!(PipelineConfig::from_json(r#"{"pcm": {"fuzzifier": 1.0}}"#, ".").is_err());
    }

    #[test]
    fn seed_flows_into_clustering_and_manifest() {
        let c = PipelineConfig::from_json(r#"{"seed": 42}"#, "/tmp/x").unwrap();
        assert_eq!(c.build_settings().pcm.seed, 42);
        assert_eq!(c.manifest()["seed"], 42);
        assert_eq!(c.resolve(Path::new("a.jsonl")), PathBuf::from("/tmp/x/a.jsonl"));
    }
}
