use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::http::{JsonClient, RetryPolicy};

pub const ANNOTATOR_ENDPOINT_ENV: &str = "SSSL_ANNOTATOR_ENDPOINT";

/// One labeling request: the prompt plus the ids it was built from.
#[derive(Debug, Clone, Copy)]
pub struct AnnotationRequest<'a> {
    pub member_ids: &'a [String],
    pub prompt: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// A text-generation backend that answers labeling prompts.
pub trait Annotator: Send + Sync {
    fn model_name(&self) -> &str;

    fn annotate(&self, request: &AnnotationRequest<'_>) -> Result<AnnotatorResponse>;

    fn max_parallel(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotatorKind {
    RemoteHttp,
    ScriptedStub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTokens {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

fn default_model() -> String {
    "scripted-stub".to_string()
}
fn default_parallel() -> usize {
    4
}
fn default_max_labels() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorConfig {
    pub kind: AnnotatorKind,
    #[serde(default = "default_model")]
    pub model_name: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_parallel")]
    pub max_parallel_requests: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_max_labels")]
    pub max_labels_per_cluster: usize,
    /// Stub fixture JSONL (scripted-stub only).
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    /// Fixed per-call charge for stub calls whose fixture entry carries no
    /// token counts; absent means "estimate from text length".
    #[serde(default)]
    pub synthetic_tokens: Option<SyntheticTokens>,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        AnnotatorConfig {
            kind: AnnotatorKind::ScriptedStub,
            model_name: default_model(),
            endpoint: None,
            max_parallel_requests: default_parallel(),
            retry: RetryPolicy::default(),
            max_labels_per_cluster: default_max_labels(),
            fixture: None,
            synthetic_tokens: None,
        }
    }
}

/// Per-call rules applied around an [`Annotator`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelingPolicy {
    pub max_labels: usize,
    /// Attempts per cluster when the response holds no labels.
    pub attempts: u32,
}

impl Default for LabelingPolicy {
    fn default() -> Self {
        LabelingPolicy {
            max_labels: default_max_labels(),
            attempts: RetryPolicy::default().max_attempts,
        }
    }
}

impl AnnotatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_labels_per_cluster < 1 {
            return Err(Error::Config("annotator.max_labels_per_cluster must be >= 1".into()));
        }
        if self.max_parallel_requests < 1 {
            return Err(Error::Config("annotator.max_parallel_requests must be >= 1".into()));
        }
        self.retry.validate()
    }

    pub fn policy(&self) -> LabelingPolicy {
        LabelingPolicy {
            max_labels: self.max_labels_per_cluster,
            attempts: self.retry.max_attempts,
        }
    }

    /// Instantiates the backend; a relative fixture path is resolved against
    /// `base_dir`. For remote backends `SSSL_ANNOTATOR_ENDPOINT` overrides
    /// `endpoint`.
    pub fn build(&self, base_dir: &Path) -> Result<Box<dyn Annotator>> {
        self.validate()?;
        match self.kind {
            AnnotatorKind::ScriptedStub => {
                let mut stub = match &self.fixture {
                    Some(p) => ScriptedAnnotator::load(base_dir.join(p))?,
                    None => ScriptedAnnotator::default(),
                };
                stub.model_name = self.model_name.clone();
                stub.synthetic = self.synthetic_tokens;
                Ok(Box::new(stub))
            }
            AnnotatorKind::RemoteHttp => {
                let endpoint = std::env::var(ANNOTATOR_ENDPOINT_ENV)
                    .ok()
                    .filter(|s| !s.is_empty())
                    .or_else(|| self.endpoint.clone())
                    .ok_or_else(|| Error::Config("remote annotator needs an endpoint".into()))?;
                Ok(Box::new(RemoteAnnotator::new(
                    endpoint,
                    self.model_name.clone(),
                    self.max_parallel_requests,
                    self.retry,
                )))
            }
        }
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    model: &'a str,
    prompt: &'a str,
}

/// Client for `POST {"model", "prompt"} -> {"text", "prompt_tokens",
/// "completion_tokens"}` services.
pub struct RemoteAnnotator {
    model_name: String,
    max_parallel: usize,
    client: JsonClient,
}

impl RemoteAnnotator {
    pub fn new(endpoint: impl Into<String>, model_name: impl Into<String>, max_parallel: usize, retry: RetryPolicy) -> Self {
        RemoteAnnotator {
            model_name: model_name.into(),
            max_parallel: max_parallel.max(1),
            client: JsonClient::new(endpoint.into(), retry),
        }
    }

    /// Sends a free-form prompt (used by the judge as well).
    pub fn generate(&self, prompt: &str) -> Result<AnnotatorResponse> {
        self.client.post(&GenerateRequest {
            model: &self.model_name,
            prompt,
        })
    }
}

impl Annotator for RemoteAnnotator {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn max_parallel(&self) -> usize {
        self.max_parallel
    }

    fn annotate(&self, request: &AnnotationRequest<'_>) -> Result<AnnotatorResponse> {
        self.generate(request.prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    pub members: Vec<String>,
    pub labels: Vec<String>,
    #[serde(default)]
    pub prompt_tokens: Option<u64>,
    #[serde(default)]
    pub completion_tokens: Option<u64>,
}

/// Offline annotator driven by a fixture file.
///
/// A request whose member-id set equals a fixture entry's set gets that
/// entry's labels. Otherwise the labels of single-member entries for each
/// requested id are concatenated in request order. A request with no match
/// gets `[]`, which parses as an empty response.
#[derive(Debug, Clone, Default)]
pub struct ScriptedAnnotator {
    model_name: String,
    entries: HashMap<BTreeSet<String>, FixtureEntry>,
    synthetic: Option<SyntheticTokens>,
}

impl ScriptedAnnotator {
    pub fn new(entries: Vec<FixtureEntry>) -> Self {
        ScriptedAnnotator {
            model_name: default_model(),
            entries: entries
                .into_iter()
                .map(|e| (e.members.iter().cloned().collect(), e))
                .collect(),
            synthetic: None,
        }
    }

    pub fn with_synthetic_tokens(mut self, tokens: SyntheticTokens) -> Self {
        self.synthetic = Some(tokens);
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self::new(entries))
    }

    fn lookup(&self, member_ids: &[String]) -> (Vec<String>, Option<&FixtureEntry>) {
        let key: BTreeSet<String> = member_ids.iter().cloned().collect();
        if let Some(entry) = self.entries.get(&key) {
            return (entry.labels.clone(), Some(entry));
        }
        let mut labels = Vec::new();
        for id in member_ids {
            let single: BTreeSet<String> = std::iter::once(id.clone()).collect();
            if let Some(entry) = self.entries.get(&single) {
                labels.extend(entry.labels.iter().cloned());
            }
        }
        (labels, None)
    }
}

fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

impl Annotator for ScriptedAnnotator {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn annotate(&self, request: &AnnotationRequest<'_>) -> Result<AnnotatorResponse> {
        let (labels, entry) = self.lookup(request.member_ids);
        let text = serde_json::to_string(&labels).expect("string list serializes");
        let (default_prompt, default_completion) = match self.synthetic {
            Some(t) => (t.prompt_tokens, t.completion_tokens),
            None => (estimate_tokens(request.prompt), estimate_tokens(&text)),
        };
        Ok(AnnotatorResponse {
            prompt_tokens: entry.and_then(|e| e.prompt_tokens).unwrap_or(default_prompt),
            completion_tokens: entry.and_then(|e| e.completion_tokens).unwrap_or(default_completion),
            text,
        })
    }
}
