//! LLM-as-judge scoring of label sets and retrieval selections.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::RemoteAnnotator;
use crate::error::{Error, Result};
use crate::http::RetryPolicy;
use crate::repository::LabeledRepository;
use crate::retrieval::RankedResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JudgeScore {
    Labels {
        correctness: f64,
        generalization: f64,
        consistency: f64,
    },
    Selection {
        selection_score: f64,
    },
}

/// Something that answers a judging prompt with raw text.
pub trait Judge: Send + Sync {
    fn judge(&self, prompt: &str) -> Result<String>;
}

impl Judge for RemoteAnnotator {
    fn judge(&self, prompt: &str) -> Result<String> {
        Ok(self.generate(prompt)?.text)
    }
}

/// Hex SHA-256 of a judging prompt; the key used by [`MockJudge`] fixtures.
pub fn input_hash(prompt: &str) -> String {
    Sha256::digest(prompt.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Replays canned responses keyed by [`input_hash`] of the prompt.
#[derive(Debug, Clone, Default)]
pub struct MockJudge {
    responses: HashMap<String, String>,
}

impl MockJudge {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_scores(mut self, prompt_hash: impl Into<String>, score: JudgeScore) -> Self {
        self.responses
            .insert(prompt_hash.into(), serde_json::to_string(&score).expect("scores serialize"));
        self
    }

    pub fn with_raw(mut self, prompt_hash: impl Into<String>, raw: impl Into<String>) -> Self {
        self.responses.insert(prompt_hash.into(), raw.into());
        self
    }

    /// Fixture file: a JSON object mapping prompt hash to a score object.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: HashMap<String, serde_json::Value> = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Ok(MockJudge {
            responses: map.into_iter().map(|(k, v)| (k, v.to_string())).collect(),
        })
    }
}

impl Judge for MockJudge {
    fn judge(&self, prompt: &str) -> Result<String> {
        let key = input_hash(prompt);
        self.responses
            .get(&key)
            .cloned()
            .ok_or_else(|| Error::Judge {
                message: format!("mock judge has no response for input {key}"),
                raw: String::new(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JudgeKind {
    Mock,
    RemoteHttp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeConfig {
    pub kind: JudgeKind,
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    #[serde(default)]
    pub model_name: Option<String>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl JudgeConfig {
    pub fn build(&self, base_dir: &Path) -> Result<Box<dyn Judge>> {
        self.retry.validate()?;
        match self.kind {
            JudgeKind::Mock => {
                let fixture = self.fixture.as_ref().ok_or_else(|| Error::Config("mock judge needs a fixture".into()))?;
                Ok(Box::new(MockJudge::load(base_dir.join(fixture))?))
            }
            JudgeKind::RemoteHttp => {
                let endpoint = self.endpoint.clone().ok_or_else(|| Error::Config("remote judge needs an endpoint".into()))?;
                let model = self.model_name.clone().unwrap_or_else(|| "judge".into());
                Ok(Box::new(RemoteAnnotator::new(endpoint, model, 1, self.retry)))
            }
        }
    }
}

const LABELS_RUBRIC: &str = "\
You are reviewing semantic labels assigned to security assessment questions.
Rate the labeling on three criteria, each an integer from 1 (poor) to 5 (excellent):
correctness: each label accurately describes the control domain of its question.
generalization: labels are reusable across questions rather than question-specific.
consistency: equivalent topics are named the same way throughout.
Reply with only a JSON object: {\"correctness\": n, \"generalization\": n, \"consistency\": n}

ITEMS:
";

const SELECTION_RUBRIC: &str = "\
You are reviewing the questions a system selected for a user request.
Rate how well the selected questions cover the request, from 0 (irrelevant) to 100 (complete and precise).
Reply with only a JSON object: {\"selection_score\": n}

";

pub fn labels_prompt(repo: &LabeledRepository) -> String {
    let mut p = String::from(LABELS_RUBRIC);
    for (i, e) in repo.entries().iter().enumerate() {
        let labels: Vec<&str> = e.labels.iter().map(|l| l.surface.as_str()).collect();
        let _ = writeln!(p, "{}. {} => {}", i + 1, e.question.text, labels.join("; "));
    }
    p
}

pub fn selection_prompt(query: &str, ranked: &RankedResult, repo: &LabeledRepository) -> String {
    let mut p = String::from(SELECTION_RUBRIC);
    let _ = writeln!(p, "REQUEST: {query}\nSELECTED:");
    for (i, r) in ranked.results.iter().enumerate() {
        let entry = repo.get(&r.id);
        let text = entry.map_or("", |e| e.question.text.as_str());
        let labels: Vec<&str> = entry.map_or_else(Vec::new, |e| e.labels.iter().map(|l| l.surface.as_str()).collect());
        let _ = writeln!(p, "{}. [{}] {} => {}", i + 1, r.id, text, labels.join("; "));
    }
    p
}

fn first_json_object(raw: &str) -> Option<serde_json::Map<String, serde_json::Value>> {
    raw.match_indices('{').find_map(|(i, _)| {
        serde_json::Deserializer::from_str(&raw[i..])
            .into_iter::<serde_json::Map<String, serde_json::Value>>()
            .next()
            .and_then(|r| r.ok())
    })
}

fn field(obj: &serde_json::Map<String, serde_json::Value>, name: &'static str, min: f64, max: f64, raw: &str) -> Result<f64> {
    let value = obj.get(name).and_then(serde_json::Value::as_f64).ok_or_else(|| Error::Judge {
        message: format!("missing numeric field {name:?}"),
        raw: raw.to_string(),
    })?;
    if !(min..=max).contains(&value) {
        return Err(Error::ScoreRange {
            field: name,
            value,
            min,
            max,
        });
    }
    Ok(value)
}

fn parse_object(raw: &str) -> Result<serde_json::Map<String, serde_json::Value>> {
    first_json_object(raw).ok_or_else(|| Error::Judge {
        message: "no JSON object in judge output".into(),
        raw: raw.to_string(),
    })
}

/// Label quality on three 1-5 scales.
pub fn judge_labels(repo: &LabeledRepository, judge: &dyn Judge) -> Result<JudgeScore> {
    let raw = judge.judge(&labels_prompt(repo))?;
    let obj = parse_object(&raw)?;
    Ok(JudgeScore::Labels {
        correctness: field(&obj, "correctness", 1.0, 5.0, &raw)?,
        generalization: field(&obj, "generalization", 1.0, 5.0, &raw)?,
        consistency: field(&obj, "consistency", 1.0, 5.0, &raw)?,
    })
}

/// Selection quality on a 0-100 scale.
pub fn judge_selection(query: &str, ranked: &RankedResult, repo: &LabeledRepository, judge: &dyn Judge) -> Result<JudgeScore> {
    let raw = judge.judge(&selection_prompt(query, ranked, repo))?;
    let obj = parse_object(&raw)?;
    Ok(JudgeScore::Selection {
        selection_score: field(&obj, "selection_score", 0.0, 100.0, &raw)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repository::{Provenance, Question, RepositoryEntry, SemanticLabel};
    use crate::retrieval::{Method, ScoredQuestion};

    fn repo() -> LabeledRepository {
        LabeledRepository::from_entries(vec![RepositoryEntry::new(
            Question::new("q1", "Are backups encrypted?").unwrap(),
            [SemanticLabel::new("Backup Encryption").unwrap()].into_iter().collect(),
            Provenance::ClusterLlm,
        )])
        .unwrap()
    }

    #[test]
    fn mock_returns_fixture_scores_deterministically() {
        let r = repo();
        let fixture = JudgeScore::Labels {
            correctness: 4.8,
            generalization: 4.3,
            consistency: 4.8,
        };
        let judge = MockJudge::new().with_scores(input_hash(&labels_prompt(&r)), fixture);
        assert_eq!(judge_labels(&r, &judge).unwrap(), fixture);
        assert_eq!(judge_labels(&r, &judge).unwrap(), judge_labels(&r, &judge).unwrap());
    }

    #[test]
    fn out_of_range_and_garbage() {
        let r = repo();
        let key = input_hash(&labels_prompt(&r));
        let judge = MockJudge::new().with_raw(&key, r#"{"correctness": 6, "generalization": 4, "consistency": 4}"#);
        assert!(matches!(judge_labels(&r, &judge), Err(Error::ScoreRange { field: "correctness", .. })));
        let judge = MockJudge::new().with_raw(&key, "Great labels!");
        match judge_labels(&r, &judge) {
            Err(Error::Judge { raw, .. }) => assert_eq!(raw, "Great labels!"),
            other => panic!("{other:?}"),
        }
        assert!(judge_labels(&r, &MockJudge::new()).is_err());
    }

    #[test]
    fn selection_score_parsed_from_prose() {
        let r = repo();
        let ranked = RankedResult {
            query: "backup security".into(),
            method: Method::Labels,
            aggregation: None,
            results: vec![ScoredQuestion {
                id: "q1".into(),
                score: 0.9,
                labels: None,
            }],
        };
        let prompt = selection_prompt("backup security", &ranked, &r);
        assert!(prompt.contains("[q1] Are backups encrypted? => Backup Encryption"));
        let judge = MockJudge::new().with_raw(input_hash(&prompt), "Score follows: {\"selection_score\": 83}");
        assert_eq!(
            judge_selection("backup security", &ranked, &r, &judge).unwrap(),
            JudgeScore::Selection { selection_score: 83.0 }
        );
        let judge = MockJudge::new().with_raw(input_hash(&prompt), "{\"selection_score\": 101}");
        assert!(judge_selection("backup security", &ranked, &r, &judge).is_err());
    }
}
