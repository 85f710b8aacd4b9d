//! Strategy runs with cost accounting, cross-strategy comparison, and judge
//! hooks.

mod judge;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use judge::{
    input_hash, judge_labels, judge_selection, labels_prompt, selection_prompt, Judge, JudgeConfig, JudgeKind,
    JudgeScore, MockJudge,
};

use crate::annotation::annotate_single;
use crate::error::{Error, Result};
use crate::knn::{KnnConfig, Predictor};
use crate::pipeline::{build_repository, BuildSettings, Providers};
use crate::repository::{LabelSet, LabeledRepository, Phase, Provenance, QuestionSet, RepositoryEntry, UsageMeter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    LlmPerQuestion,
    SsslLlmPhase,
    SsslKnnPhase,
}

impl StrategyName {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyName::LlmPerQuestion => "llm-per-question",
            StrategyName::SsslLlmPhase => "sssl-llm-phase",
            StrategyName::SsslKnnPhase => "sssl-knn-phase",
        }
    }
}

impl fmt::Display for StrategyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "llm-per-question" => Ok(StrategyName::LlmPerQuestion),
            "sssl-llm-phase" => Ok(StrategyName::SsslLlmPhase),
            "sssl-knn-phase" => Ok(StrategyName::SsslKnnPhase),
            other => Err(Error::InvalidInput(format!(
                "unknown strategy {other:?} (expected llm-per-question, sssl-llm-phase or sssl-knn-phase)"
            ))),
        }
    }
}

/// One labeling strategy with what it needs beyond the shared context.
#[derive(Debug, Clone, Copy)]
pub enum StrategySpec<'a> {
    /// One annotator call per question.
    LlmPerQuestion,
    /// Clustering plus one annotator call per deduplicated cluster.
    SsslLlmPhase,
    /// Neighbor voting against an existing embedded repository.
    SsslKnnPhase { repository: &'a LabeledRepository },
}

impl StrategySpec<'_> {
    pub fn name(&self) -> StrategyName {
        match self {
            StrategySpec::LlmPerQuestion => StrategyName::LlmPerQuestion,
            StrategySpec::SsslLlmPhase => StrategyName::SsslLlmPhase,
            StrategySpec::SsslKnnPhase { .. } => StrategyName::SsslKnnPhase,
        }
    }
}

/// Shared settings for every strategy in an evaluation.
pub struct RunContext<'a> {
    pub providers: Providers<'a>,
    pub settings: BuildSettings,
    pub knn: KnnConfig,
    /// Configuration dump merged into each report manifest.
    pub manifest: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub id: String,
    pub labels: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: StrategyName,
    pub labels_count: usize,
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_time_s: f64,
    pub energy_kwh: Option<f64>,
    pub manifest: serde_json::Value,
    pub assignments: Vec<Assignment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<JudgeScore>,
}

impl RunReport {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn corpus_fingerprint(&self) -> Option<&str> {
        self.manifest.get("corpus_sha256").and_then(|v| v.as_str())
    }

    /// Rebuilds a (label-only) repository from the assignments.
    pub fn to_repository(&self, corpus: &QuestionSet) -> Result<LabeledRepository> {
        let mut entries = Vec::with_capacity(self.assignments.len());
        for a in &self.assignments {
            let q = corpus
                .get(&a.id)
                .ok_or_else(|| Error::InvalidInput(format!("assignment {:?} is not in the corpus", a.id)))?;
            let labels = a
                .labels
                .iter()
                .map(|l| crate::repository::SemanticLabel::new(l))
                .collect::<Result<LabelSet>>()?;
            entries.push(RepositoryEntry::new(q.clone(), labels, a.provenance));
        }
        LabeledRepository::from_entries(entries)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Hex SHA-256 over the ordered `(id, text)` pairs.
pub fn corpus_fingerprint(corpus: &QuestionSet) -> String {
    let mut h = Sha256::new();
    for q in corpus {
        h.update(q.id.as_bytes());
        h.update(b"\t");
        h.update(q.text.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn assignments(repo: &LabeledRepository) -> Vec<Assignment> {
    repo.entries()
        .iter()
        .map(|e| Assignment {
            id: e.id().to_string(),
            labels: e.labels.iter().map(|l| l.surface.clone()).collect(),
            provenance: e.provenance,
        })
        .collect()
}

/// Runs one strategy on `corpus` with a fresh accounting of annotator calls.
/// Wall time covers the labeling computation only.
pub fn run_strategy(spec: StrategySpec<'_>, corpus: &QuestionSet, ctx: &RunContext<'_>, meter: &UsageMeter) -> Result<RunReport> {
    let policy = ctx.settings.policy;
    let start = Instant::now();
    let repo = match spec {
        StrategySpec::LlmPerQuestion => {
            let annotator = ctx.providers.annotator;
            let labeled = meter.timed(Phase::ClusterAnnotation, || {
                crate::par::ordered_map(corpus.as_slice(), annotator.max_parallel(), |q| {
                    annotate_single(q, annotator, policy, meter, Phase::ClusterAnnotation)
                })
            });
            let mut entries = Vec::with_capacity(corpus.len());
            for (q, labels) in corpus.iter().zip(labeled) {
                let labels = labels.map_err(|e| e.in_phase("cluster-annotation"))?;
                entries.push(RepositoryEntry::new(q.clone(), labels, Provenance::LlmFallback));
            }
            LabeledRepository::from_entries(entries)?
        }
        StrategySpec::SsslLlmPhase => build_repository(corpus, &ctx.settings, ctx.providers, meter)?.repository,
        StrategySpec::SsslKnnPhase { repository } => {
            let p = ctx.providers;
            let predictor = Predictor::new(repository, ctx.knn, p.embedder, p.cache, p.annotator, policy)
                .map_err(|e| e.in_phase("knn-prediction"))?;
            let outcomes = predictor
                .predict_all(corpus.as_slice(), meter)
                .map_err(|e| e.in_phase("knn-prediction"))?;
            let entries = corpus
                .iter()
                .zip(outcomes)
                .map(|(q, (o, _))| o.to_entry(q.clone(), None))
                .collect();
            LabeledRepository::from_entries(entries)?
        }
    };
    let wall_time_s = start.elapsed().as_secs_f64();

    let mut calls = 0;
    let (mut prompt_tokens, mut completion_tokens) = (0, 0);
    for phase in [Phase::ClusterAnnotation, Phase::FallbackAnnotation] {
        let u = meter.usage(phase);
        calls += u.calls;
        prompt_tokens += u.prompt_tokens;
        completion_tokens += u.completion_tokens;
    }
    let labels_count = repo.label_count();

    let mut manifest = match &ctx.manifest {
        serde_json::Value::Object(m) => m.clone(),
        serde_json::Value::Null => serde_json::Map::new(),
        other => {
            let mut m = serde_json::Map::new();
            m.insert("config".into(), other.clone());
            m
        }
    };
    manifest.insert("strategy".into(), spec.name().as_str().into());
    manifest.insert("corpus_sha256".into(), corpus_fingerprint(corpus).into());
    manifest.insert("corpus_size".into(), corpus.len().into());
    manifest.insert("embedding_model".into(), ctx.providers.embedder.model_name().into());
    manifest.insert("annotator_model".into(), ctx.providers.annotator.model_name().into());

    Ok(RunReport {
        strategy: spec.name(),
        labels_count,
        calls,
        prompt_tokens,
        completion_tokens,
        wall_time_s,
        energy_kwh: None,
        manifest: serde_json::Value::Object(manifest),
        assignments: assignments(&repo),
        judge: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: StrategyName,
    pub labels_count: usize,
    pub calls: u64,
    pub tokens: u64,
    pub wall_time_s: f64,
    /// Relative to the baseline; `None` when the baseline value is zero.
    pub token_reduction_pct: Option<f64>,
    pub call_reduction_pct: Option<f64>,
    pub time_reduction_pct: Option<f64>,
    /// Baseline time over this row's time; `None` when this row took no time.
    pub speedup: Option<f64>,
    /// `speedup` rounded to three significant figures.
    pub speedup_3sf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: StrategyName,
    pub corpus_sha256: Option<String>,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }
}

/// `x` rounded to `digits` significant figures.
pub fn round_significant(x: f64, digits: u32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let scale = 10f64.powi(digits as i32 - 1 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}

fn reduction_pct(base: f64, value: f64) -> Option<f64> {
    (base != 0.0).then(|| 100.0 * (base - value) / base)
}

/// Tabulates the reports against the first one.
pub fn compare_strategies(reports: &[RunReport]) -> Result<Comparison> {
    let [base, ..] = reports else {
        return Err(Error::InvalidInput("comparison needs at least two reports".into()));
    };
    if reports.len() < 2 {
        return Err(Error::InvalidInput("comparison needs at least two reports".into()));
    }
    let fingerprints: BTreeSet<Option<&str>> = reports.iter().map(RunReport::corpus_fingerprint).collect();
    if fingerprints.len() > 1 {
        let mut it = fingerprints.into_iter();
        let a = it.next().flatten().unwrap_or("none").to_string();
        let b = it.next().flatten().unwrap_or("none").to_string();
        return Err(Error::CorpusMismatch(a, b));
    }
    let rows = reports
        .iter()
        .map(|r| {
            let speedup = (r.wall_time_s > 0.0).then(|| base.wall_time_s / r.wall_time_s);
            ComparisonRow {
                strategy: r.strategy,
                labels_count: r.labels_count,
                calls: r.calls,
                tokens: r.total_tokens(),
                wall_time_s: r.wall_time_s,
                token_reduction_pct: reduction_pct(base.total_tokens() as f64, r.total_tokens() as f64),
                call_reduction_pct: reduction_pct(base.calls as f64, r.calls as f64),
                time_reduction_pct: reduction_pct(base.wall_time_s, r.wall_time_s),
                speedup,
                speedup_3sf: speedup.map(|s| round_significant(s, 3)),
            }
        })
        .collect();
    Ok(Comparison {
        baseline: base.strategy,
        corpus_sha256: base.corpus_fingerprint().map(str::to_string),
        rows,
    })
}
