//! Cluster labeling through a pluggable text-generation backend, plus the
//! per-question union of cluster labels.

mod annotator;
mod parse;
mod prompt;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use annotator::{
    AnnotationRequest, Annotator, AnnotatorConfig, AnnotatorKind, AnnotatorResponse, FixtureEntry, LabelingPolicy,
    RemoteAnnotator, ScriptedAnnotator, SyntheticTokens, ANNOTATOR_ENDPOINT_ENV,
};
pub use parse::{canonicalize, normalize_label, parse_label_response};
pub use prompt::{
    build_cluster_prompt, COMPARISON_SECTION, OUTPUT_SECTION, QUESTIONS_SECTION, ROLE_SECTION, TASK_SECTION,
};

use crate::clustering::ClusterSet;
use crate::error::{Error, Result};
use crate::repository::{
    LabelSet, LabeledRepository, Phase, Provenance, Question, QuestionSet, RepositoryEntry, SemanticLabel, UsageMeter,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    fn add(&mut self, r: &AnnotatorResponse) {
        self.prompt_tokens += r.prompt_tokens;
        self.completion_tokens += r.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabels {
    pub cluster_id: usize,
    pub labels: Vec<SemanticLabel>,
    /// Last raw response, kept for auditing.
    pub raw_response: String,
    /// Summed over every attempt.
    pub usage: TokenUsage,
}

/// Labels for one group of questions.
///
/// Every attempt is metered under `phase`. Empty responses are retried up to
/// `policy.attempts` times in total; backend errors fail immediately (the
/// backend already retries transport failures).
pub fn annotate_group(
    questions: &[&Question],
    annotator: &dyn Annotator,
    policy: LabelingPolicy,
    meter: &UsageMeter,
    phase: Phase,
) -> Result<(Vec<SemanticLabel>, String, TokenUsage)> {
    let prompt = build_cluster_prompt(questions.iter().copied())?;
    let member_ids: Vec<String> = questions.iter().map(|q| q.id.clone()).collect();
    let request = AnnotationRequest {
        member_ids: &member_ids,
        prompt: &prompt,
    };
    let mut usage = TokenUsage::default();
    let mut last_err = Error::EmptyResponse;
    for _ in 0..policy.attempts.max(1) {
        let response = annotator.annotate(&request)?;
        meter.record_call(phase, response.prompt_tokens, response.completion_tokens);
        usage.add(&response);
        match parse_label_response(&response.text, policy.max_labels) {
            Ok(labels) => return Ok((labels, response.text, usage)),
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

/// Labels a single question as a cluster of one.
pub fn annotate_single(
    question: &Question,
    annotator: &dyn Annotator,
    policy: LabelingPolicy,
    meter: &UsageMeter,
    phase: Phase,
) -> Result<LabelSet> {
    let (labels, _, _) = annotate_group(&[question], annotator, policy, meter, phase)?;
    Ok(labels.into_iter().collect())
}

/// One backend call per cluster (plus empty-response retries), run up to
/// `annotator.max_parallel()` at a time. Results keep cluster order.
pub fn annotate_clusters(
    clusters: &ClusterSet,
    corpus: &QuestionSet,
    annotator: &dyn Annotator,
    policy: LabelingPolicy,
    meter: &UsageMeter,
) -> Result<Vec<ClusterLabels>> {
    let mut groups = Vec::with_capacity(clusters.len());
    for cluster in clusters.iter() {
        let members = cluster
            .members
            .iter()
            .map(|id| {
                corpus
                    .get(id)
                    .ok_or_else(|| Error::InvalidInput(format!("cluster {} member {id:?} is not in the corpus", cluster.cluster_id)))
            })
            .collect::<Result<Vec<&Question>>>()?;
        groups.push((cluster.cluster_id, members));
    }

    let results = meter.timed(Phase::ClusterAnnotation, || {
        crate::par::ordered_map(&groups, annotator.max_parallel(), |(cluster_id, members)| {
            annotate_group(members, annotator, policy, meter, Phase::ClusterAnnotation)
                .map(|(labels, raw_response, usage)| ClusterLabels {
                    cluster_id: *cluster_id,
                    labels,
                    raw_response,
                    usage,
                })
                .map_err(|e| Error::Annotation {
                    cluster_id: *cluster_id,
                    source: Box::new(e),
                })
        })
    });
    let labeled = results.into_iter().collect::<Result<Vec<_>>>()?;

    let distinct: BTreeSet<&str> = labeled
        .iter()
        .flat_map(|c| c.labels.iter().map(|l| l.canonical.as_str()))
        .collect();
    meter.set_labels_produced(Phase::ClusterAnnotation, distinct.len() as u64);
    Ok(labeled)
}

/// Gives every question the union of the labels of all clusters containing
/// it, in cluster order. Returns the snapshot (provenance `cluster-llm`, no
/// embeddings) and the ids of questions that inherited nothing, in corpus
/// order. Those entries keep an empty label set until they are relabeled.
pub fn aggregate_question_labels(
    clusters: &ClusterSet,
    cluster_labels: &[ClusterLabels],
    corpus: &QuestionSet,
) -> Result<(LabeledRepository, Vec<String>)> {
    let mut per_cluster = Vec::with_capacity(clusters.len());
    for cluster in clusters.iter() {
        let labels = cluster_labels
            .iter()
            .find(|cl| cl.cluster_id == cluster.cluster_id)
            .ok_or_else(|| Error::InvalidInput(format!("no labels for cluster {}", cluster.cluster_id)))?;
        per_cluster.push((cluster, labels));
    }

    let mut entries = Vec::with_capacity(corpus.len());
    let mut unlabeled = Vec::new();
    for question in corpus {
        let mut labels = LabelSet::new();
        for (cluster, cl) in &per_cluster {
            if cluster.contains(&question.id) {
                for label in &cl.labels {
                    labels.insert(label.clone());
                }
            }
        }
        if labels.is_empty() {
            unlabeled.push(question.id.clone());
        }
        entries.push(RepositoryEntry::new(question.clone(), labels, Provenance::ClusterLlm));
    }
    Ok((LabeledRepository::from_entries(entries)?, unlabeled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::Cluster;

    fn corpus(n: usize) -> QuestionSet {
        QuestionSet::new((1..=n).map(|i| Question::new(format!("q{i}"), format!("Question number {i}?")).unwrap()).collect())
            .unwrap()
    }

    fn cluster(id: usize, members: &[&str]) -> Cluster {
        Cluster {
            cluster_id: id,
            threshold: 0.5,
            members: members.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn labels(id: usize, names: &[&str]) -> ClusterLabels {
        ClusterLabels {
            cluster_id: id,
            labels: names.iter().map(|n| SemanticLabel::new(n).unwrap()).collect(),
            raw_response: String::new(),
            usage: TokenUsage::default(),
        }
    }

    fn fixture(members: &[&str], names: &[&str], tokens: Option<(u64, u64)>) -> FixtureEntry {
        FixtureEntry {
            members: members.iter().map(|s| s.to_string()).collect(),
            labels: names.iter().map(|s| s.to_string()).collect(),
            prompt_tokens: tokens.map(|t| t.0),
            completion_tokens: tokens.map(|t| t.1),
        }
    }

    fn canon(set: &LabelSet) -> Vec<&str> {
        set.canonicals()
    }

    #[test]
    fn union_over_overlapping_clusters() {
        let cs = ClusterSet {
            clusters: vec![cluster(0, &["q1"]), cluster(1, &["q1", "q2"])],
        };
        let (repo, unlabeled) =
            aggregate_question_labels(&cs, &[labels(0, &["X"]), labels(1, &["X", "Y"])], &corpus(2)).unwrap();
        assert!(unlabeled.is_empty());
        assert_eq!(canon(&repo.get("q1").unwrap().labels), ["x", "y"]);
        assert_eq!(canon(&repo.get("q2").unwrap().labels), ["x", "y"]);
    }

    #[test]
    fn disjoint_clusters_and_inventory() {
        let cs = ClusterSet {
            clusters: vec![cluster(0, &["q1"]), cluster(1, &["q2"])],
        };
        let (repo, _) = aggregate_question_labels(&cs, &[labels(0, &["A"]), labels(1, &["B"])], &corpus(2)).unwrap();
        assert_eq!(canon(&repo.get("q1").unwrap().labels), ["a"]);
        assert_eq!(canon(&repo.get("q2").unwrap().labels), ["b"]);
        assert_eq!(repo.inventory().keys().collect::<Vec<_>>(), ["a", "b"]);
        repo.validate().unwrap();
    }

    #[test]
    fn uncovered_question_is_reported() {
        let cs = ClusterSet {
            clusters: vec![cluster(0, &["q1"])],
        };
        let (repo, unlabeled) = aggregate_question_labels(&cs, &[labels(0, &["A", "B"])], &corpus(2)).unwrap();
        assert_eq!(unlabeled, ["q2"]);
        assert_eq!(canon(&repo.get("q1").unwrap().labels), ["a", "b"]);
        assert!(repo.validate().is_err());
    }

    #[test]
    fn missing_cluster_labels_rejected() {
        let cs = ClusterSet {
            clusters: vec![cluster(0, &["q1"]), cluster(3, &["q2"])],
        };
        assert!(aggregate_question_labels(&cs, &[labels(0, &["A"])], &corpus(2)).is_err());
    }

    #[test]
    fn one_call_per_cluster_in_order() {
        let stub = ScriptedAnnotator::new(vec![
            fixture(&["q1", "q2"], &["Backups"], Some((10, 2))),
            fixture(&["q3"], &["Logging", "Monitoring"], Some((10, 3))),
            fixture(&["q4"], &["backups"], Some((10, 1))),
        ]);
        let cs = ClusterSet {
            clusters: vec![cluster(0, &["q2", "q1"]), cluster(4, &["q3"]), cluster(7, &["q4"])],
        };
        let meter = UsageMeter::new();
        let policy = LabelingPolicy::default();
        let out = annotate_clusters(&cs, &corpus(4), &stub, policy, &meter).unwrap();
        assert_eq!(out.iter().map(|c| c.cluster_id).collect::<Vec<_>>(), [0, 4, 7]);
        let usage = meter.usage(Phase::ClusterAnnotation);
        assert_eq!(usage.calls, 3);
        assert_eq!(usage.total_tokens(), 36);
        assert_eq!(usage.labels_produced, 3);
        let again = annotate_clusters(&cs, &corpus(4), &stub, policy, &UsageMeter::new()).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn empty_response_retries_then_names_cluster() {
        let stub = ScriptedAnnotator::new(vec![fixture(&["q1"], &["A"], Some((5, 1)))]);
        let cs = ClusterSet {
            clusters: vec![cluster(0, &["q1"]), cluster(9, &["q2"])],
        };
        let meter = UsageMeter::new();
        let policy = LabelingPolicy {
            max_labels: 5,
            attempts: 2,
        };
        let err = annotate_clusters(&cs, &corpus(2), &stub, policy, &meter).unwrap_err();
        assert!(matches!(err, Error::Annotation { cluster_id: 9, .. }), "{err}");
        assert_eq!(meter.usage(Phase::ClusterAnnotation).calls, 3);
    }

    #[test]
    fn synthetic_charges_match_cost_table_magnitude() {
        // 131 clusters at 263 tokens each.
        let n = 132;
        let stub = ScriptedAnnotator::new(
            (1..=n).map(|i| fixture(&[&format!("q{i}")], &[&format!("Label {i}")], None)).collect(),
        )
        .with_synthetic_tokens(SyntheticTokens {
            prompt_tokens: 220,
            completion_tokens: 43,
        });
        let cs = ClusterSet {
            clusters: (0..131).map(|c| cluster(c, &[&format!("q{}", c + 1)])).collect(),
        };
        let meter = UsageMeter::new();
        annotate_clusters(&cs, &corpus(n), &stub, LabelingPolicy::default(), &meter).unwrap();
        let usage = meter.usage(Phase::ClusterAnnotation);
        assert_eq!(usage.calls, 131);
        assert!((usage.total_tokens() as f64 - 34_527.0).abs() / 34_527.0 < 0.01);
    }

    #[test]
    fn single_question_fallback_metered_under_phase() {
        let stub = ScriptedAnnotator::new(vec![fixture(&["q1"], &["Encryption"], Some((7, 2)))]);
        let meter = UsageMeter::new();
        let q = Question::new("q1", "Is data encrypted?").unwrap();
        let got = annotate_single(&q, &stub, LabelingPolicy::default(), &meter, Phase::FallbackAnnotation).unwrap();
        assert_eq!(got.canonicals(), ["encryption"]);
        assert_eq!(meter.usage(Phase::FallbackAnnotation).total_tokens(), 9);
        assert_eq!(meter.usage(Phase::ClusterAnnotation).calls, 0);
    }
}
