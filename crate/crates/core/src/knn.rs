//! Label prediction for new questions by neighbor voting, with an LLM
//! fallback when no label reaches the support threshold.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::annotation::{annotate_single, Annotator, LabelingPolicy};
use crate::embedding::{dot, embed_texts, Embedder, EmbeddingCache, EmbeddingVector};
use crate::error::{Error, Result};
use crate::repository::{
    LabelSet, LabeledRepository, Phase, Provenance, Question, RepositoryEntry, SemanticLabel, UsageMeter,
};

fn default_k() -> usize {
    5
}
fn default_min_support() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnConfig {
    #[serde(default = "default_k")]
    pub k_neighbors: usize,
    #[serde(default = "default_min_support")]
    pub min_support: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k_neighbors: default_k(),
            min_support: default_min_support(),
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors < 1 {
            return Err(Error::Config("knn.k_neighbors must be >= 1".into()));
        }
        if self.min_support < 1 {
            return Err(Error::Config("knn.min_support must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionMethod {
    Knn,
    LlmFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutcome {
    pub id: String,
    pub labels: LabelSet,
    pub method: PredictionMethod,
    pub neighbors: Vec<Neighbor>,
    /// Vote count per canonical label.
    pub votes: BTreeMap<String, usize>,
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    id: &'a str,
    labels: Vec<&'a str>,
    method: PredictionMethod,
    neighbors: &'a [Neighbor],
    votes: &'a BTreeMap<String, usize>,
}

impl PredictionOutcome {
    pub fn to_json(&self) -> String {
        let record = PredictionRecord {
            id: &self.id,
            labels: self.labels.iter().map(|l| l.surface.as_str()).collect(),
            method: self.method,
            neighbors: &self.neighbors,
            votes: &self.votes,
        };
        serde_json::to_string(&record).expect("prediction serializes")
    }

    /// Repository entry carrying the predicted labels.
    pub fn to_entry(&self, question: Question, embedding: Option<EmbeddingVector>) -> RepositoryEntry {
        let provenance = match self.method {
            PredictionMethod::Knn => Provenance::Knn,
            PredictionMethod::LlmFallback => Provenance::LlmFallback,
        };
        let mut entry = RepositoryEntry::new(question, self.labels.clone(), provenance);
        entry.embedding = embedding;
        entry
    }
}

/// Precomputed entry norms for repeated neighbor scans over one snapshot.
#[derive(Debug)]
pub struct NeighborIndex<'r> {
    repo: &'r LabeledRepository,
    rows: Vec<(usize, f64)>,
    dims: usize,
}

impl<'r> NeighborIndex<'r> {
    pub fn new(repo: &'r LabeledRepository) -> Result<Self> {
        let mut rows = Vec::with_capacity(repo.len());
        let mut dims = 0;
        for (i, entry) in repo.entries().iter().enumerate() {
            let Some(e) = &entry.embedding else { continue };
            let norm = e.norm();
            if norm == 0.0 {
                return Err(Error::ZeroVector);
            }
            dims = e.dims();
            rows.push((i, norm));
        }
        if rows.is_empty() {
            return Err(Error::EmptyRepository);
        }
        Ok(NeighborIndex { repo, rows, dims })
    }

    pub fn repo(&self) -> &'r LabeledRepository {
        self.repo
    }

    /// The `k` most similar embedded entries, by cosine descending and then
    /// id ascending.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<Neighbor>> {
        if k < 1 {
            return Err(Error::InvalidInput("k must be >= 1".into()));
        }
        if query.dims() != self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                actual: query.dims(),
            });
        }
        let q = query.values();
        let qn = query.norm();
        if qn == 0.0 {
            return Err(Error::ZeroVector);
        }
        let entries = self.repo.entries();
        let mut scored: Vec<(f64, &str)> = self
            .rows
            .iter()
            .map(|&(i, norm)| {
                let e = entries[i].embedding.as_ref().expect("indexed rows are embedded");
                ((dot(q, e.values()) / (qn * norm)).clamp(-1.0, 1.0), entries[i].id())
            })
            .collect();
        let by_rank = |a: &(f64, &str), b: &(f64, &str)| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1));
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_by(by_rank);
        Ok(scored
            .into_iter()
            .map(|(similarity, id)| Neighbor {
                id: id.to_string(),
                similarity,
            })
            .collect())
    }
}

pub fn top_k_neighbors(query: &EmbeddingVector, repo: &LabeledRepository, k: usize) -> Result<Vec<Neighbor>> {
    NeighborIndex::new(repo)?.top_k(query, k)
}

/// One vote per neighbor per label it carries; similarity is ignored.
pub fn vote_labels(neighbors: &[Neighbor], repo: &LabeledRepository) -> Result<BTreeMap<String, usize>> {
    let mut votes = BTreeMap::new();
    for n in neighbors {
        let entry = repo
            .get(&n.id)
            .ok_or_else(|| Error::InvalidInput(format!("neighbor {:?} is not in the repository", n.id)))?;
        for label in &entry.labels {
            *votes.entry(label.canonical.clone()).or_insert(0) += 1;
        }
    }
    Ok(votes)
}

/// Labels whose count equals the maximum, when that maximum reaches
/// `min_support`; `None` otherwise.
pub fn select_by_support(votes: &BTreeMap<String, usize>, min_support: usize) -> Option<BTreeSet<&str>> {
    let top = votes.values().copied().max().unwrap_or(0);
    (top >= min_support && top > 0).then(|| votes.iter().filter(|(_, &c)| c == top).map(|(l, _)| l.as_str()).collect())
}

/// Everything a prediction needs besides the question.
pub struct Predictor<'a> {
    pub index: NeighborIndex<'a>,
    pub config: KnnConfig,
    pub embedder: &'a dyn Embedder,
    pub cache: &'a EmbeddingCache,
    pub fallback: &'a dyn Annotator,
    pub policy: LabelingPolicy,
}

impl<'a> Predictor<'a> {
    pub fn new(
        repo: &'a LabeledRepository,
        config: KnnConfig,
        embedder: &'a dyn Embedder,
        cache: &'a EmbeddingCache,
        fallback: &'a dyn Annotator,
        policy: LabelingPolicy,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Predictor {
            index: NeighborIndex::new(repo)?,
            config,
            embedder,
            cache,
            fallback,
            policy,
        })
    }

    /// Predicts every question; queries are embedded together first.
    /// Returns each outcome with the query embedding.
    pub fn predict_all(&self, questions: &[Question], meter: &UsageMeter) -> Result<Vec<(PredictionOutcome, EmbeddingVector)>> {
        let texts: Vec<String> = questions.iter().map(|q| q.text.clone()).collect();
        let embeddings = embed_texts(&texts, self.embedder, self.cache, meter)?;
        let mut out = Vec::with_capacity(questions.len());
        for (q, e) in questions.iter().zip(embeddings) {
            out.push((self.predict_embedded(q, &e, meter)?, e));
        }
        for (method, phase) in [
            (PredictionMethod::Knn, Phase::KnnPrediction),
            (PredictionMethod::LlmFallback, Phase::FallbackAnnotation),
        ] {
            let distinct: BTreeSet<&str> = out
                .iter()
                .filter(|(o, _)| o.method == method)
                .flat_map(|(o, _)| o.labels.iter().map(|l| l.canonical.as_str()))
                .collect();
            if !distinct.is_empty() || method == PredictionMethod::Knn {
                meter.set_labels_produced(phase, distinct.len() as u64);
            }
        }
        Ok(out)
    }

    pub fn predict(&self, question: &Question, meter: &UsageMeter) -> Result<PredictionOutcome> {
        let e = embed_texts(std::slice::from_ref(&question.text), self.embedder, self.cache, meter)?;
        self.predict_embedded(question, &e[0], meter)
    }

    /// Vote among neighbors of an already embedded question; falls back to
    /// single-question annotation when support is too low.
    pub fn predict_embedded(&self, question: &Question, query: &EmbeddingVector, meter: &UsageMeter) -> Result<PredictionOutcome> {
        let repo = self.index.repo();
        let voted = meter.timed(Phase::KnnPrediction, || -> Result<_> {
            let neighbors = self.index.top_k(query, self.config.k_neighbors)?;
            let votes = vote_labels(&neighbors, repo)?;
            let labels = select_by_support(&votes, self.config.min_support).map(|chosen| {
                chosen
                    .into_iter()
                    .map(|c| repo.inventory().get(c).cloned().unwrap_or_else(|| SemanticLabel::new(c).expect("non-empty")))
                    .collect::<LabelSet>()
            });
            Ok((neighbors, votes, labels))
        })?;
        let (neighbors, votes, labels) = voted;
        let (labels, method) = match labels {
            Some(labels) => (labels, PredictionMethod::Knn),
            None => {
                let labels = meter.timed(Phase::FallbackAnnotation, || {
                    annotate_single(question, self.fallback, self.policy, meter, Phase::FallbackAnnotation)
                })?;
                (labels, PredictionMethod::LlmFallback)
            }
        };
        Ok(PredictionOutcome {
            id: question.id.clone(),
            labels,
            method,
            neighbors,
            votes,
        })
    }
}

/// Single-question convenience wrapper around [`Predictor`].
#[allow(clippy::too_many_arguments)]
pub fn predict_labels(
    question: &Question,
    repo: &LabeledRepository,
    config: KnnConfig,
    embedder: &dyn Embedder,
    cache: &EmbeddingCache,
    fallback: &dyn Annotator,
    policy: LabelingPolicy,
    meter: &UsageMeter,
) -> Result<PredictionOutcome> {
    Predictor::new(repo, config, embedder, cache, fallback, policy)?.predict(question, meter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{FixtureEntry, ScriptedAnnotator};
    use crate::embedding::StubEmbedder;

    fn entry(id: &str, labels: &[&str], v: &[f64]) -> RepositoryEntry {
        RepositoryEntry::new(
            Question::new(id, format!("text of {id}")).unwrap(),
            labels.iter().map(|l| SemanticLabel::new(l).unwrap()).collect(),
            Provenance::ClusterLlm,
        )
        .with_embedding(EmbeddingVector::new(v.to_vec()).unwrap())
    }

    fn vec(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    fn neighbors(ids: &[&str]) -> Vec<Neighbor> {
        ids.iter().map(|id| Neighbor { id: id.to_string(), similarity: 0.5 }).collect()
    }

    #[test]
    fn identity_neighbor_and_oversized_k() {
        let repo = LabeledRepository::from_entries(vec![entry("a", &["x"], &[1.0, 0.0]), entry("b", &["y"], &[0.0, 1.0])]).unwrap();
        let n = top_k_neighbors(&vec(&[0.0, 3.0]), &repo, 1).unwrap();
        assert_eq!(n[0].id, "b");
        assert!((n[0].similarity - 1.0).abs() < 1e-12);
        assert_eq!(top_k_neighbors(&vec(&[1.0, 1.0]), &repo, 10).unwrap().len(), 2);
    }

    #[test]
    fn ties_broken_by_ascending_id() {
        // cosines to (1, 0): q3 and q1 at 0.9, q2 at 0.2
        let s = |c: f64| (1.0 - c * c).sqrt();
        let repo = LabeledRepository::from_entries(vec![
            entry("q3", &["a"], &[0.9, s(0.9)]),
            entry("q2", &["a"], &[0.2, s(0.2)]),
            entry("q1", &["a"], &[0.9, s(0.9)]),
        ])
        .unwrap();
        let n = top_k_neighbors(&vec(&[1.0, 0.0]), &repo, 2).unwrap();
        assert_eq!(n.iter().map(|n| n.id.as_str()).collect::<Vec<_>>(), ["q1", "q3"]);
        assert!((n[0].similarity - 0.9).abs() < 1e-12);
    }

    #[test]
    fn unembedded_repository_rejected() {
        let repo = LabeledRepository::from_entries(vec![RepositoryEntry::new(
            Question::new("a", "t").unwrap(),
            [SemanticLabel::new("x").unwrap()].into_iter().collect(),
            Provenance::ClusterLlm,
        )])
        .unwrap();
        assert!(matches!(top_k_neighbors(&vec(&[1.0]), &repo, 1), Err(Error::EmptyRepository)));
    }

    #[test]
    fn unweighted_votes() {
        let repo = LabeledRepository::from_entries(vec![
            entry("1", &["A", "B"], &[1.0]),
            entry("2", &["A"], &[1.0]),
            entry("3", &["C"], &[1.0]),
        ])
        .unwrap();
        let v = vote_labels(&neighbors(&["1", "2", "3"]), &repo).unwrap();
        assert_eq!(v, BTreeMap::from([("a".into(), 2), ("b".into(), 1), ("c".into(), 1)]));
        assert!(vote_labels(&[], &repo).unwrap().is_empty());
        let same = vote_labels(&neighbors(&["2", "2", "2"]), &repo).unwrap();
        assert_eq!(same, BTreeMap::from([("a".into(), 3)]));
    }

    #[test]
    fn support_selection() {
        let v = |pairs: &[(&str, usize)]| pairs.iter().map(|(l, c)| (l.to_string(), *c)).collect::<BTreeMap<_, _>>();
        assert_eq!(select_by_support(&v(&[("a", 2), ("b", 1), ("c", 1)]), 2).unwrap(), BTreeSet::from(["a"]));
        assert_eq!(select_by_support(&v(&[("a", 2), ("b", 2), ("c", 1)]), 2).unwrap(), BTreeSet::from(["a", "b"]));
        assert!(select_by_support(&v(&[("a", 1), ("b", 1)]), 2).is_none());
        assert!(select_by_support(&BTreeMap::new(), 1).is_none());
    }

    fn stub_repo(embedder: &StubEmbedder) -> LabeledRepository {
        let items = [("r1", "Do you encrypt backups?", "Backups"), ("r2", "Are backups tested?", "Backups"), ("r3", "Is MFA on?", "MFA")];
        LabeledRepository::from_entries(
            items
                .iter()
                .map(|(id, text, label)| {
                    RepositoryEntry::new(Question::new(*id, *text).unwrap(), [SemanticLabel::new(label).unwrap()].into_iter().collect(), Provenance::ClusterLlm)
                        .with_embedding(EmbeddingVector::new(embedder.embed_batch(&[text.to_string()]).unwrap().remove(0)).unwrap())
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn knn_path_spends_no_tokens_and_fallback_does() {
        let embedder = StubEmbedder::new("stub", 16);
        let repo = stub_repo(&embedder);
        let cache = EmbeddingCache::new();
        let fallback = ScriptedAnnotator::new(vec![FixtureEntry {
            members: vec!["new".into()],
            labels: vec!["Vendor Risk".into()],
            prompt_tokens: Some(30),
            completion_tokens: Some(4),
        }]);
        let meter = UsageMeter::new();
        let q = Question::new("new", "Do you manage suppliers?").unwrap();

        let config = KnnConfig { k_neighbors: 3, min_support: 2 };
        let p = Predictor::new(&repo, config, &embedder, &cache, &fallback, LabelingPolicy::default()).unwrap();
        let out = p.predict(&q, &meter).unwrap();
        assert_eq!(out.method, PredictionMethod::Knn);
        assert_eq!(out.labels.canonicals(), ["backups"]);
        assert_eq!(meter.usage(Phase::KnnPrediction).total_tokens(), 0);
        assert_eq!(meter.usage(Phase::FallbackAnnotation).calls, 0);

        let strict = KnnConfig { k_neighbors: 3, min_support: 3 };
        let out = predict_labels(&q, &repo, strict, &embedder, &cache, &fallback, LabelingPolicy::default(), &meter).unwrap();
        assert_eq!(out.method, PredictionMethod::LlmFallback);
        assert_eq!(out.labels.canonicals(), ["vendor risk"]);
        assert_eq!(meter.usage(Phase::FallbackAnnotation).total_tokens(), 34);
        assert_eq!(meter.usage(Phase::KnnPrediction).total_tokens(), 0);
        assert_eq!(
            out.to_json(),
            format!(
                r#"{{"id":"new","labels":["Vendor Risk"],"method":"llm-fallback","neighbors":{},"votes":{{"backups":2,"mfa":1}}}}"#,
                serde_json::to_string(&out.neighbors).unwrap()
            )
        );
    }

    #[test]
    fn scaling_stored_vectors_changes_nothing() {
        let embedder = StubEmbedder::new("stub", 16);
        let repo = stub_repo(&embedder);
        let scaled = repo
            .with_embeddings(repo.entries().iter().map(|e| e.embedding.as_ref().unwrap().scaled(7.5).unwrap()).collect())
            .unwrap();
        let q = EmbeddingVector::new(embedder.embed_batch(&["Are backups offsite?".into()]).unwrap().remove(0)).unwrap();
        let a = top_k_neighbors(&q, &repo, 2).unwrap();
        let b = top_k_neighbors(&q, &scaled, 2).unwrap();
        assert_eq!(a.iter().map(|n| &n.id).collect::<Vec<_>>(), b.iter().map(|n| &n.id).collect::<Vec<_>>());
        for (x, y) in a.iter().zip(&b) {
            assert!((x.similarity - y.similarity).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(KnnConfig { k_neighbors: 0, min_support: 2 }.validate().is_err());
        assert!(KnnConfig { k_neighbors: 1, min_support: 0 }.validate().is_err());
        assert!(serde_json::from_str::<KnnConfig>(r#"{"k":3}"#).is_err());
    }
}
