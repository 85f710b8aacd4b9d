//! Question ranking: in label space, by direct question similarity, and by
//! BM25.

mod bm25;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bm25::{bm25_build, bm25_retrieve, tokenize, Bm25Index, DEFAULT_B, DEFAULT_K1};

use crate::embedding::{cosine_similarity, embed_texts, Embedder, EmbeddingCache, EmbeddingVector};
use crate::error::{Error, Result};
use crate::repository::{LabeledRepository, Phase, SemanticLabel, UsageMeter};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Mean => "mean",
            Aggregation::Max => "max",
        }
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            other => Err(Error::InvalidInput(format!("unknown aggregation {other:?} (expected mean or max)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Labels,
    Dense,
    Bm25,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Labels => "labels",
            Method::Dense => "dense",
            Method::Bm25 => "bm25",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "labels" => Ok(Method::Labels),
            "dense" => Ok(Method::Dense),
            "bm25" => Ok(Method::Bm25),
            other => Err(Error::InvalidInput(format!(
                "unknown retrieval method {other:?} (expected labels, dense or bm25)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalQuery {
    pub text: String,
    pub aggregation: Aggregation,
    pub r: usize,
}

impl RetrievalQuery {
    pub fn new(text: impl Into<String>, aggregation: Aggregation, r: usize) -> Result<Self> {
        if r < 1 {
            return Err(Error::InvalidInput("result count must be >= 1".into()));
        }
        Ok(RetrievalQuery {
            text: text.into(),
            aggregation,
            r,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMatch {
    pub label: String,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredQuestion {
    pub id: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<LabelMatch>>,
}

fn aggregation_field<S: serde::Serializer>(agg: &Option<Aggregation>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(agg.map_or("n/a", Aggregation::as_str))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedResult {
    pub query: String,
    pub method: Method,
    /// `None` for methods that do not aggregate (serialized as `"n/a"`).
    #[serde(serialize_with = "aggregation_field")]
    pub aggregation: Option<Aggregation>,
    pub results: Vec<ScoredQuestion>,
}

impl RankedResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ranked result serializes")
    }
}

/// Score descending, then id ascending; truncated to `r`.
pub(crate) fn rank(mut scored: Vec<ScoredQuestion>, r: usize) -> Vec<ScoredQuestion> {
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    scored.truncate(r);
    scored
}

/// One embedding per canonical label, computed from the inventory surface.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelIndex {
    vectors: BTreeMap<String, EmbeddingVector>,
}

impl LabelIndex {
    pub fn from_vectors(vectors: BTreeMap<String, EmbeddingVector>) -> Self {
        LabelIndex { vectors }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, canonical: &str) -> Option<&EmbeddingVector> {
        self.vectors.get(canonical)
    }
}

/// Embeds every inventory label once. If the batched request fails, labels
/// are retried one at a time so the error names the label at fault.
pub fn build_label_index(
    repo: &LabeledRepository,
    embedder: &dyn Embedder,
    cache: &EmbeddingCache,
    meter: &UsageMeter,
) -> Result<LabelIndex> {
    if repo.inventory().is_empty() {
        return Err(Error::InvalidInput("repository has no labels to index".into()));
    }
    let labels: Vec<&SemanticLabel> = repo.inventory().values().collect();
    let surfaces: Vec<String> = labels.iter().map(|l| l.surface.clone()).collect();
    let vectors = match embed_texts(&surfaces, embedder, cache, meter) {
        Ok(v) => v,
        Err(_) => {
            let mut v = Vec::with_capacity(labels.len());
            for label in &labels {
                let one = embed_texts(std::slice::from_ref(&label.surface), embedder, cache, meter).map_err(|e| {
                    Error::LabelEmbedding {
                        label: label.surface.clone(),
                        source: Box::new(e),
                    }
                })?;
                v.extend(one);
            }
            v
        }
    };
    Ok(LabelIndex {
        vectors: labels.iter().map(|l| l.canonical.clone()).zip(vectors).collect(),
    })
}

fn label_cosines<'l>(
    query: &EmbeddingVector,
    labels: impl IntoIterator<Item = &'l SemanticLabel>,
    index: &LabelIndex,
) -> Result<Vec<LabelMatch>> {
    labels
        .into_iter()
        .map(|l| {
            let e = index.get(&l.canonical).ok_or_else(|| Error::MissingLabel(l.canonical.clone()))?;
            Ok(LabelMatch {
                label: l.surface.clone(),
                cosine: cosine_similarity(query, e)?,
            })
        })
        .collect()
}

fn aggregate(matches: &[LabelMatch], aggregation: Aggregation) -> f64 {
    match aggregation {
        Aggregation::Mean => matches.iter().map(|m| m.cosine).sum::<f64>() / matches.len() as f64,
        Aggregation::Max => matches.iter().map(|m| m.cosine).fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Mean or max cosine between the query and the question's labels.
pub fn score_question<'l>(
    query: &EmbeddingVector,
    labels: impl IntoIterator<Item = &'l SemanticLabel>,
    index: &LabelIndex,
    aggregation: Aggregation,
) -> Result<f64> {
    let matches = label_cosines(query, labels, index)?;
    if matches.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty label set".into()));
    }
    Ok(aggregate(&matches, aggregation))
}

fn embed_query(text: &str, embedder: &dyn Embedder, cache: &EmbeddingCache, meter: &UsageMeter) -> Result<EmbeddingVector> {
    Ok(embed_texts(&[text.to_string()], embedder, cache, meter)?.remove(0))
}

/// Ranks questions by how well their labels match the query.
pub fn retrieve_by_labels(
    query: &RetrievalQuery,
    repo: &LabeledRepository,
    index: &LabelIndex,
    embedder: &dyn Embedder,
    cache: &EmbeddingCache,
    meter: &UsageMeter,
) -> Result<RankedResult> {
    if let Some(e) = repo.entries().iter().find(|e| e.labels.is_empty()) {
        return Err(Error::Unlabeled(e.id().to_string()));
    }
    let q = embed_query(&query.text, embedder, cache, meter)?;
    meter.timed(Phase::Retrieval, || {
        let mut scored = Vec::with_capacity(repo.len());
        for entry in repo.entries() {
            let matches = label_cosines(&q, &entry.labels, index)?;
            scored.push(ScoredQuestion {
                id: entry.id().to_string(),
                score: aggregate(&matches, query.aggregation),
                labels: Some(matches),
            });
        }
        Ok(RankedResult {
            query: query.text.clone(),
            method: Method::Labels,
            aggregation: Some(query.aggregation),
            results: rank(scored, query.r),
        })
    })
}

/// Ranks questions by cosine between the query and the stored question
/// embeddings.
pub fn retrieve_by_question_similarity(
    query: &RetrievalQuery,
    repo: &LabeledRepository,
    embedder: &dyn Embedder,
    cache: &EmbeddingCache,
    meter: &UsageMeter,
) -> Result<RankedResult> {
    let q = embed_query(&query.text, embedder, cache, meter)?;
    meter.timed(Phase::Retrieval, || {
        let mut scored = Vec::with_capacity(repo.len());
        for entry in repo.entries() {
            let e = entry.embedding.as_ref().ok_or_else(|| Error::MissingEmbedding(entry.id().to_string()))?;
            scored.push(ScoredQuestion {
                id: entry.id().to_string(),
                score: cosine_similarity(&q, e)?,
                labels: None,
            });
        }
        Ok(RankedResult {
            query: query.text.clone(),
            method: Method::Dense,
            aggregation: None,
            results: rank(scored, query.r),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::StubEmbedder;
    use crate::repository::{Provenance, Question, RepositoryEntry};

    fn label(s: &str) -> SemanticLabel {
        SemanticLabel::new(s).unwrap()
    }

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    fn index(pairs: &[(&str, &[f64])]) -> LabelIndex {
        LabelIndex::from_vectors(pairs.iter().map(|(l, x)| (l.to_string(), v(x))).collect())
    }

    #[test]
    fn identity_and_split_cosines() {
        let idx = index(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let q = v(&[1.0, 0.0]);
        for agg in [Aggregation::Mean, Aggregation::Max] {
            assert_eq!(score_question(&q, &[label("a")], &idx, agg).unwrap(), 1.0);
        }
        let both = [label("a"), label("b")];
        assert_eq!(score_question(&q, &both, &idx, Aggregation::Mean).unwrap(), 0.5);
        assert_eq!(score_question(&q, &both, &idx, Aggregation::Max).unwrap(), 1.0);
    }

    #[test]
    fn three_label_mean() {
        let unit = |c: f64| [c, (1.0 - c * c).sqrt()];
        let (a, b, c) = (unit(0.2), unit(0.4), unit(0.9));
        let idx = index(&[("a", &a), ("b", &b), ("c", &c)]);
        let s = score_question(&v(&[1.0, 0.0]), &[label("a"), label("b"), label("c")], &idx, Aggregation::Mean).unwrap();
        assert!((s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn missing_or_empty_labels_error() {
        let idx = index(&[("a", &[1.0])]);
        assert!(matches!(score_question(&v(&[1.0]), &[label("zz")], &idx, Aggregation::Mean), Err(Error::MissingLabel(_))));
        assert!(score_question(&v(&[1.0]), &[], &idx, Aggregation::Mean).is_err());
    }

    fn repo(embedder: &StubEmbedder) -> LabeledRepository {
        let rows = [("q1", "Are logs kept?", &["Logging"][..]), ("q2", "Is MFA used?", &["MFA"]), ("q3", "Is MFA enforced?", &["MFA"])];
        LabeledRepository::from_entries(
            rows.iter()
                .map(|(id, text, ls)| {
                    RepositoryEntry::new(Question::new(*id, *text).unwrap(), ls.iter().map(|l| label(l)).collect(), Provenance::ClusterLlm)
                        .with_embedding(EmbeddingVector::new(embedder.embed_batch(&[text.to_string()]).unwrap().remove(0)).unwrap())
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn label_space_ranking_and_index_cache() {
        let embedder = StubEmbedder::new("stub", 64);
        let repo = repo(&embedder);
        let cache = EmbeddingCache::new();
        let meter = UsageMeter::new();
        let idx = build_label_index(&repo, &embedder, &cache, &meter).unwrap();
        assert_eq!(idx.len(), 2);
        let calls = meter.usage(Phase::Embedding).calls;
        build_label_index(&repo, &embedder, &cache, &meter).unwrap();
        assert_eq!(meter.usage(Phase::Embedding).calls, calls);

        let q = RetrievalQuery::new("MFA", Aggregation::Mean, 10).unwrap();
        let r = retrieve_by_labels(&q, &repo, &idx, &embedder, &cache, &meter).unwrap();
        assert_eq!(r.results.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["q2", "q3", "q1"]);
        assert!((r.results[0].score - 1.0).abs() < 1e-12);
        assert_eq!(r.results[0].score, r.results[1].score);
        let json = r.to_json();
        assert!(json.starts_with(r#"{"query":"MFA","method":"labels","aggregation":"mean","results":[{"id":"q2","score":"#));
        assert!(json.contains(r#""labels":[{"label":"MFA","cosine":"#));
    }

    #[test]
    fn dense_ranking_identity_and_top_one() {
        let embedder = StubEmbedder::new("stub", 64);
        let repo = repo(&embedder);
        let (cache, meter) = (EmbeddingCache::new(), UsageMeter::new());
        let q = RetrievalQuery::new("Is MFA enforced?", Aggregation::Mean, 1).unwrap();
        let r = retrieve_by_question_similarity(&q, &repo, &embedder, &cache, &meter).unwrap();
        assert_eq!(r.results.len(), 1);
        assert_eq!(r.results[0].id, "q3");
        assert!((r.results[0].score - 1.0).abs() < 1e-12);
        assert!(r.to_json().contains(r#""aggregation":"n/a""#));
        assert!(!r.to_json().contains("\"labels\""));
    }

    #[test]
    fn parse_flags() {
        assert_eq!("max".parse::<Aggregation>().unwrap(), Aggregation::Max);
        assert_eq!("bm25".parse::<Method>().unwrap(), Method::Bm25);
        assert!("sparse".parse::<Method>().is_err());
        assert!(RetrievalQuery::new("x", Aggregation::Mean, 0).is_err());
    }
}
