//! Okapi BM25 over whitespace-free lowercase alphanumeric tokens, with the
//! non-negative `ln(1 + (N - df + 0.5) / (df + 0.5))` IDF.

use std::collections::HashMap;

use super::{rank, Method, RankedResult, ScoredQuestion};
use crate::error::{Error, Result};
use crate::repository::QuestionSet;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

/// Lowercase, split on every non-alphanumeric run, drop empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone)]
struct Document {
    id: String,
    term_counts: HashMap<String, u32>,
    length: usize,
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    docs: Vec<Document>,
    doc_freq: HashMap<String, usize>,
    avg_len: f64,
    pub k1: f64,
    pub b: f64,
}

impl Bm25Index {
    pub fn with_params(corpus: &QuestionSet, k1: f64, b: f64) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::InvalidInput("BM25 corpus is empty".into()));
        }
        if !(k1 >= 0.0 && (0.0..=1.0).contains(&b)) {
            return Err(Error::Config("BM25 needs k1 >= 0 and 0 <= b <= 1".into()));
        }
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut docs = Vec::with_capacity(corpus.len());
        for q in corpus {
            let tokens = tokenize(&q.text);
            if tokens.is_empty() {
                return Err(Error::InvalidInput(format!("question {:?} has no indexable terms", q.id)));
            }
            let mut term_counts: HashMap<String, u32> = HashMap::new();
            for t in &tokens {
                *term_counts.entry(t.clone()).or_insert(0) += 1;
            }
            for t in term_counts.keys() {
                *doc_freq.entry(t.clone()).or_insert(0) += 1;
            }
            docs.push(Document {
                id: q.id.clone(),
                term_counts,
                length: tokens.len(),
            });
        }
        let avg_len = docs.iter().map(|d| d.length as f64).sum::<f64>() / docs.len() as f64;
        Ok(Bm25Index {
            docs,
            doc_freq,
            avg_len,
            k1,
            b,
        })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Score of every document, in corpus order. Query terms repeat their
    /// contribution once per occurrence.
    pub fn scores(&self, query: &str) -> Vec<(String, f64)> {
        let terms = tokenize(query);
        self.docs
            .iter()
            .map(|d| {
                let norm = self.k1 * (1.0 - self.b + self.b * d.length as f64 / self.avg_len);
                let score = terms
                    .iter()
                    .map(|t| {
                        let tf = d.term_counts.get(t).copied().unwrap_or(0) as f64;
                        if tf == 0.0 {
                            0.0
                        } else {
                            self.idf(t) * tf * (self.k1 + 1.0) / (tf + norm)
                        }
                    })
                    .sum();
                (d.id.clone(), score)
            })
            .collect()
    }
}

pub fn bm25_build(corpus: &QuestionSet) -> Result<Bm25Index> {
    Bm25Index::with_params(corpus, DEFAULT_K1, DEFAULT_B)
}

/// Top-`r` documents. A query with no tokens yields an empty result.
pub fn bm25_retrieve(query: &str, index: &Bm25Index, r: usize) -> Result<RankedResult> {
    if r < 1 {
        return Err(Error::InvalidInput("result count must be >= 1".into()));
    }
    let scored = if tokenize(query).is_empty() {
        Vec::new()
    } else {
        index
            .scores(query)
            .into_iter()
            .map(|(id, score)| ScoredQuestion {
                id,
                score,
                labels: None,
            })
            .collect()
    };
    Ok(RankedResult {
        query: query.to_string(),
        method: Method::Bm25,
        aggregation: None,
        results: rank(scored, r),
    })
}
