//! Domain types shared by every phase: questions, semantic labels, the
//! labeled repository snapshot and per-phase usage accounting.
//!
//! Both file formats are JSON Lines (UTF-8, LF). Questions carry `id` and
//! `text`; repository records add `labels`, `provenance` and an optional
//! cached `embedding`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::annotation::canonicalize;
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};

/// A single short natural-language question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let question = Question {
            id: id.into(),
            text: text.into(),
        };
        if question.text.trim().is_empty() {
            return Err(Error::EmptyText(question.id));
        }
        Ok(question)
    }
}

/// Ordered corpus of questions with unique ids. Iteration follows load order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QuestionSet {
    questions: Vec<Question>,
}

impl QuestionSet {
    pub fn new(questions: Vec<Question>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(questions.len());
        for q in &questions {
            if q.text.trim().is_empty() {
                return Err(Error::EmptyText(q.id.clone()));
            }
            if !seen.insert(q.id.as_str()) {
                return Err(Error::DuplicateId(q.id.clone()));
            }
        }
        Ok(QuestionSet { questions })
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Question> {
        self.questions.iter()
    }

    pub fn as_slice(&self) -> &[Question] {
        &self.questions
    }

    pub fn get(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.questions.iter().map(|q| q.id.clone()).collect()
    }

    pub fn texts(&self) -> Vec<String> {
        self.questions.iter().map(|q| q.text.clone()).collect()
    }
}

impl<'a> IntoIterator for &'a QuestionSet {
    type Item = &'a Question;
    type IntoIter = std::slice::Iter<'a, Question>;

    fn into_iter(self) -> Self::IntoIter {
        self.questions.iter()
    }
}

/// Reads a questions JSONL file. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn load_questions(path: impl AsRef<Path>) -> Result<QuestionSet> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut questions = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Question = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        if q.text.trim().is_empty() {
            return Err(Error::EmptyText(q.id));
        }
        if !seen.insert(q.id.clone()) {
            return Err(Error::DuplicateId(q.id));
        }
        questions.push(q);
    }
    Ok(QuestionSet { questions })
}

/// A short descriptor. Identity is the canonical form only; `surface` keeps
/// the first-seen spelling for display.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemanticLabel {
    pub canonical: String,
    pub surface: String,
}

impl SemanticLabel {
    /// Builds a label from a raw string (see [`crate::annotation::normalize_label`]).
    pub fn new(raw: &str) -> Result<Self> {
        crate::annotation::normalize_label(raw)
    }
}

impl PartialEq for SemanticLabel {
    fn eq(&self, other: &Self) -> bool {
        self.canonical == other.canonical
    }
}

impl Eq for SemanticLabel {}

impl std::hash::Hash for SemanticLabel {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.canonical.hash(state);
    }
}

impl PartialOrd for SemanticLabel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SemanticLabel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.canonical.cmp(&other.canonical)
    }
}

impl fmt::Display for SemanticLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface)
    }
}

/// Insertion-ordered set of labels, unique by canonical form.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(Vec<SemanticLabel>);

impl LabelSet {
    pub fn new() -> Self {
        LabelSet(Vec::new())
    }

    /// Adds `label` unless its canonical form is already present.
    pub fn insert(&mut self, label: SemanticLabel) -> bool {
        if self.contains(&label.canonical) {
            false
        } else {
            self.0.push(label);
            true
        }
    }

    pub fn extend_from(&mut self, other: &LabelSet) {
        for label in other.iter() {
            self.insert(label.clone());
        }
    }

    pub fn contains(&self, canonical: &str) -> bool {
        self.0.iter().any(|l| l.canonical == canonical)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SemanticLabel> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn canonicals(&self) -> Vec<&str> {
        self.0.iter().map(|l| l.canonical.as_str()).collect()
    }

    /// Set equality on canonical forms, ignoring order.
    pub fn same_members(&self, other: &LabelSet) -> bool {
        self.len() == other.len() && self.iter().all(|l| other.contains(&l.canonical))
    }
}

impl FromIterator<SemanticLabel> for LabelSet {
    fn from_iter<I: IntoIterator<Item = SemanticLabel>>(iter: I) -> Self {
        let mut set = LabelSet::new();
        for label in iter {
            set.insert(label);
        }
        set
    }
}

impl<'a> IntoIterator for &'a LabelSet {
    type Item = &'a SemanticLabel;
    type IntoIter = std::slice::Iter<'a, SemanticLabel>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Mechanism that produced an entry's labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ClusterLlm,
    Knn,
    LlmFallback,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::ClusterLlm => "cluster-llm",
            Provenance::Knn => "knn",
            Provenance::LlmFallback => "llm-fallback",
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cluster-llm" => Ok(Provenance::ClusterLlm),
            "knn" => Ok(Provenance::Knn),
            "llm-fallback" => Ok(Provenance::LlmFallback),
            other => Err(Error::UnknownProvenance(other.to_string())),
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepositoryEntry {
    pub question: Question,
    pub labels: LabelSet,
    pub provenance: Provenance,
    pub embedding: Option<EmbeddingVector>,
}

impl RepositoryEntry {
    pub fn new(question: Question, labels: LabelSet, provenance: Provenance) -> Self {
        RepositoryEntry {
            question,
            labels,
            provenance,
            embedding: None,
        }
    }

    pub fn with_embedding(mut self, embedding: EmbeddingVector) -> Self {
        self.embedding = Some(embedding);
        self
    }

    pub fn id(&self) -> &str {
        &self.question.id
    }
}

/// Immutable snapshot of labeled questions plus the label inventory.
///
/// Phases derive new snapshots (`with_*`) instead of mutating in place.
#[derive(Debug, Clone, Default)]
pub struct LabeledRepository {
    entries: Vec<RepositoryEntry>,
    positions: HashMap<String, usize>,
    inventory: BTreeMap<String, SemanticLabel>,
}

impl PartialEq for LabeledRepository {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.inventory == other.inventory
    }
}

impl LabeledRepository {
    /// Builds a snapshot whose inventory is the union of the entry label
    /// sets. Surface forms in the inventory are the first seen in entry order.
    /// Entries with empty label sets are accepted here (annotation may still
    /// be in progress) but rejected by [`LabeledRepository::validate`].
    pub fn from_entries(entries: Vec<RepositoryEntry>) -> Result<Self> {
        let mut inventory = BTreeMap::new();
        for entry in &entries {
            for label in &entry.labels {
                inventory
                    .entry(label.canonical.clone())
                    .or_insert_with(|| label.clone());
            }
        }
        let repo = Self::from_parts(entries, inventory)?;
        Ok(repo)
    }

    /// Assembles a snapshot from an explicit inventory without checking
    /// closure. Only duplicate ids are rejected, since lookups depend on them.
    pub fn from_parts(
        entries: Vec<RepositoryEntry>,
        inventory: BTreeMap<String, SemanticLabel>,
    ) -> Result<Self> {
        let mut positions = HashMap::with_capacity(entries.len());
        for (i, entry) in entries.iter().enumerate() {
            if positions.insert(entry.question.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(entry.question.id.clone()));
            }
        }
        Ok(LabeledRepository {
            entries,
            positions,
            inventory,
        })
    }

    /// Checks every repository invariant: inventory closure, non-empty label
    /// sets, and a single embedding dimension.
    pub fn validate(&self) -> Result<()> {
        let mut used: HashSet<&str> = HashSet::new();
        let mut dims: Option<usize> = None;
        for entry in &self.entries {
            if entry.labels.is_empty() {
                return Err(Error::Invariant(format!(
                    "entry {:?} has an empty label set",
                    entry.question.id
                )));
            }
            if entry.question.text.trim().is_empty() {
                return Err(Error::EmptyText(entry.question.id.clone()));
            }
            for label in &entry.labels {
                if !self.inventory.contains_key(&label.canonical) {
                    return Err(Error::Invariant(format!(
                        "label {:?} of entry {:?} is missing from the inventory",
                        label.canonical, entry.question.id
                    )));
                }
                used.insert(label.canonical.as_str());
            }
            if let Some(embedding) = &entry.embedding {
                match dims {
                    None => dims = Some(embedding.dims()),
                    Some(d) if d != embedding.dims() => {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            actual: embedding.dims(),
                        })
                    }
                    _ => {}
                }
            }
        }
        if let Some(unused) = self.inventory.keys().find(|k| !used.contains(k.as_str())) {
            return Err(Error::Invariant(format!(
                "inventory label {unused:?} is not used by any entry"
            )));
        }
        Ok(())
    }

    pub fn entries(&self) -> &[RepositoryEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&RepositoryEntry> {
        self.positions.get(id).map(|&i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Label inventory keyed by canonical form.
    pub fn inventory(&self) -> &BTreeMap<String, SemanticLabel> {
        &self.inventory
    }

    pub fn label_count(&self) -> usize {
        self.inventory.len()
    }

    /// New snapshot with `extra` appended after the existing entries.
    pub fn with_appended(&self, extra: Vec<RepositoryEntry>) -> Result<Self> {
        let mut entries = self.entries.clone();
        entries.extend(extra);
        Self::from_entries(entries)
    }

    /// New snapshot where the entry with the same id is replaced.
    pub fn with_replaced(&self, entry: RepositoryEntry) -> Result<Self> {
        let Some(&pos) = self.positions.get(&entry.question.id) else {
            return Err(Error::InvalidInput(format!(
                "no entry with id {:?}",
                entry.question.id
            )));
        };
        let mut entries = self.entries.clone();
        entries[pos] = entry;
        Self::from_entries(entries)
    }

    /// New snapshot with embeddings attached in entry order.
    pub fn with_embeddings(&self, embeddings: Vec<EmbeddingVector>) -> Result<Self> {
        if embeddings.len() != self.entries.len() {
            return Err(Error::InvalidInput(format!(
                "{} embeddings for {} entries",
                embeddings.len(),
                self.entries.len()
            )));
        }
        let entries = self
            .entries
            .iter()
            .cloned()
            .zip(embeddings)
            .map(|(entry, e)| entry.with_embedding(e))
            .collect();
        Self::from_parts(entries, self.inventory.clone())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RepositoryRecord {
    id: String,
    text: String,
    labels: Vec<SemanticLabel>,
    provenance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f64>>,
}

/// Writes one JSONL record per entry, after validating the snapshot.
pub fn save_repository(repo: &LabeledRepository, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    repo.validate()?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for entry in repo.entries() {
        let record = RepositoryRecord {
            id: entry.question.id.clone(),
            text: entry.question.text.clone(),
            labels: entry.labels.iter().cloned().collect(),
            provenance: entry.provenance.as_str().to_string(),
            embedding: entry.embedding.as_ref().map(|e| e.values().to_vec()),
        };
        let line = serde_json::to_string(&record).map_err(|e| Error::Protocol(e.to_string()))?;
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a repository JSONL file and re-validates all invariants.
pub fn load_repository(path: impl AsRef<Path>) -> Result<LabeledRepository> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let record: RepositoryRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let provenance: Provenance = record.provenance.parse()?;
        let question = Question::new(record.id, record.text)?;
        let mut labels = LabelSet::new();
        for label in record.labels {
            let expected = canonicalize(&label.surface);
            if label.canonical.is_empty() || label.canonical != expected {
                return Err(parse_err(format!(
                    "label canonical {:?} does not match surface {:?}",
                    label.canonical, label.surface
                )));
            }
            labels.insert(label);
        }
        let mut entry = RepositoryEntry::new(question, labels, provenance);
        if let Some(values) = record.embedding {
            entry.embedding = Some(EmbeddingVector::new(values).map_err(|e| parse_err(e.to_string()))?);
        }
        entries.push(entry);
    }
    let repo = LabeledRepository::from_entries(entries)?;
    repo.validate()?;
    Ok(repo)
}

/// Pipeline phases tracked by [`UsageMeter`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Embedding,
    ClusterAnnotation,
    KnnPrediction,
    FallbackAnnotation,
    Retrieval,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::Embedding,
        Phase::ClusterAnnotation,
        Phase::KnnPrediction,
        Phase::FallbackAnnotation,
        Phase::Retrieval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Embedding => "embedding",
            Phase::ClusterAnnotation => "cluster-annotation",
            Phase::KnnPrediction => "knn-prediction",
            Phase::FallbackAnnotation => "fallback-annotation",
            Phase::Retrieval => "retrieval",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseUsage {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_time_s: f64,
    pub labels_produced: u64,
}

impl PhaseUsage {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// Thread-safe call/token/time counters keyed by phase. Counters only grow,
/// except `labels_produced`, which each phase sets once it knows its output.
#[derive(Debug, Default)]
pub struct UsageMeter {
    phases: Mutex<BTreeMap<Phase, PhaseUsage>>,
}

impl UsageMeter {
    pub fn new() -> Self {
        Self::default()
    }

    fn with<R>(&self, phase: Phase, f: impl FnOnce(&mut PhaseUsage) -> R) -> R {
        let mut phases = self.phases.lock().unwrap_or_else(|p| p.into_inner());
        f(phases.entry(phase).or_default())
    }

    pub fn record_call(&self, phase: Phase, prompt_tokens: u64, completion_tokens: u64) {
        self.with(phase, |u| {
            u.calls += 1;
            u.prompt_tokens += prompt_tokens;
            u.completion_tokens += completion_tokens;
        });
    }

    pub fn record_wall_time(&self, phase: Phase, elapsed: Duration) {
        self.with(phase, |u| u.wall_time_s += elapsed.as_secs_f64());
    }

    pub fn set_labels_produced(&self, phase: Phase, count: u64) {
        self.with(phase, |u| u.labels_produced = count);
    }

    pub fn usage(&self, phase: Phase) -> PhaseUsage {
        self.phases
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .get(&phase)
            .copied()
            .unwrap_or_default()
    }

    pub fn snapshot(&self) -> BTreeMap<Phase, PhaseUsage> {
        self.phases.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Runs `f` and adds its wall time to `phase`.
    pub fn timed<R>(&self, phase: Phase, f: impl FnOnce() -> R) -> R {
        let start = std::time::Instant::now();
        let out = f();
        self.record_wall_time(phase, start.elapsed());
        out
    }
}
