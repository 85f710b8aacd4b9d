//! Repository construction: embed, cluster, threshold, annotate, aggregate.

use crate::annotation::{aggregate_question_labels, annotate_clusters, annotate_single, Annotator, ClusterLabels, LabelingPolicy};
use crate::clustering::{dedupe_clusters, extract_clusters_with, run_pcm, ClusterSet, KneeConfig, PcmConfig};
use crate::embedding::{embed_texts, Embedder, EmbeddingCache, EmbeddingVector};
use crate::error::{Error, Result};
use crate::repository::{LabeledRepository, Phase, Provenance, QuestionSet, RepositoryEntry, UsageMeter};

/// Backends used by a run.
#[derive(Clone, Copy)]
pub struct Providers<'a> {
    pub embedder: &'a dyn Embedder,
    pub annotator: &'a dyn Annotator,
    pub cache: &'a EmbeddingCache,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildSettings {
    pub pcm: PcmConfig,
    pub knee: KneeConfig,
    pub policy: LabelingPolicy,
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    /// Fully labeled and embedded snapshot.
    pub repository: LabeledRepository,
    /// Clusters before deduplication.
    pub raw_cluster_count: usize,
    pub clusters: ClusterSet,
    pub cluster_labels: Vec<ClusterLabels>,
    /// Questions that inherited no label and went through fallback.
    pub fallback_ids: Vec<String>,
    pub pcm_converged: bool,
    pub pcm_iterations: usize,
}

/// Builds a labeled repository from an unlabeled corpus. Errors are wrapped
/// with the name of the failing phase.
pub fn build_repository(
    corpus: &QuestionSet,
    settings: &BuildSettings,
    providers: Providers<'_>,
    meter: &UsageMeter,
) -> Result<BuildOutput> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("corpus is empty".into()));
    }
    let embeddings = embed_texts(&corpus.texts(), providers.embedder, providers.cache, meter).map_err(|e| e.in_phase("embedding"))?;
    let ids = corpus.ids();

    let (raw_cluster_count, clusters, converged, iterations) = cluster(&embeddings, &ids, settings).map_err(|e| e.in_phase("clustering"))?;

    let cluster_labels = annotate_clusters(&clusters, corpus, providers.annotator, settings.policy, meter)
        .map_err(|e| e.in_phase("cluster-annotation"))?;
    let (repo, unlabeled) =
        aggregate_question_labels(&clusters, &cluster_labels, corpus).map_err(|e| e.in_phase("aggregation"))?;

    let repo = relabel(repo, &unlabeled, providers.annotator, settings.policy, meter).map_err(|e| e.in_phase("fallback-annotation"))?;
    let repository = repo.with_embeddings(embeddings)?;
    repository.validate()?;
    Ok(BuildOutput {
        repository,
        raw_cluster_count,
        clusters,
        cluster_labels,
        fallback_ids: unlabeled,
        pcm_converged: converged,
        pcm_iterations: iterations,
    })
}

fn cluster(embeddings: &[EmbeddingVector], ids: &[String], settings: &BuildSettings) -> Result<(usize, ClusterSet, bool, usize)> {
    settings.knee.validate()?;
    if embeddings.len() < 2 {
        // nothing to compare against: the single question is its own cluster
        let clusters = ClusterSet {
            clusters: vec![crate::clustering::Cluster {
                cluster_id: 0,
                threshold: 1.0,
                members: ids.to_vec(),
            }],
        };
        return Ok((1, clusters, true, 0));
    }
    let memberships = run_pcm(embeddings, &settings.pcm)?;
    let raw = extract_clusters_with(&memberships, ids, &settings.knee)?;
    Ok((raw.len(), dedupe_clusters(&raw), memberships.converged, memberships.iterations))
}

fn relabel(
    repo: LabeledRepository,
    unlabeled: &[String],
    annotator: &dyn Annotator,
    policy: LabelingPolicy,
    meter: &UsageMeter,
) -> Result<LabeledRepository> {
    if unlabeled.is_empty() {
        return Ok(repo);
    }
    let mut entries: Vec<RepositoryEntry> = repo.entries().to_vec();
    meter.timed(Phase::FallbackAnnotation, || -> Result<()> {
        for entry in entries.iter_mut().filter(|e| unlabeled.iter().any(|id| id == e.id())) {
            entry.labels = annotate_single(&entry.question, annotator, policy, meter, Phase::FallbackAnnotation)?;
            entry.provenance = Provenance::LlmFallback;
        }
        Ok(())
    })?;
    LabeledRepository::from_entries(entries)
}
