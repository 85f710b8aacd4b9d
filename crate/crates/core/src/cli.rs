//! `sssl` command line. Standard output carries JSON only; progress and
//! diagnostics go to standard error.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::annotation::Annotator;
use crate::config::PipelineConfig;
use crate::embedding::{embed_texts, Embedder, EmbeddingCache};
use crate::error::{Error, Result};
use crate::eval::{compare_strategies, judge_labels, run_strategy, RunContext, StrategyName, StrategySpec};
use crate::knn::{PredictionMethod, Predictor};
use crate::pipeline::{build_repository, Providers};
use crate::repository::{load_questions, load_repository, save_repository, Phase, QuestionSet, UsageMeter};
use crate::retrieval::{
    bm25_build, bm25_retrieve, build_label_index, retrieve_by_labels, retrieve_by_question_similarity, Aggregation,
    Method, RetrievalQuery,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sssl", version, about = "Semantic labeling and label-space retrieval for security questionnaires")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a labeled repository from unlabeled questions.
    Build {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Predict labels for new questions from their neighbors.
    Predict {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        repo: PathBuf,
        /// Neighbor count (overrides the configuration).
        #[arg(long)]
        k: Option<usize>,
        /// Write a new snapshot that includes fallback-labeled questions.
        #[arg(long, requires = "out")]
        persist: bool,
        /// Snapshot path used with --persist.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Rank repository questions for a free-text request.
    Retrieve {
        query: String,
        #[arg(long)]
        repo: PathBuf,
        #[arg(long, default_value = "labels", value_parser = ["labels", "dense", "bm25"])]
        method: String,
        /// Label score aggregation (default from the configuration).
        #[arg(long, value_parser = ["mean", "max"])]
        agg: Option<String>,
        /// Result count (default from the configuration).
        #[arg(long)]
        top: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Run labeling strategies on one corpus and compare their cost.
    Eval {
        #[arg(long)]
        questions: PathBuf,
        /// Comma-separated strategy names.
        #[arg(long, value_delimiter = ',', required = true)]
        strategy: Vec<String>,
        /// Existing repository for sssl-knn-phase (built in-run when absent).
        #[arg(long)]
        repo: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Pre-compute embeddings into the configured cache.
    EmbedCache {
        #[arg(long)]
        questions: Option<PathBuf>,
        /// Also cache the repository's label embeddings.
        #[arg(long)]
        repo: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Entry point; returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{rendered}")
            } else {
                write!(stdout, "{rendered}")
            };
            return code;
        }
    };
    let mut io = Io { stdout, stderr };
    let outcome = match cli.command {
        Command::Build { questions, out, common } => cmd_build(&questions, &out, &common, &mut io),
        Command::Predict {
            questions,
            repo,
            k,
            persist,
            out,
            common,
        } => cmd_predict(&questions, &repo, k, persist.then_some(out).flatten(), &common, &mut io),
        Command::Retrieve {
            query,
            repo,
            method,
            agg,
            top,
            common,
        } => cmd_retrieve(&query, &repo, &method, agg.as_deref(), top, &common, &mut io),
        Command::Eval {
            questions,
            strategy,
            repo,
            out,
            common,
        } => cmd_eval(&questions, &strategy, repo.as_deref(), out.as_deref(), &common, &mut io),
        Command::EmbedCache { questions, repo, common } => cmd_embed_cache(questions.as_deref(), repo.as_deref(), &common, &mut io),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(io.stderr, "sssl: error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(io.stderr, "sssl: error: {e}");
            EXIT_RUNTIME
        }
    }
}

struct Io<'a> {
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

impl Io<'_> {
    fn progress(&mut self, msg: impl AsRef<str>) {
        let _ = writeln!(self.stderr, "sssl: {}", msg.as_ref());
    }

    fn emit(&mut self, line: &str) -> CliResult<()> {
        writeln!(self.stdout, "{line}").map_err(|e| Failure::Runtime(Error::io("<stdout>", e)))
    }
}

/// Configuration, providers and cache for one command.
struct Session {
    config: PipelineConfig,
    embedder: Box<dyn Embedder>,
    annotator: Box<dyn Annotator>,
    cache: EmbeddingCache,
}

impl Session {
    fn open(common: &Common, required: bool) -> CliResult<Self> {
        let mut config = match &common.config {
            Some(path) => PipelineConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))?,
            None if required => return Err(Failure::Usage("--config is required for this command".into())),
            None => PipelineConfig::default(),
        };
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        let embedder = config.embedding.build().map_err(|e| Failure::Usage(e.to_string()))?;
        let annotator = config
            .annotator
            .build(&config.base_dir)
            .map_err(|e| Failure::Usage(e.to_string()))?;
        let cache = match config.cache_path() {
            Some(p) => EmbeddingCache::load(p)?,
            None => EmbeddingCache::new(),
        };
        Ok(Session {
            config,
            embedder,
            annotator,
            cache,
        })
    }

    fn providers(&self) -> Providers<'_> {
        Providers {
            embedder: self.embedder.as_ref(),
            annotator: self.annotator.as_ref(),
            cache: &self.cache,
        }
    }

    fn save_cache(&self) -> Result<()> {
        match self.config.cache_path() {
            Some(p) => self.cache.save(p),
            None => Ok(()),
        }
    }
}

fn meter_json(meter: &UsageMeter) -> serde_json::Value {
    serde_json::to_value(meter.snapshot()).expect("meter serializes")
}

fn report_meters(io: &mut Io<'_>, meter: &UsageMeter) {
    for (phase, u) in meter.snapshot() {
        io.progress(format!(
            "{phase}: {} call(s), {} prompt + {} completion tokens, {:.3} s, {} label(s)",
            u.calls, u.prompt_tokens, u.completion_tokens, u.wall_time_s, u.labels_produced
        ));
    }
}

fn cmd_build(questions: &Path, out: &Path, common: &Common, io: &mut Io<'_>) -> CliResult<()> {
    let session = Session::open(common, true)?;
    let corpus = load_questions(questions)?;
    io.progress(format!("building repository from {} question(s)", corpus.len()));
    let meter = UsageMeter::new();
    let built = build_repository(&corpus, &session.config.build_settings(), session.providers(), &meter)?;
    save_repository(&built.repository, out)?;
    session.save_cache()?;
    report_meters(io, &meter);
    if !built.pcm_converged {
        io.progress(format!("warning: clustering stopped at the iteration cap ({})", built.pcm_iterations));
    }
    let summary = json!({
        "repository": out.display().to_string(),
        "entries": built.repository.len(),
        "labels": built.repository.label_count(),
        "clusters": built.raw_cluster_count,
        "deduped_clusters": built.clusters.len(),
        "fallback": built.fallback_ids,
        "phases": meter_json(&meter),
    });
    io.emit(&summary.to_string())
}

fn cmd_predict(
    questions: &Path,
    repo_path: &Path,
    k: Option<usize>,
    persist_to: Option<PathBuf>,
    common: &Common,
    io: &mut Io<'_>,
) -> CliResult<()> {
    let session = Session::open(common, false)?;
    let mut knn = session.config.knn;
    if let Some(k) = k {
        knn.k_neighbors = k;
        knn.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let queries = load_questions(questions)?;
    let repo = load_repository(repo_path)?;
    let meter = UsageMeter::new();
    let predictor = Predictor::new(
        &repo,
        knn,
        session.embedder.as_ref(),
        &session.cache,
        session.annotator.as_ref(),
        session.config.annotator.policy(),
    )?;
    let outcomes = predictor.predict_all(queries.as_slice(), &meter)?;
    for (o, _) in &outcomes {
        io.emit(&o.to_json())?;
    }
    if let Some(out) = persist_to {
        let extra = queries
            .iter()
            .zip(&outcomes)
            .filter(|(_, (o, _))| o.method == PredictionMethod::LlmFallback)
            .map(|(q, (o, e))| o.to_entry(q.clone(), Some(e.clone())))
            .collect::<Vec<_>>();
        let added = extra.len();
        let snapshot = repo.with_appended(extra)?;
        save_repository(&snapshot, &out)?;
        io.progress(format!("persisted {added} fallback-labeled question(s) to {}", out.display()));
    }
    session.save_cache()?;
    report_meters(io, &meter);
    Ok(())
}

fn cmd_retrieve(
    query: &str,
    repo_path: &Path,
    method: &str,
    agg: Option<&str>,
    top: Option<usize>,
    common: &Common,
    io: &mut Io<'_>,
) -> CliResult<()> {
    let method: Method = method.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let session = Session::open(common, false)?;
    let aggregation = match agg {
        Some(a) => a.parse::<Aggregation>().map_err(|e| Failure::Usage(e.to_string()))?,
        None => session.config.retrieval.aggregation,
    };
    let top = top.unwrap_or(session.config.retrieval.top);
    let q = RetrievalQuery::new(query, aggregation, top).map_err(|e| Failure::Usage(e.to_string()))?;
    let repo = load_repository(repo_path)?;
    let meter = UsageMeter::new();
    let result = match method {
        Method::Labels => {
            let index = build_label_index(&repo, session.embedder.as_ref(), &session.cache, &meter)?;
            retrieve_by_labels(&q, &repo, &index, session.embedder.as_ref(), &session.cache, &meter)?
        }
        Method::Dense => retrieve_by_question_similarity(&q, &repo, session.embedder.as_ref(), &session.cache, &meter)?,
        Method::Bm25 => {
            let corpus = QuestionSet::new(repo.entries().iter().map(|e| e.question.clone()).collect())?;
            bm25_build(&corpus).and_then(|idx| bm25_retrieve(query, &idx, top))?
        }
    };
    session.save_cache()?;
    io.emit(&result.to_json())
}

fn cmd_eval(
    questions: &Path,
    strategies: &[String],
    repo_path: Option<&Path>,
    out: Option<&Path>,
    common: &Common,
    io: &mut Io<'_>,
) -> CliResult<()> {
    let names = strategies
        .iter()
        .map(|s| s.trim().parse::<StrategyName>())
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let session = Session::open(common, true)?;
    let judge = match &session.config.judge {
        Some(j) => Some(j.build(&session.config.base_dir).map_err(|e| Failure::Usage(e.to_string()))?),
        None => None,
    };
    let corpus = load_questions(questions)?;
    let ctx = RunContext {
        providers: session.providers(),
        settings: session.config.build_settings(),
        knn: session.config.knn,
        manifest: session.config.manifest(),
    };

    let mut reference = match repo_path {
        Some(p) => Some(load_repository(p)?),
        None => None,
    };
    let mut reports = Vec::with_capacity(names.len());
    for name in names {
        io.progress(format!("running {name}"));
        let meter = UsageMeter::new();
        let mut report = match name {
            StrategyName::LlmPerQuestion => run_strategy(StrategySpec::LlmPerQuestion, &corpus, &ctx, &meter)?,
            StrategyName::SsslLlmPhase => run_strategy(StrategySpec::SsslLlmPhase, &corpus, &ctx, &meter)?,
            StrategyName::SsslKnnPhase => {
                if reference.is_none() {
                    io.progress("building a reference repository for the kNN phase (not metered)");
                    reference = Some(build_repository(&corpus, &ctx.settings, ctx.providers, &UsageMeter::new())?.repository);
                }
                let repository = reference.as_ref().expect("reference repository is set");
                run_strategy(StrategySpec::SsslKnnPhase { repository }, &corpus, &ctx, &meter)?
            }
        };
        if let Some(judge) = &judge {
            report.judge = Some(judge_labels(&report.to_repository(&corpus)?, judge.as_ref())?);
        }
        io.progress(format!(
            "{name}: {} call(s), {} token(s), {} label(s), {:.3} s",
            report.calls,
            report.total_tokens(),
            report.labels_count,
            report.wall_time_s
        ));
        reports.push(report);
    }
    let comparison = if reports.len() >= 2 { Some(compare_strategies(&reports)?) } else { None };
    let doc = json!({ "reports": reports, "comparison": comparison });
    session.save_cache()?;
    match out {
        Some(path) => {
            let text = serde_json::to_string_pretty(&doc).expect("eval document serializes") + "\n";
            std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
            io.emit(&json!({ "report": path.display().to_string(), "comparison": doc["comparison"] }).to_string())
        }
        None => io.emit(&doc.to_string()),
    }
}

fn cmd_embed_cache(questions: Option<&Path>, repo_path: Option<&Path>, common: &Common, io: &mut Io<'_>) -> CliResult<()> {
    let session = Session::open(common, true)?;
    if session.config.cache_path().is_none() {
        return Err(Failure::Usage("paths.embedding_cache is not configured".into()));
    }
    if questions.is_none() && repo_path.is_none() {
        return Err(Failure::Usage("give --questions and/or --repo".into()));
    }
    let meter = UsageMeter::new();
    let mut texts = Vec::new();
    if let Some(q) = questions {
        texts.extend(load_questions(q)?.texts());
    }
    if let Some(r) = repo_path {
        let repo = load_repository(r)?;
        texts.extend(repo.entries().iter().map(|e| e.question.text.clone()));
        texts.extend(repo.inventory().values().map(|l| l.surface.clone()));
    }
    embed_texts(&texts, session.embedder.as_ref(), &session.cache, &meter)?;
    session.save_cache()?;
    let u = meter.usage(Phase::Embedding);
    io.emit(&json!({ "texts": texts.len(), "cached": session.cache.len(), "provider_calls": u.calls }).to_string())
}
