//! C ABI over `sssl-core`.
//!
//! Every fallible function returns an [`SsslStatus`]; on failure a message is
//! available from [`sssl_last_error_message`] on the same thread. Objects are
//! opaque handles released with their `_free` function. Strings returned
//! through `char **` outputs are owned by the caller and released with
//! [`sssl_string_free`]. Panics never cross the boundary; they surface as
//! `SSSL_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sssl_core::annotation::Annotator;
use sssl_core::config::PipelineConfig;
use sssl_core::embedding::{cosine_similarity, deterministic_stub_embed, Embedder, EmbeddingCache, EmbeddingVector};
use sssl_core::knn::Predictor;
use sssl_core::repository::{load_repository, LabeledRepository, Question, QuestionSet, UsageMeter};
use sssl_core::retrieval::{
    bm25_build, bm25_retrieve, build_label_index, retrieve_by_labels, retrieve_by_question_similarity, Aggregation,
    Method, RetrievalQuery,
};
use sssl_core::Error;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsslStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Io = 4,
    Parse = 5,
    Config = 6,
    Provider = 7,
    EmptyRepository = 8,
    Internal = 99,
}

/// Loaded, validated repository snapshot.
pub struct SsslRepository {
    inner: LabeledRepository,
}

/// Configuration plus the embedding and annotation backends it describes.
pub struct SsslSession {
    config: PipelineConfig,
    embedder: Box<dyn Embedder>,
    annotator: Box<dyn Annotator>,
    cache: EmbeddingCache,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> SsslStatus {
    match err {
        Error::Io { .. } => SsslStatus::Io,
        Error::Parse { .. } | Error::UnknownProvenance(_) | Error::DuplicateId(_) | Error::Invariant(_) => SsslStatus::Parse,
        Error::Config(_) => SsslStatus::Config,
        Error::Provider { .. } | Error::Protocol(_) | Error::Annotation { .. } | Error::EmptyResponse => SsslStatus::Provider,
        Error::EmptyRepository => SsslStatus::EmptyRepository,
        Error::Phase { source, .. } | Error::LabelEmbedding { source, .. } => status_of(source),
        _ => SsslStatus::InvalidInput,
    }
}

/// Runs `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<(), (SsslStatus, String)>) -> SsslStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SsslStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            SsslStatus::Internal
        }
    }
}

type FfiResult<T> = Result<T, (SsslStatus, String)>;

fn core<T>(r: sssl_core::Result<T>) -> FfiResult<T> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> FfiResult<()> {
    if p.is_null() {
        Err((SsslStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or a NUL-terminated string valid for reads.
unsafe fn text<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SsslStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn give_string(s: String, out: *mut *mut c_char) -> FfiResult<()> {
    let c = CString::new(s).map_err(|_| (SsslStatus::Internal, "output contains NUL".to_string()))?;
    // SAFETY: callers check `out` for null before producing output.
    unsafe { *out = c.into_raw() };
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn sssl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sssl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a repository JSONL file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sssl_repository_open(path: *const c_char, out: *mut *mut SsslRepository) -> SsslStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = text(path, "path")?;
        let inner = core(load_repository(path))?;
        *out = Box::into_raw(Box::new(SsslRepository { inner }));
        Ok(())
    })
}

/// # Safety
/// `repo` must be null or a handle from [`sssl_repository_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sssl_repository_free(repo: *mut SsslRepository) {
    if !repo.is_null() {
        drop(Box::from_raw(repo));
    }
}

/// Number of entries.
///
/// # Safety
/// `repo` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sssl_repository_len(repo: *const SsslRepository, out: *mut usize) -> SsslStatus {
    guard(|| {
        non_null(repo, "repo")?;
        non_null(out, "out")?;
        *out = (*repo).inner.len();
        Ok(())
    })
}

/// Number of distinct labels in the inventory.
///
/// # Safety
/// `repo` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sssl_repository_label_count(repo: *const SsslRepository, out: *mut usize) -> SsslStatus {
    guard(|| {
        non_null(repo, "repo")?;
        non_null(out, "out")?;
        *out = (*repo).inner.label_count();
        Ok(())
    })
}

/// Opens a session from a JSON configuration file, or with defaults when
/// `config_path` is null.
///
/// # Safety
/// `config_path` must be null or a NUL-terminated string; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sssl_session_new(config_path: *const c_char, out: *mut *mut SsslSession) -> SsslStatus {
    guard(|| {
        non_null(out, "out")?;
        let config = if config_path.is_null() {
            PipelineConfig::default()
        } else {
            core(PipelineConfig::load(text(config_path, "config_path")?))?
        };
        let embedder = core(config.embedding.build())?;
        let annotator = core(config.annotator.build(&config.base_dir))?;
        let cache = match config.cache_path() {
            Some(p) => core(EmbeddingCache::load(p))?,
            None => EmbeddingCache::new(),
        };
        *out = Box::into_raw(Box::new(SsslSession {
            config,
            embedder,
            annotator,
            cache,
        }));
        Ok(())
    })
}

/// # Safety
/// `session` must be null or a handle from [`sssl_session_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sssl_session_free(session: *mut SsslSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Predicts labels for one question; writes the prediction JSON to `out_json`.
///
/// # Safety
/// Handles must be live; strings NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn sssl_predict_json(
    session: *const SsslSession,
    repo: *const SsslRepository,
    id: *const c_char,
    question: *const c_char,
    out_json: *mut *mut c_char,
) -> SsslStatus {
    guard(|| {
        non_null(session, "session")?;
        non_null(repo, "repo")?;
        non_null(out_json, "out_json")?;
        let (s, r) = (&*session, &*repo);
        let q = core(Question::new(text(id, "id")?, text(question, "question")?))?;
        let predictor = core(Predictor::new(
            &r.inner,
            s.config.knn,
            s.embedder.as_ref(),
            &s.cache,
            s.annotator.as_ref(),
            s.config.annotator.policy(),
        ))?;
        let outcome = core(predictor.predict(&q, &UsageMeter::new()))?;
        give_string(outcome.to_json(), out_json)
    })
}

/// Ranks repository questions for `query`. `method` is `labels`, `dense` or
/// `bm25`; `aggregation` is `mean`, `max` or null for the configured default.
///
/// # Safety
/// Handles must be live; strings NUL-terminated (or null where allowed);
/// `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn sssl_retrieve_json(
    session: *const SsslSession,
    repo: *const SsslRepository,
    query: *const c_char,
    method: *const c_char,
    aggregation: *const c_char,
    top: usize,
    out_json: *mut *mut c_char,
) -> SsslStatus {
    guard(|| {
        non_null(session, "session")?;
        non_null(repo, "repo")?;
        non_null(out_json, "out_json")?;
        let (s, r) = (&*session, &*repo);
        let query = text(query, "query")?;
        let method: Method = core(text(method, "method")?.parse())?;
        let aggregation: Aggregation = if aggregation.is_null() {
            s.config.retrieval.aggregation
        } else {
            core(text(aggregation, "aggregation")?.parse())?
        };
        let q = core(RetrievalQuery::new(query, aggregation, top))?;
        let meter = UsageMeter::new();
        let (embedder, cache, repo) = (s.embedder.as_ref(), &s.cache, &r.inner);
        let result = core(match method {
            Method::Labels => {
                build_label_index(repo, embedder, cache, &meter).and_then(|idx| retrieve_by_labels(&q, repo, &idx, embedder, cache, &meter))
            }
            Method::Dense => retrieve_by_question_similarity(&q, repo, embedder, cache, &meter),
            Method::Bm25 => QuestionSet::new(repo.entries().iter().map(|e| e.question.clone()).collect())
                .and_then(|c| bm25_build(&c))
                .and_then(|idx| bm25_retrieve(query, &idx, top)),
        })?;
        give_string(result.to_json(), out_json)
    })
}

/// Cosine similarity of two `len`-long vectors.
///
/// # Safety
/// `a` and `b` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sssl_cosine_similarity(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> SsslStatus {
    guard(|| {
        non_null(a, "a")?;
        non_null(b, "b")?;
        non_null(out, "out")?;
        let va = core(EmbeddingVector::new(std::slice::from_raw_parts(a, len).to_vec()))?;
        let vb = core(EmbeddingVector::new(std::slice::from_raw_parts(b, len).to_vec()))?;
        *out = core(cosine_similarity(&va, &vb))?;
        Ok(())
    })
}

/// Deterministic offline embedding of `text` into `dims` doubles.
///
/// # Safety
/// `text` must be NUL-terminated; `out` must have room for `dims` doubles.
#[no_mangle]
pub unsafe extern "C" fn sssl_stub_embed(text_ptr: *const c_char, dims: usize, out: *mut f64) -> SsslStatus {
    guard(|| {
        non_null(out, "out")?;
        let t = text(text_ptr, "text")?;
        if dims == 0 {
            return Err((SsslStatus::InvalidInput, "dims must be >= 1".into()));
        }
        let v = deterministic_stub_embed(t, dims);
        std::slice::from_raw_parts_mut(out, dims).copy_from_slice(v.values());
        Ok(())
    })
}

/// Knee index of a non-increasing curve, or -1 when there is none.
///
/// # Safety
/// `curve` must point to `len` readable doubles (or be null with `len` 0);
/// `out_index` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sssl_detect_knee(curve: *const f64, len: usize, sensitivity: f64, out_index: *mut i64) -> SsslStatus {
    guard(|| {
        non_null(out_index, "out_index")?;
        let values: &[f64] = if len == 0 {
            &[]
        } else {
            non_null(curve, "curve")?;
            std::slice::from_raw_parts(curve, len)
        };
        let knee = core(sssl_core::clustering::detect_knee_with_sensitivity(values, sensitivity))?;
        *out_index = knee.map_or(-1, |i| i as i64);
        Ok(())
    })
}

/// Saves the session's embedding cache if one is configured.
///
/// # Safety
/// `session` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sssl_session_save_cache(session: *const SsslSession) -> SsslStatus {
    guard(|| {
        non_null(session, "session")?;
        let s = &*session;
        if let Some(p) = s.config.cache_path() {
            core(s.cache.save(Path::new(&p)))?;
        }
        Ok(())
    })
}
