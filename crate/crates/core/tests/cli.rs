//! The `sssl` command surface, driven in-process through `cli::run`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use serde_json::Value;
use sssl_core::repository::{load_repository, Provenance};

fn fixture(name: &str) -> OsString {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name).into_os_string()
}

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn sssl<I, S>(args: I) -> Run
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let argv: Vec<OsString> = std::iter::once(OsString::from("sssl")).chain(args.into_iter().map(Into::into)).collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = sssl_core::cli::run(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn json_lines(s: &str) -> Vec<Value> {
    s.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn predict(extra: &[&str]) -> Run {
    let mut args: Vec<OsString> = vec![
        "predict".into(),
        "--config".into(),
        fixture("config12.json"),
        "--questions".into(),
        fixture("new_questions.jsonl"),
        "--repo".into(),
        fixture("repository12.jsonl"),
    ];
    args.extend(extra.iter().map(OsString::from));
    sssl(args)
}

#[test]
fn build_writes_repository_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("repo.jsonl");
    let run = sssl([
        "build".into(),
        "--config".into(),
        fixture("config12.json"),
        "--questions".into(),
        fixture("questions12.jsonl"),
        "--out".into(),
        out.clone().into_os_string(),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let summary: Value = serde_json::from_str(&run.stdout).unwrap();
    assert_eq!(summary["entries"], 12);
    assert!(summary["deduped_clusters"].as_u64().unwrap() <= 11);
    assert!(summary["phases"]["cluster-annotation"]["calls"].as_u64().unwrap() >= 1);
    let repo = load_repository(&out).unwrap();
    assert_eq!(repo.len(), 12);
    repo.validate().unwrap();
}

#[test]
fn seed_flag_is_accepted_and_recorded_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let run_with = |name: &str| {
        let out = dir.path().join(name);
        let run = sssl([
            "build".into(),
            "--config".into(),
            fixture("config12.json"),
            "--questions".into(),
            fixture("questions12.jsonl"),
            "--out".into(),
            out.clone().into_os_string(),
            "--seed".into(),
            "11".into(),
        ]);
        assert_eq!(run.code, 0, "{}", run.stderr);
        std::fs::read(out).unwrap()
    };
    assert_eq!(run_with("a.jsonl"), run_with("b.jsonl"));
}

#[test]
fn predict_prints_one_line_per_question() {
    let run = predict(&[]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let lines = json_lines(&run.stdout);
    assert_eq!(lines.len(), 2);
    for line in &lines {
        assert_eq!(line["neighbors"].as_array().unwrap().len(), 5);
        assert!(matches!(line["method"].as_str(), Some("knn" | "llm-fallback")));
    }
    assert!(run.stderr.contains("knn-prediction: 0 call(s), 0 prompt + 0 completion tokens"));
}

#[test]
fn k_flag_limits_neighbors_and_forces_fallback() {
    let run = predict(&["--k", "1"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    for line in json_lines(&run.stdout) {
        assert_eq!(line["neighbors"].as_array().unwrap().len(), 1);
        // a single neighbor can never reach a support of two
        assert_eq!(line["method"], "llm-fallback");
    }
    assert_eq!(json_lines(&run.stdout)[0]["labels"][0], "Vendor Offboarding");
}

#[test]
fn persist_appends_fallback_entries() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grown.jsonl");
    let run = predict(&["--k", "1", "--persist", "--out", out.to_str().unwrap()]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let grown = load_repository(&out).unwrap();
    assert_eq!(grown.len(), 14);
    assert_eq!(grown.get("n01").unwrap().provenance, Provenance::LlmFallback);
    assert!(grown.get("n02").unwrap().embedding.is_some());
}

#[test]
fn retrieve_bm25_single_document() {
    let run = sssl([
        "retrieve".into(),
        "a".into(),
        "--repo".into(),
        fixture("bm25_repo.jsonl"),
        "--method".into(),
        "bm25".into(),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let v: Value = serde_json::from_str(&run.stdout).unwrap();
    assert_eq!(v["aggregation"], "n/a");
    assert!((v["results"][0]["score"].as_f64().unwrap() - 0.287682).abs() < 1e-6);
}

#[test]
fn retrieve_by_labels_reports_label_cosines() {
    for agg in ["mean", "max"] {
        let run = sssl([
            "retrieve".into(),
            "backup restore testing".into(),
            "--repo".into(),
            fixture("repository12.jsonl"),
            "--config".into(),
            fixture("config12.json"),
            "--agg".into(),
            agg.into(),
            "--top".into(),
            "3".into(),
        ]);
        assert_eq!(run.code, 0, "{}", run.stderr);
        let v: Value = serde_json::from_str(&run.stdout).unwrap();
        assert_eq!(v["method"], "labels");
        assert_eq!(v["aggregation"], agg);
        let results = v["results"].as_array().unwrap();
        assert_eq!(results.len(), 3);
        assert!(results.windows(2).all(|w| w[0]["score"].as_f64() >= w[1]["score"].as_f64()));
        assert!(!results[0]["labels"].as_array().unwrap().is_empty());
    }
}

#[test]
fn retrieve_dense_ranks_by_question_similarity() {
    let run = sssl([
        "retrieve".into(),
        "Do you test restores from backup?".into(),
        "--repo".into(),
        fixture("repository12.jsonl"),
        "--config".into(),
        fixture("config12.json"),
        "--method".into(),
        "dense".into(),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let v: Value = serde_json::from_str(&run.stdout).unwrap();
    assert_eq!(v["results"].as_array().unwrap().len(), 5);
    assert!(v["results"][0].get("labels").is_none() || v["results"][0]["labels"].is_null());
}

#[test]
fn eval_compares_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let out: PathBuf = dir.path().join("eval.json");
    let run = sssl([
        "eval".into(),
        "--config".into(),
        fixture("config12.json"),
        "--questions".into(),
        fixture("questions12.jsonl"),
        "--strategy".into(),
        "llm-per-question,sssl-llm-phase,sssl-knn-phase".into(),
        "--out".into(),
        out.clone().into_os_string(),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let v: Value = serde_json::from_str(&run.stdout).unwrap();
    let rows = v["comparison"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["calls"], 12);
    assert!(rows[1]["calls"].as_u64().unwrap() < 12);
    assert!(rows[1]["token_reduction_pct"].as_f64().unwrap() > 0.0);
    assert_eq!(rows[2]["tokens"], 0);
    assert_eq!(rows[2]["calls"], 0);
    assert_eq!(v["report"], out.display().to_string());
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(saved["comparison"], v["comparison"]);
    let reports = saved["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 3);
    assert!(reports.iter().all(|r| r["manifest"]["corpus_sha256"] == reports[0]["manifest"]["corpus_sha256"]));
    assert_eq!(reports[0]["manifest"]["seed"], 7);
    assert_eq!(reports[0]["assignments"].as_array().unwrap().len(), 12);
}

#[test]
fn usage_errors_exit_two() {
    let missing_config = sssl([
        "build".into(),
        "--questions".into(),
        fixture("questions12.jsonl"),
        "--out".into(),
        OsString::from("/tmp/never-written.jsonl"),
    ]);
    assert_eq!(missing_config.code, 2);
    assert!(missing_config.stderr.contains("--config"));

    let bad_method = sssl(["retrieve", "x", "--repo", "r.jsonl", "--method", "sparse"]);
    assert_eq!(bad_method.code, 2);

    let persist_without_out = predict(&["--persist"]);
    assert_eq!(persist_without_out.code, 2);

    let unknown_strategy = sssl([
        "eval".into(),
        "--config".into(),
        fixture("config12.json"),
        "--questions".into(),
        fixture("questions12.jsonl"),
        "--strategy".into(),
        "llm-per-answer".into(),
    ]);
    assert_eq!(unknown_strategy.code, 2);

    assert_eq!(sssl(["frobnicate"]).code, 2);
    assert!(sssl::<_, &str>([]).code == 2);
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"seed": 1, "embeding": {}}"#).unwrap();
    let run = sssl([
        "build".into(),
        "--config".into(),
        config.into_os_string(),
        "--questions".into(),
        fixture("questions12.jsonl"),
        "--out".into(),
        dir.path().join("r.jsonl").into_os_string(),
    ]);
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("embeding"), "{}", run.stderr);
}

#[test]
fn runtime_errors_exit_one() {
    let run = sssl([
        "retrieve".into(),
        "a".into(),
        "--repo".into(),
        OsString::from("/nonexistent/repo.jsonl"),
        "--method".into(),
        "bm25".into(),
    ]);
    assert_eq!(run.code, 1);
    assert!(run.stdout.is_empty());
}

#[test]
fn embed_cache_persists_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    let cache = dir.path().join("cache.jsonl");
    std::fs::write(
        &config,
        serde_json::json!({
            "embedding": {"kind": "deterministic-stub", "dims": 16},
            "paths": {"embedding_cache": cache},
        })
        .to_string(),
    )
    .unwrap();
    let run = sssl([
        "embed-cache".into(),
        "--config".into(),
        config.into_os_string(),
        "--questions".into(),
        fixture("questions12.jsonl"),
        "--repo".into(),
        fixture("repository12.jsonl"),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let lines = std::fs::read_to_string(&cache).unwrap().lines().count();
    assert!(lines >= 12, "{lines} cached vectors");
}
