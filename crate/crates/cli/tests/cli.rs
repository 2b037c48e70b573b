use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tabfp::embed::load_embedding;
use tabfp::serialize::load_fingerprint;

const CATALOG: [&str; 6] = ["mixture_a", "mixture_b", "lowrank_a", "lowrank_b", "ar_a", "seasonal_a"];

fn tabfp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabfp"))
        .args(args)
        .current_dir(dir)
        .env_remove("TABFP_EMBED_ENDPOINT")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tabfp(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json_out(dir: &Path, args: &[&str]) -> Value {
    let mut full = vec!["--format", "json"];
    full.extend_from_slice(args);
    serde_json::from_str(&ok(dir, &full)).unwrap()
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas").join(format!("{name}.schema.json"));
    let s: Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    jsonschema::validator_for(&s).unwrap()
}

fn assert_valid(name: &str, v: &Value) {
    let errors: Vec<String> = schema(name).iter_errors(v).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}\n{v}");
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// Synthetic tables plus fingerprints and fallback embeddings for `ids`.
fn workspace(ids: &[&str]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--out", "data"]);
    for id in ids {
        ok(d, &["fingerprint", "--input", &format!("data/{id}.csv"), "--out", &format!("{id}.fingerprint.jsonl")]);
        ok(
            d,
            &["embed", "--fallback", "--fingerprint", &format!("{id}.fingerprint.jsonl"), "--out", &format!("{id}.emb.bin")],
        );
    }
    dir
}

fn build_catalog(d: &Path) {
    for id in CATALOG {
        ok(
            d,
            &[
                "catalog",
                "add",
                "--catalog",
                "cat",
                "--fingerprint",
                &format!("{id}.fingerprint.jsonl"),
                "--embedding",
                &format!("{id}.emb.bin"),
            ],
        );
    }
}

#[test]
fn json_outputs_match_schemas() {
    let dir = workspace(&["mixture_a", "mixture_a_twin"]);
    let d = dir.path();

    let text = std::fs::read_to_string(d.join("mixture_a.fingerprint.jsonl")).unwrap();
    let mut lines = text.lines().map(|l| serde_json::from_str::<Value>(l).unwrap());
    let header = lines.next().unwrap();
    assert_valid("fingerprint-header", &header);
    assert_eq!(header["schema_version"], "tabfp-1");
    for s in lines {
        assert_valid("fingerprint-sentence", &s);
    }
    assert_valid("embedding-sidecar", &read_json(&d.join("mixture_a.emb.json")));
    assert_valid("truth-pairs", &read_json(&d.join("data/truth_pairs.json")));

    let dense = json_out(d, &["compare", "--a", "mixture_a.emb.bin", "--b", "mixture_a_twin.emb.bin"]);
    assert_valid("compare", &dense);
    let sparse = json_out(
        d,
        &["compare", "--a", "mixture_a.emb.bin", "--b", "mixture_a_twin.emb.bin", "--sparse", "--penalty", "0.5"],
    );
    assert_valid("alignment-report", &sparse);
    assert_eq!(sparse["pair"], json!(["mixture_a", "mixture_a_twin"]));
}

#[test]
fn multivariate_only_renders_matrix_sentences() {
    let dir = workspace(&[]);
    let d = dir.path();
    ok(d, &["fingerprint", "--input", "data/ar_a.csv", "--out", "full.jsonl"]);
    ok(d, &["fingerprint", "--input", "data/ar_a.csv", "--out", "multi.jsonl", "--ablation", "multivariate-only"]);
    let full = load_fingerprint(d.join("full.jsonl")).unwrap();
    let multi = load_fingerprint(d.join("multi.jsonl")).unwrap();
    assert!(!multi.sentences.is_empty() && multi.len() < full.len());
    assert!(multi.sentences.iter().all(|s| s.variable == "matrix" && s.text.starts_with("Variable: matrix")));
}

#[test]
fn private_fingerprint_is_reproducible() {
    let dir = workspace(&[]);
    let d = dir.path();
    for out in ["one.jsonl", "two.jsonl"] {
        ok(d, &["fingerprint", "--input", "data/lowrank_a.csv", "--out", out, "--dp-epsilon", "0.1"]);
    }
    ok(d, &["fingerprint", "--input", "data/lowrank_a.csv", "--out", "clear.jsonl"]);
    let one = std::fs::read(d.join("one.jsonl")).unwrap();
    assert_eq!(one, std::fs::read(d.join("two.jsonl")).unwrap());
    assert_ne!(one, std::fs::read(d.join("clear.jsonl")).unwrap());
}

#[test]
fn missing_endpoint_is_a_configuration_error() {
    let dir = workspace(&["ar_a"]);
    let out = tabfp(dir.path(), &["embed", "--fingerprint", "ar_a.fingerprint.jsonl", "--out", "x.emb.bin"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!dir.path().join("x.emb.bin").exists());
}

#[test]
fn unreadable_input_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tabfp(dir.path(), &["fingerprint", "--input", "absent.csv", "--out", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

/// Vector of a text: its length, its first byte, then zeros.
fn stub_vector(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[0] = text.len() as f64;
    v[1] = text.as_bytes()[0] as f64;
    v
}

fn serve_stub(dim: usize) -> String {
    let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            let app = Router::new().route(
                "/embed",
                post(move |Json(body): Json<Value>| async move {
                    let out: Vec<Vec<f64>> = body["texts"]
                        .as_array()
                        .unwrap()
                        .iter()
                        .map(|t| stub_vector(t.as_str().unwrap(), dim))
                        .collect();
                    Json(json!({ "embeddings": out }))
                }),
            );
            axum::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

#[test]
fn embed_uses_the_endpoint_from_the_environment() {
    let dir = workspace(&["ar_a"]);
    let d = dir.path();
    let url = serve_stub(16);
    let out = Command::new(env!("CARGO_BIN_EXE_tabfp"))
        .args(["embed", "--fingerprint", "ar_a.fingerprint.jsonl", "--out", "http.emb.bin", "--dim", "16"])
        .current_dir(d)
        .env("TABFP_EMBED_ENDPOINT", &url)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fp = load_fingerprint(d.join("ar_a.fingerprint.jsonl")).unwrap();
    let e = load_embedding(&d.join("http.emb.bin")).unwrap();
    assert_eq!(e.m(), fp.len());
    assert!(e.provider_tag.starts_with("http:"));
    for (k, text) in fp.texts().iter().enumerate() {
        let got: Vec<f64> = e.columns.column(k).iter().copied().collect();
        assert_eq!(got, stub_vector(text, 16));
    }
}

#[test]
fn self_comparison_has_unit_similarity() {
    let dir = workspace(&["seasonal_a"]);
    let out = ok(dir.path(), &["compare", "--a", "seasonal_a.emb.bin", "--b", "seasonal_a.emb.bin"]);
    assert!(out.contains("similarity 1.000000"), "{out}");
}

#[test]
fn minimum_penalty_selects_one_variable_per_side() {
    let dir = workspace(&["lowrank_a", "lowrank_b"]);
    let report = json_out(
        dir.path(),
        &["compare", "--a", "lowrank_a.emb.bin", "--b", "lowrank_b.emb.bin", "--sparse", "--penalty", "min"],
    );
    let components = report["components"].as_array().unwrap();
    assert!(!components.is_empty());
    for c in components {
        assert_eq!(c["side_a"].as_array().unwrap().len(), 1, "{c}");
        assert_eq!(c["side_b"].as_array().unwrap().len(), 1, "{c}");
    }
}

#[test]
fn permutation_selection_is_reproducible() {
    let dir = workspace(&["ar_a", "ar_b"]);
    let args = ["compare", "--a", "ar_a.emb.bin", "--b", "ar_b.emb.bin", "--sparse", "--permute", "25"];
    let one = json_out(dir.path(), &args);
    let two = json_out(dir.path(), &args);
    assert_eq!(one["penalty"], two["penalty"]);
    assert_eq!(one, two);
    assert!(one["penalty_scores"].as_array().is_some_and(|s| !s.is_empty()));
}

#[test]
fn catalog_clusters_and_queries() {
    let mut ids = CATALOG.to_vec();
    ids.push("mixture_a_twin");
    let dir = workspace(&ids);
    let d = dir.path();
    build_catalog(d);
    assert_valid("catalog-manifest", &read_json(&d.join("cat/manifest.json")));
    for id in CATALOG {
        assert!(d.join(format!("cat/{id}.fingerprint.jsonl")).exists());
        assert!(d.join(format!("cat/{id}.emb.bin")).exists());
    }

    ok(d, &["catalog", "build-distances", "--catalog", "cat", "--out", "d.csv"]);
    let csv = std::fs::read_to_string(d.join("d.csv")).unwrap();
    assert_eq!(csv.lines().count(), CATALOG.len() + 1);

    let summary = json_out(d, &["catalog", "cluster", "--distances", "d.csv", "--newick", "t.nwk", "--merges", "t.json", "--k", "2"]);
    assert_eq!(summary["merges"], 5);
    let merges = read_json(&d.join("t.json"));
    assert_valid("dendrogram", &merges);
    let newick = std::fs::read_to_string(d.join("t.nwk")).unwrap();
    assert!(newick.trim_end().ends_with(';'));
    assert!(CATALOG.iter().all(|id| newick.contains(id)));

    let q = json_out(d, &["catalog", "query", "--catalog", "cat", "--input", "mixture_a_twin.emb.bin", "--k", "3"]);
    assert_valid("query", &q);
    assert_eq!(q["neighbors"][0]["dataset_id"], "mixture_a");
    assert_eq!(q["neighbors"].as_array().unwrap().len(), 3);
}

#[test]
fn eval_and_sweep_outputs_match_schemas() {
    let dir = workspace(&[]);
    let d = dir.path();
    let data = d.join("small");
    std::fs::create_dir(&data).unwrap();
    for id in ["mixture_a", "mixture_a_twin", "ar_a", "ar_a_twin", "seasonal_a"] {
        std::fs::copy(d.join(format!("data/{id}.csv")), data.join(format!("{id}.csv"))).unwrap();
    }
    let pairs = json!({"pairs": [["mixture_a", "mixture_a_twin"], ["ar_a", "ar_a_twin"]]});
    std::fs::write(data.join("truth_pairs.json"), pairs.to_string()).unwrap();

    let summary = json_out(d, &["sweep", "--data", "small", "--out", ".", "--epsilons", "inf,10", "--k", "2"]);
    assert_valid("sweep-summary", &summary);
    assert_valid("sweep-summary", &read_json(&d.join("results/summary.json")));
    for eps in ["inf", "10"] {
        for f in ["distances.csv", "dendrogram.nwk", "dendrogram.json", "clusters.json", "entropy.csv"] {
            assert!(d.join("results").join(eps).join(f).exists(), "{eps}/{f}");
        }
    }

    let eval = json_out(d, &["eval", "--pairs", "small/truth_pairs.json", "--distances", "results/inf/distances.csv"]);
    assert_valid("eval", &eval);
    assert_eq!(eval["queries"], 4);
}
