use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tabfp::embed::{encode_texts, Provider, ProviderConfig};
use tabfp::Error;

#[derive(Clone)]
struct Stub {
    dim: usize,
    /// Requests to fail with 503 before answering.
    failures: Arc<AtomicUsize>,
    calls: Arc<AtomicUsize>,
}

/// Each text becomes a vector whose first entry is its length and whose
/// second entry is its first byte, so the test can check ordering.
async fn embed(State(stub): State<Stub>, Json(body): Json<Value>) -> Result<Json<Value>, StatusCode> {
    stub.calls.fetch_add(1, Ordering::SeqCst);
    if stub
        .failures
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |f| f.checked_sub(1))
        .is_ok()
    {
        return Err(StatusCode::SERVICE_UNAVAILABLE);
    }
    let texts = body["texts"].as_array().unwrap();
    let out: Vec<Vec<f64>> = texts
        .iter()
        .map(|t| {
            let t = t.as_str().unwrap();
            let mut v = vec![0.0; stub.dim];
            v[0] = t.len() as f64;
            v[1] = t.as_bytes()[0] as f64;
            v
        })
        .collect();
    Ok(Json(json!({ "embeddings": out })))
}

fn serve(dim: usize, failures: usize) -> (String, Arc<AtomicUsize>) {
    let calls = Arc::new(AtomicUsize::new(0));
    let stub = Stub {
        dim,
        failures: Arc::new(AtomicUsize::new(failures)),
        calls: calls.clone(),
    };
    let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            let app = Router::new().route("/embed", post(embed)).with_state(stub);
            axum::serve(listener, app).await.unwrap();
        });
    });
    (format!("http://{}", rx.recv().unwrap()), calls)
}

fn config(url: &str, dim: usize) -> ProviderConfig {
    ProviderConfig {
        provider: Provider::HttpService { url: Some(url.to_string()) },
        d_e: dim,
        batch_size: 2,
        max_in_flight: 2,
        timeout_secs: 5,
        ..Default::default()
    }
}

#[test]
fn columns_follow_text_order_across_batches() {
    let (url, calls) = serve(384, 0);
    let texts = ["a", "bb", "ccc", "dddd", "eeeee"];
    let e = encode_texts("d", &texts, &config(&url, 384)).unwrap();
    assert_eq!((e.d_e(), e.m()), (384, 5));
    for (k, t) in texts.iter().enumerate() {
        assert_eq!(e.columns[(0, k)], t.len() as f64);
        assert_eq!(e.columns[(1, k)], t.as_bytes()[0] as f64);
    }
    assert_eq!(calls.load(Ordering::SeqCst), 3);
    assert!(e.provider_tag.starts_with("http:"));
}

#[test]
fn transient_failures_are_retried() {
    let (url, calls) = serve(16, 2);
    let e = encode_texts("d", &["x"], &config(&url, 16)).unwrap();
    assert_eq!(e.columns[(0, 0)], 1.0);
    assert_eq!(calls.load(Ordering::SeqCst), 3);
}

#[test]
fn persistent_failure_is_service_unavailable() {
    let (url, calls) = serve(16, 100);
    let err = encode_texts("d", &["x"], &config(&url, 16)).unwrap_err();
    assert!(matches!(err, Error::ServiceUnavailable(_)), "{err}");
    assert_eq!(calls.load(Ordering::SeqCst), 4);
}

#[test]
fn wrong_dimension_is_rejected() {
    let (url, _) = serve(10, 0);
    let err = encode_texts("d", &["x", "y"], &config(&url, 384)).unwrap_err();
    assert!(matches!(err, Error::DimMismatch { expected: 384, got: 10 }));
}

#[test]
fn endpoint_from_environment() {
    let (url, _) = serve(8, 0);
    std::env::set_var(tabfp::embed::ENDPOINT_ENV, &url);
    let cfg = ProviderConfig {
        provider: Provider::HttpService { url: None },
        d_e: 8,
        ..Default::default()
    };
    let e = encode_texts("d", &["abc"], &cfg).unwrap();
    assert_eq!(e.columns[(0, 0)], 3.0);
}
