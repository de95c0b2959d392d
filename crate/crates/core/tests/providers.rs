use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use divret::dense::{hash_embed, EmbeddingProvider};
use divret::providers::stub::{embed_response, StubResponse, StubServer};
use divret::providers::{chat, ChatMessage, ChatProvider, HttpChat, HttpEmbedder, ProviderConfig};
use divret::Error;
use serde_json::json;

fn config(server: &StubServer) -> ProviderConfig {
    let mut c = ProviderConfig::new(server.base_url());
    c.model_name = "m".into();
    c.backoff_ms = 1;
    c
}

#[test]
fn chat_returns_stub_content() {
    let server = StubServer::start(|_| StubResponse::chat("Yes")).unwrap();
    let reply = chat(&[ChatMessage::user("Is it?")], &config(&server)).unwrap();
    assert_eq!(reply, "Yes");
    assert_eq!(server.requests(), 1);
}

#[test]
fn server_errors_are_retried() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = Arc::clone(&hits);
    let server = StubServer::start(move |_| match h.fetch_add(1, Ordering::SeqCst) {
        0 | 1 => StubResponse::status(500, "boom"),
        _ => StubResponse::chat("ok"),
    })
    .unwrap();
    let provider = HttpChat::new(config(&server)).unwrap();
    assert_eq!(provider.chat(&[ChatMessage::user("x")]).unwrap(), "ok");
    assert_eq!(provider.client().retries(), 2);
    assert_eq!(server.requests(), 3);
}

#[test]
fn retries_run_out() {
    let server = StubServer::start(|_| StubResponse::status(503, "down")).unwrap();
    let mut cfg = config(&server);
    cfg.max_retries = 2;
    let err = chat(&[ChatMessage::user("x")], &cfg).unwrap_err();
    assert!(matches!(err, Error::RetriesExhausted { attempts: 3, .. }), "{err}");
    assert_eq!(server.requests(), 3);
}

#[test]
fn auth_failure_is_not_retried() {
    let server = StubServer::start(|_| StubResponse::status(401, "bad token")).unwrap();
    let err = chat(&[ChatMessage::user("x")], &config(&server)).unwrap_err();
    assert!(matches!(err, Error::Auth { status: 401, .. }), "{err}");
    assert_eq!(server.requests(), 1);
}

#[test]
fn bearer_token_comes_from_named_env_var() {
    std::env::set_var("DIVRET_TEST_TOKEN", "s3cret");
    let server = StubServer::start(|req| StubResponse::chat(req.authorization.as_deref().unwrap_or("none"))).unwrap();
    let mut cfg = config(&server);
    cfg.auth_env_var = Some("DIVRET_TEST_TOKEN".into());
    assert_eq!(chat(&[ChatMessage::user("x")], &cfg).unwrap(), "Bearer s3cret");
}

#[test]
fn embeddings_align_with_inputs() {
    let server = StubServer::start(|req| embed_response(&req.body, 32)).unwrap();
    let embedder = HttpEmbedder::new(config(&server), Some(32)).unwrap();
    let texts: Vec<String> = ["alpha", "beta gamma", "alpha"].iter().map(|s| s.to_string()).collect();
    let vs = embedder.embed_batch(&texts).unwrap();
    assert_eq!(vs.len(), 3);
    for (t, v) in texts.iter().zip(&vs) {
        assert_eq!(v, &hash_embed(t, 32));
    }
    assert!(embedder.embed_batch(&[]).is_err());
}

#[test]
fn ragged_embeddings_are_rejected() {
    let server = StubServer::start(|_| StubResponse::json(json!({"vectors": [[1.0, 0.0], [1.0]]}))).unwrap();
    let embedder = HttpEmbedder::new(config(&server), None).unwrap();
    let err = embedder.embed_batch(&["a".into(), "b".into()]).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
}

#[test]
fn in_flight_requests_are_capped() {
    let server = StubServer::start(|_| StubResponse::chat("ok").delayed(Duration::from_millis(40))).unwrap();
    let mut cfg = config(&server);
    cfg.max_in_flight = 2;
    let provider = Arc::new(HttpChat::new(cfg).unwrap());
    let threads: Vec<_> = (0..8)
        .map(|i| {
            let p = Arc::clone(&provider);
            std::thread::spawn(move || p.chat(&[ChatMessage::user(format!("q{i}"))]).unwrap())
        })
        .collect();
    for t in threads {
        t.join().unwrap();
    }
    assert_eq!(server.requests(), 8);
    assert!(server.peak_in_flight() <= 2, "server saw {}", server.peak_in_flight());
    assert!(provider.client().peak_in_flight() <= 2);
}
