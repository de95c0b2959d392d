//! Deterministic in-process HTTP server speaking the provider wire contract.
//!
//! Each request is answered by a responder closure; [`StubServer::fixtures`]
//! builds one from a digest → reply table so LLM-touching paths run offline.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

use super::request_digest;
use crate::dense::hash_embed;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct StubRequest {
    pub path: String,
    pub body: Value,
    pub digest: String,
    pub authorization: Option<String>,
}

#[derive(Debug, Clone)]
pub struct StubResponse {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl StubResponse {
    pub fn json(body: Value) -> Self {
        Self {
            status: 200,
            body: body.to_string(),
            delay: Duration::ZERO,
        }
    }

    pub fn chat(content: &str) -> Self {
        Self::json(json!({ "content": content }))
    }

    pub fn status(status: u16, body: impl Into<String>) -> Self {
        Self {
            status,
            body: body.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn delayed(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

type Responder = dyn Fn(&StubRequest) -> StubResponse + Send + Sync;

#[derive(Default)]
struct Stats {
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    log: Mutex<Vec<String>>,
}

pub struct StubServer {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    stats: Arc<Stats>,
    worker: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start<F>(responder: F) -> Result<Self>
    where
        F: Fn(&StubRequest) -> StubResponse + Send + Sync + 'static,
    {
        let server = tiny_http::Server::http("127.0.0.1:0")
            .map_err(|e| Error::Transport(format!("stub bind failed: {e}")))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Transport("stub has no ip address".into()))?;
        let server = Arc::new(server);
        let stats = Arc::new(Stats::default());
        let responder: Arc<Responder> = Arc::new(responder);

        let srv = Arc::clone(&server);
        let st = Arc::clone(&stats);
        let worker = std::thread::spawn(move || {
            for request in srv.incoming_requests() {
                let st = Arc::clone(&st);
                let responder = Arc::clone(&responder);
                std::thread::spawn(move || serve_one(request, &st, responder.as_ref()));
            }
        });

        Ok(Self {
            addr,
            server,
            stats,
            worker: Some(worker),
        })
    }

    /// Answers `/chat` from a digest → content table; unknown digests get 404.
    /// `/embed` is served with [`hash_embed`] at `embed_dim`.
    pub fn fixtures(table: HashMap<String, String>, embed_dim: usize) -> Result<Self> {
        Self::start(move |req| match req.path.as_str() {
            "/chat" => match table.get(&req.digest) {
                Some(content) => StubResponse::chat(content),
                None => StubResponse::status(404, format!("no fixture for digest {}", req.digest)),
            },
            "/embed" => embed_response(&req.body, embed_dim),
            _ => StubResponse::status(404, "unknown path"),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.stats.requests.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.stats.peak_in_flight.load(Ordering::SeqCst)
    }

    /// `"<path> <digest>"` per request, in arrival order.
    pub fn request_log(&self) -> Vec<String> {
        self.stats.log.lock().map(|l| l.clone()).unwrap_or_default()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

/// Deterministic `/embed` reply using the feature-hashing embedder.
pub fn embed_response(body: &Value, dim: usize) -> StubResponse {
    let Some(texts) = body.get("texts").and_then(Value::as_array) else {
        return StubResponse::status(400, "missing texts");
    };
    let vectors: Vec<Vec<f64>> = texts
        .iter()
        .map(|t| hash_embed(t.as_str().unwrap_or_default(), dim).values)
        .collect();
    StubResponse::json(json!({ "vectors": vectors }))
}

fn serve_one(mut request: tiny_http::Request, stats: &Stats, responder: &Responder) {
    let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    stats.peak_in_flight.fetch_max(now, Ordering::SeqCst);
    stats.requests.fetch_add(1, Ordering::SeqCst);

    let mut raw = String::new();
    let _ = request.as_reader().read_to_string(&mut raw);
    let body: Value = serde_json::from_str(&raw).unwrap_or(Value::Null);
    let authorization = request
        .headers()
        .iter()
        .find(|h| h.field.equiv("Authorization"))
        .map(|h| h.value.as_str().to_string());
    let req = StubRequest {
        path: request.url().to_string(),
        digest: request_digest(&body),
        body,
        authorization,
    };
    if let Ok(mut log) = stats.log.lock() {
        log.push(format!("{} {}", req.path, req.digest));
    }
    let resp = responder(&req);
    if !resp.delay.is_zero() {
        std::thread::sleep(resp.delay);
    }
    stats.in_flight.fetch_sub(1, Ordering::SeqCst);
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json")
        .expect("static header");
    let _ = request.respond(
        tiny_http::Response::from_string(resp.body)
            .with_status_code(resp.status)
            .with_header(header),
    );
}
