//! A small in-process HTTP server that answers with canned JSON, for
//! exercising the HTTP backends without a model server.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};

use crate::error::{Error, Result};

/// What the stub sends back for one request.
#[derive(Debug, Clone)]
pub struct StubReply {
    pub status: u16,
    pub body: Value,
}

impl StubReply {
    pub fn ok(body: Value) -> Self {
        Self { status: 200, body }
    }

    pub fn status(status: u16) -> Self {
        Self {
            status,
            body: json!({"error": {"message": format!("stub status {status}")}}),
        }
    }
}

type Handler = dyn Fn(&str, &Value) -> StubReply + Send + Sync;

/// Serves until dropped. Every request body must be JSON.
pub struct StubServer {
    server: Arc<tiny_http::Server>,
    addr: String,
    hits: Arc<AtomicUsize>,
    thread: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds an ephemeral localhost port. `handler` receives the request
    /// path and parsed body.
    pub fn start<F>(handler: F) -> Result<Self>
    where
        F: Fn(&str, &Value) -> StubReply + Send + Sync + 'static,
    {
        let server = tiny_http::Server::http("127.0.0.1:0").map_err(|e| Error::Transport {
            url: "127.0.0.1:0".into(),
            message: e.to_string(),
        })?;
        let addr = server
            .server_addr()
            .to_ip()
            .map(|a| a.to_string())
            .ok_or_else(|| Error::Backend("stub server has no ip address".into()))?;
        let server = Arc::new(server);
        let hits = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        let thread = {
            let server = Arc::clone(&server);
            let hits = Arc::clone(&hits);
            std::thread::spawn(move || {
                for mut req in server.incoming_requests() {
                    hits.fetch_add(1, Ordering::SeqCst);
                    let mut raw = String::new();
                    let reply = match req.as_reader().read_to_string(&mut raw) {
                        Ok(_) => match serde_json::from_str::<Value>(&raw) {
                            Ok(body) => handler(req.url(), &body),
                            Err(_) => StubReply::status(400),
                        },
                        Err(_) => StubReply::status(400),
                    };
                    let header = tiny_http::Header::from_bytes("Content-Type", "application/json")
                        .expect("static header");
                    let resp = tiny_http::Response::from_string(reply.body.to_string())
                        .with_status_code(reply.status)
                        .with_header(header);
                    let _ = req.respond(resp);
                }
            })
        };
        Ok(Self {
            server,
            addr,
            hits,
            thread: Some(thread),
        })
    }

    /// Base URL, e.g. `http://127.0.0.1:39211`.
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base_url())
    }

    /// Number of requests received so far.
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Chat completion whose first token has the given top log-probabilities.
pub fn logprobs_reply(top: &[(&str, f64)]) -> Value {
    let (tok, lp) = top.first().copied().unwrap_or(("", 0.0));
    let top: Vec<Value> = top
        .iter()
        .map(|(t, l)| json!({"token": t, "logprob": l}))
        .collect();
    json!({
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": tok},
            "logprobs": {"content": [{"token": tok, "logprob": lp, "top_logprobs": top}]},
            "finish_reason": "length",
        }],
    })
}

/// Chat completion carrying plain assistant text.
pub fn text_reply(content: &str) -> Value {
    json!({
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop",
        }],
    })
}

pub fn embeddings_reply(vectors: &[Vec<f64>]) -> Value {
    let data: Vec<Value> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| json!({"object": "embedding", "index": i, "embedding": v}))
        .collect();
    json!({"object": "list", "data": data})
}

/// Concatenated text of every message in a chat request.
pub fn request_text(body: &Value) -> String {
    let mut out = String::new();
    for m in body.get("messages").and_then(Value::as_array).into_iter().flatten() {
        match m.get("content") {
            Some(Value::String(s)) => out.push_str(s),
            Some(Value::Array(parts)) => {
                for p in parts {
                    if let Some(t) = p.get("text").and_then(Value::as_str) {
                        out.push_str(t);
                    }
                }
            }
            _ => {}
        }
        out.push('\n');
    }
    out
}
