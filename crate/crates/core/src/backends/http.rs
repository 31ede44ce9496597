//! HTTP backends speaking the chat-completions and embeddings wire shapes.
//!
//! Credentials come only from the environment variable named in the
//! endpoint config. Requests are retried on transport errors, 429 and 5xx.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::thread;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    check_dim, render_frame_prompt, EmbeddingBackend, EmbeddingVector, ScoringBackend,
    YesNoLogits, DEFAULT_FRAME_PROMPT,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub max_retries: u32,
    pub timeout_secs: u64,
    pub retry_backoff_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: String::new(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            max_retries: 3,
            timeout_secs: 120,
            retry_backoff_ms: 250,
        }
    }
}

/// A JSON-over-HTTP POST target with retry.
#[derive(Debug)]
pub struct HttpEndpoint {
    cfg: EndpointConfig,
    agent: ureq::Agent,
}

impl HttpEndpoint {
    pub fn new(cfg: EndpointConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self { cfg, agent }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn api_key(&self) -> Option<String> {
        self.cfg
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty())
    }

    pub fn post_json(&self, body: &Value) -> Result<Value> {
        let url = &self.cfg.url;
        let transport = |message: String| Error::Transport {
            url: url.clone(),
            message,
        };
        let mut last_err = transport("no attempt made".into());
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let backoff = self.cfg.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(6));
                thread::sleep(Duration::from_millis(backoff));
            }
            let mut req = self.agent.post(url).header("Content-Type", "application/json");
            if let Some(key) = self.api_key() {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
            let mut resp = match req.send_json(body) {
                Ok(r) => r,
                Err(e) => {
                    log::debug!("attempt {attempt} to {url} failed: {e}");
                    last_err = transport(e.to_string());
                    continue;
                }
            };
            let status = resp.status().as_u16();
            if status == 429 || status >= 500 {
                log::debug!("attempt {attempt} to {url}: http {status}");
                last_err = transport(format!("http status {status}"));
                continue;
            }
            if !(200..300).contains(&status) {
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                return Err(transport(format!("http status {status}: {text}")));
            }
            return resp
                .body_mut()
                .read_json::<Value>()
                .map_err(|e| Error::Backend(format!("{url}: response is not JSON: {e}")));
        }
        Err(last_err)
    }
}

/// Where frame images live and how they are referenced in requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameSource {
    pub root: PathBuf,
    /// Relative path with `{video_id}` and `{frame}` placeholders.
    pub pattern: String,
    /// Zero-padding width for `{frame}`.
    pub frame_digits: usize,
    /// Send image bytes as a base64 data URL instead of a file URL.
    pub inline: bool,
}

impl Default for FrameSource {
    fn default() -> Self {
        Self {
            root: PathBuf::from("frames"),
            pattern: "{video_id}/{frame}.jpg".into(),
            frame_digits: 6,
            inline: true,
        }
    }
}

impl FrameSource {
    pub fn path(&self, video_id: &str, frame_idx: usize) -> PathBuf {
        let frame = format!("{frame_idx:0width$}", width = self.frame_digits);
        self.root
            .join(self.pattern.replace("{video_id}", video_id).replace("{frame}", &frame))
    }

    pub fn url(&self, video_id: &str, frame_idx: usize) -> Result<String> {
        let path = self.path(video_id, frame_idx);
        if self.inline {
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let mime = match path.extension().and_then(|e| e.to_str()) {
                Some("png") => "image/png",
                _ => "image/jpeg",
            };
            let data = base64::engine::general_purpose::STANDARD.encode(bytes);
            Ok(format!("data:{mime};base64,{data}"))
        } else {
            Ok(format!("file://{}", path.display()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpScorerConfig {
    pub endpoint: EndpointConfig,
    pub frames: FrameSource,
    pub prompt_template: String,
    pub top_logprobs: usize,
}

impl Default for HttpScorerConfig {
    fn default() -> Self {
        Self {
            endpoint: EndpointConfig::default(),
            frames: FrameSource::default(),
            prompt_template: DEFAULT_FRAME_PROMPT.into(),
            top_logprobs: 20,
        }
    }
}

/// Asks a chat-completions server one yes/no question per frame and reads
/// the first token's top log-probabilities.
#[derive(Debug)]
pub struct HttpScorer {
    endpoint: HttpEndpoint,
    cfg: HttpScorerConfig,
}

impl HttpScorer {
    pub fn new(cfg: HttpScorerConfig) -> Self {
        Self {
            endpoint: HttpEndpoint::new(cfg.endpoint.clone()),
            cfg,
        }
    }

    pub fn request_body(&self, image_url: &str, prompt: &str) -> Value {
        json!({
            "model": self.cfg.endpoint.model,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "image_url", "image_url": {"url": image_url}},
                    {"type": "text", "text": prompt},
                ],
            }],
            "temperature": 0,
            "max_tokens": 1,
            "logprobs": true,
            "top_logprobs": self.cfg.top_logprobs,
        })
    }
}

impl ScoringBackend for HttpScorer {
    fn score_frame(
        &self,
        video_id: &str,
        frame_idx: usize,
        class_name: &str,
        question: &str,
    ) -> Result<YesNoLogits> {
        if question.trim().is_empty() {
            return Err(Error::Validation("empty question".into()));
        }
        let image = self.cfg.frames.url(video_id, frame_idx)?;
        let prompt = render_frame_prompt(&self.cfg.prompt_template, class_name, question);
        let resp = self.endpoint.post_json(&self.request_body(&image, &prompt))?;
        extract_yes_no(&resp).map_err(|e| match e {
            Error::Backend(m) => Error::Backend(format!("{video_id} frame {frame_idx}: {m}")),
            other => other,
        })
    }
}

/// Pulls the "yes"/"no" scores out of the first generated token's
/// log-probabilities.
///
/// Token text is lowercased and whitespace-stripped before matching; when
/// several variants match, the largest value wins. Log-probabilities are
/// used in place of logits (the two-way softmax only depends on their
/// difference). If only one of the two tokens is listed, the other is
/// bounded above by the smallest listed value, which is used for it.
pub fn extract_yes_no(response: &Value) -> Result<YesNoLogits> {
    let first = response
        .pointer("/choices/0/logprobs/content/0")
        .ok_or_else(|| Error::Backend("response has no first-token logprobs".into()))?;

    let entry = |v: &Value| -> Option<(String, f64)> {
        Some((
            v.get("token")?.as_str()?.to_owned(),
            v.get("logprob")?.as_f64()?,
        ))
    };
    let entries: Vec<(String, f64)> = std::iter::once(first)
        .chain(first.get("top_logprobs").and_then(Value::as_array).into_iter().flatten())
        .filter_map(entry)
        .collect();

    let best = |word: &str| {
        entries
            .iter()
            .filter(|(tok, _)| tok.trim().eq_ignore_ascii_case(word))
            .map(|(_, lp)| *lp)
            .fold(None, |acc: Option<f64>, lp| Some(acc.map_or(lp, |a| a.max(lp))))
    };
    let floor = entries.iter().map(|(_, lp)| *lp).fold(f64::INFINITY, f64::min);
    match (best("yes"), best("no")) {
        (None, None) => Err(Error::Backend("yes/no not in top-k logprobs".into())),
        (Some(y), Some(n)) => YesNoLogits::new(y, n),
        (Some(y), None) => YesNoLogits::new(y, floor),
        (None, Some(n)) => YesNoLogits::new(floor, n),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpEmbedderConfig {
    pub endpoint: EndpointConfig,
    pub frames: FrameSource,
}

impl Default for HttpEmbedderConfig {
    fn default() -> Self {
        Self {
            endpoint: EndpointConfig {
                url: "http://127.0.0.1:8001/v1/embeddings".into(),
                ..EndpointConfig::default()
            },
            frames: FrameSource::default(),
        }
    }
}

/// Embedding server client. Text requests use the embeddings wire shape
/// (`{"model", "input": [...]}` → `{"data": [{"embedding", "index"}]}`);
/// frame requests send image URLs with `"input_type": "image"`.
#[derive(Debug)]
pub struct HttpEmbedder {
    endpoint: HttpEndpoint,
    frames: FrameSource,
    dim: OnceLock<usize>,
}

impl HttpEmbedder {
    pub fn new(cfg: HttpEmbedderConfig) -> Self {
        Self {
            endpoint: HttpEndpoint::new(cfg.endpoint),
            frames: cfg.frames,
            dim: OnceLock::new(),
        }
    }

    fn request(&self, input: Vec<String>, image: bool) -> Result<Vec<EmbeddingVector>> {
        let n = input.len();
        let mut body = json!({"model": self.endpoint.config().model, "input": input});
        if image {
            body["input_type"] = json!("image");
        }
        let resp = self.endpoint.post_json(&body)?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Backend("embedding response has no data array".into()))?;
        if data.len() != n {
            return Err(Error::Backend(format!("asked for {n} embeddings, got {}", data.len())));
        }
        let mut out: Vec<Option<EmbeddingVector>> = vec![None; n];
        for (pos, item) in data.iter().enumerate() {
            let idx = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
            let values: Vec<f64> = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Backend("embedding entry without vector".into()))?
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| Error::Backend("non-numeric embedding".into())))
                .collect::<Result<_>>()?;
            let v = EmbeddingVector::new(values)?;
            check_dim(*self.dim.get_or_init(|| v.dim()), v.dim())?;
            let slot = out
                .get_mut(idx)
                .ok_or_else(|| Error::Backend(format!("embedding index {idx} out of range")))?;
            *slot = Some(v);
        }
        out.into_iter()
            .map(|v| v.ok_or_else(|| Error::Backend("embedding response has gaps".into())))
            .collect()
    }
}

impl EmbeddingBackend for HttpEmbedder {
    fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        self.request(texts.to_vec(), false).map_err(|e| match e {
            Error::Backend(m) => Error::Backend(format!("embedding {:?}: {m}", texts)),
            other => other,
        })
    }

    fn embed_frames(&self, video_id: &str, frames: &[usize]) -> Result<Vec<EmbeddingVector>> {
        if frames.is_empty() {
            return Ok(Vec::new());
        }
        let urls = frames
            .iter()
            .map(|&f| self.frames.url(video_id, f))
            .collect::<Result<Vec<_>>>()?;
        self.request(urls, true).map_err(|e| match e {
            Error::Backend(m) => Error::Backend(format!("frames {video_id} {frames:?}: {m}")),
            other => other,
        })
    }
}
