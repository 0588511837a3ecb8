//! Chat-completions transport shared by the evaluated models, the VQA judge,
//! the captioner and the scene-category labeler.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
pub enum QueryError {
    #[error("{endpoint}: status {status} after {attempts} attempt(s)")]
    Status { endpoint: String, status: u16, attempts: u32 },
    #[error("{endpoint}: timed out after {attempts} attempt(s)")]
    Timeout { endpoint: String, attempts: u32 },
    #[error("{endpoint}: {reason} after {attempts} attempt(s)")]
    Transport { endpoint: String, reason: String, attempts: u32 },
    #[error("{endpoint}: malformed response: {reason}")]
    Malformed { endpoint: String, reason: String },
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub name: String,
    pub base_url: String,
    /// Environment variable holding the bearer token; unset means no auth header.
    #[serde(default)]
    pub api_key_env: Option<String>,
    pub model: String,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    /// Global request budget; `None` leaves only the concurrency bound.
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
}

fn default_max_tokens() -> u32 {
    512
}
fn default_timeout_ms() -> u64 {
    120_000
}
fn default_max_retries() -> u32 {
    4
}
fn default_concurrency() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    500
}

impl ModelEndpoint {
    pub fn new(name: &str, base_url: &str, model: &str) -> Self {
        Self {
            name: name.to_string(),
            base_url: base_url.to_string(),
            api_key_env: None,
            model: model.to_string(),
            max_tokens: default_max_tokens(),
            temperature: 0.0,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            max_concurrency: default_concurrency(),
            backoff_base_ms: default_backoff_ms(),
            requests_per_minute: None,
        }
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        if self.name.is_empty() {
            return Err(QueryError::Config("endpoint name is empty".into()));
        }
        if self.temperature != 0.0 {
            return Err(QueryError::Config(format!(
                "{}: temperature must be 0, got {}",
                self.name, self.temperature
            )));
        }
        if self.max_concurrency == 0 {
            return Err(QueryError::Config(format!("{}: max_concurrency must be ≥ 1", self.name)));
        }
        if self.requests_per_minute == Some(0) {
            return Err(QueryError::Config(format!("{}: requests_per_minute must be ≥ 1", self.name)));
        }
        Ok(())
    }

    /// Reads one endpoint object or an array of them.
    pub fn load_all(text: &str) -> Result<Vec<ModelEndpoint>, QueryError> {
        let v: Value = serde_json::from_str(text).map_err(|e| QueryError::Config(e.to_string()))?;
        let list: Vec<ModelEndpoint> = if v.is_array() {
            serde_json::from_value(v)
        } else {
            serde_json::from_value(v).map(|e| vec![e])
        }
        .map_err(|e| QueryError::Config(e.to_string()))?;
        let mut names = std::collections::BTreeSet::new();
        for e in &list {
            e.validate()?;
            if !names.insert(e.name.clone()) {
                return Err(QueryError::Config(format!("duplicate endpoint name {}", e.name)));
            }
        }
        Ok(list)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChatRequest {
    pub system: Option<String>,
    pub text: String,
    /// PNG bytes, sent in order after the text.
    pub images: Vec<Vec<u8>>,
    /// Ask for the top-k alternatives of the first generated token.
    pub top_logprobs: Option<u8>,
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChatReply {
    pub text: String,
    /// `(token, logprob)` alternatives for the first generated token, if the
    /// endpoint returned them.
    pub first_token_logprobs: Option<Vec<(String, f64)>>,
}

pub trait ChatModel: Send + Sync {
    fn name(&self) -> &str;
    fn chat(&self, req: &ChatRequest) -> Result<ChatReply, QueryError>;
}

pub fn png_data_url(png: &[u8]) -> String {
    format!("data:image/png;base64,{}", base64::engine::general_purpose::STANDARD.encode(png))
}

pub fn request_body(ep: &ModelEndpoint, req: &ChatRequest) -> Value {
    let mut messages = Vec::new();
    if let Some(sys) = &req.system {
        messages.push(json!({"role": "system", "content": sys}));
    }
    let mut content = vec![json!({"type": "text", "text": req.text})];
    for img in &req.images {
        content.push(json!({"type": "image_url", "image_url": {"url": png_data_url(img)}}));
    }
    messages.push(json!({"role": "user", "content": content}));
    let mut body = json!({
        "model": ep.model,
        "messages": messages,
        "max_tokens": req.max_tokens.unwrap_or(ep.max_tokens),
        "temperature": ep.temperature,
    });
    if let Some(k) = req.top_logprobs {
        body["logprobs"] = json!(true);
        body["top_logprobs"] = json!(k);
    }
    body
}

pub fn parse_reply(endpoint: &str, body: &Value) -> Result<ChatReply, QueryError> {
    let malformed = |reason: &str| QueryError::Malformed {
        endpoint: endpoint.to_string(),
        reason: reason.to_string(),
    };
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| malformed("no choices"))?;
    let content = choice.get("message").and_then(|m| m.get("content"));
    let text = match content {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(parts)) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        Some(Value::Null) | None => String::new(),
        Some(_) => return Err(malformed("message.content has an unexpected type")),
    };
    let first_token_logprobs = choice
        .get("logprobs")
        .and_then(|l| l.get("content"))
        .and_then(|c| c.get(0))
        .map(|tok| {
            let mut alts: Vec<(String, f64)> = tok
                .get("top_logprobs")
                .and_then(Value::as_array)
                .map(|a| {
                    a.iter()
                        .filter_map(|t| Some((t.get("token")?.as_str()?.to_string(), t.get("logprob")?.as_f64()?)))
                        .collect()
                })
                .unwrap_or_default();
            if alts.is_empty() {
                if let (Some(t), Some(lp)) = (tok.get("token").and_then(Value::as_str), tok.get("logprob").and_then(Value::as_f64)) {
                    alts.push((t.to_string(), lp));
                }
            }
            alts
        });
    Ok(ChatReply {
        text,
        first_token_logprobs,
    })
}

/// Counting semaphore; std has none.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpChat {
    endpoint: ModelEndpoint,
    agent: ureq::Agent,
    gate: Gate,
    next_slot: Mutex<Instant>,
    token: Option<String>,
}

enum Attempt {
    Done(Value),
    Retry { err: QueryError, after: Option<Duration> },
    Fatal(QueryError),
}

impl HttpChat {
    pub fn new(endpoint: ModelEndpoint) -> Result<Self, QueryError> {
        endpoint.validate()?;
        let token = match &endpoint.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                QueryError::Config(format!("{}: environment variable {var} is not set", endpoint.name))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            gate: Gate::new(endpoint.max_concurrency),
            endpoint,
            agent,
            next_slot: Mutex::new(Instant::now()),
            token,
        })
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    fn wait_for_rate_slot(&self) {
        let Some(rpm) = self.endpoint.requests_per_minute else {
            return;
        };
        let spacing = Duration::from_secs_f64(60.0 / rpm as f64);
        let start = {
            let mut next = self.next_slot.lock().unwrap();
            let now = Instant::now();
            let start = (*next).max(now);
            *next = start + spacing;
            start
        };
        let now = Instant::now();
        if start > now {
            std::thread::sleep(start - now);
        }
    }

    fn attempt(&self, url: &str, body: &[u8], attempts: u32) -> Attempt {
        let name = &self.endpoint.name;
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Attempt::Retry {
                    err: QueryError::Timeout { endpoint: name.clone(), attempts },
                    after: None,
                }
            }
            Err(e) => {
                return Attempt::Retry {
                    err: QueryError::Transport {
                        endpoint: name.clone(),
                        reason: e.to_string(),
                        attempts,
                    },
                    after: None,
                }
            }
        };
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            let after = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok())
                .map(Duration::from_secs_f64);
            return Attempt::Retry {
                err: QueryError::Status {
                    endpoint: name.clone(),
                    status,
                    attempts,
                },
                after,
            };
        }
        if status != 200 {
            return Attempt::Fatal(QueryError::Status {
                endpoint: name.clone(),
                status,
                attempts,
            });
        }
        let parsed = resp
            .body_mut()
            .with_config()
            .limit(64 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| e.to_string())
            .and_then(|b| serde_json::from_slice::<Value>(&b).map_err(|e| e.to_string()));
        match parsed {
            Ok(v) => Attempt::Done(v),
            Err(reason) => Attempt::Fatal(QueryError::Malformed {
                endpoint: name.clone(),
                reason,
            }),
        }
    }
}

impl ChatModel for HttpChat {
    fn name(&self) -> &str {
        &self.endpoint.name
    }

    fn chat(&self, req: &ChatRequest) -> Result<ChatReply, QueryError> {
        let url = format!("{}/chat/completions", self.endpoint.base_url.trim_end_matches('/'));
        let body = serde_json::to_vec(&request_body(&self.endpoint, req)).expect("json body");
        let _permit = self.gate.acquire();
        let mut attempts = 0;
        loop {
            attempts += 1;
            self.wait_for_rate_slot();
            match self.attempt(&url, &body, attempts) {
                Attempt::Done(v) => return parse_reply(&self.endpoint.name, &v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry { err, after } => {
                    if attempts > self.endpoint.max_retries {
                        return Err(err);
                    }
                    let backoff = Duration::from_millis(self.endpoint.backoff_base_ms.saturating_mul(1 << (attempts - 1).min(16)));
                    std::thread::sleep(after.map_or(backoff, |a| a.max(backoff)));
                }
            }
        }
    }
}

/// A chat model backed by a closure, for tests and offline runs.
pub struct ScriptedChat<F> {
    name: String,
    f: F,
}

impl<F> ScriptedChat<F>
where
    F: Fn(&ChatRequest) -> Result<ChatReply, QueryError> + Send + Sync,
{
    pub fn new(name: &str, f: F) -> Self {
        Self { name: name.to_string(), f }
    }
}

impl<F> ChatModel for ScriptedChat<F>
where
    F: Fn(&ChatRequest) -> Result<ChatReply, QueryError> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn chat(&self, req: &ChatRequest) -> Result<ChatReply, QueryError> {
        (self.f)(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mock_http::{MockServer, Response};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn reply(text: &str) -> Value {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]})
    }

    fn fast(url: &str) -> ModelEndpoint {
        let mut ep = ModelEndpoint::new("m", url, "test-model");
        ep.backoff_base_ms = 5;
        ep.max_retries = 3;
        ep.timeout_ms = 5000;
        ep
    }

    #[test]
    fn returns_response_text() {
        let server = MockServer::start(|req| {
            assert_eq!(req.path, "/v1/chat/completions");
            let body = req.json().unwrap();
            assert_eq!(body["temperature"], 0.0);
            let content = &body["messages"][1]["content"];
            assert_eq!(content[0]["type"], "text");
            assert!(content[1]["image_url"]["url"].as_str().unwrap().starts_with("data:image/png;base64,"));
            Response::json(200, &reply("D"))
        })
        .unwrap();
        let chat = HttpChat::new(fast(&format!("{}/v1", server.url()))).unwrap();
        let out = chat
            .chat(&ChatRequest {
                system: Some("sys".into()),
                text: "pick".into(),
                images: vec![vec![1, 2, 3]],
                ..Default::default()
            })
            .unwrap();
        assert_eq!(out.text, "D");
    }

    #[test]
    fn retries_429_then_succeeds() {
        let n = Arc::new(AtomicUsize::new(0));
        let seen = n.clone();
        let server = MockServer::start(move |_| {
            if seen.fetch_add(1, Ordering::SeqCst) < 2 {
                Response::json(429, &json!({"error": "slow down"}))
            } else {
                Response::json(200, &reply("B"))
            }
        })
        .unwrap();
        let chat = HttpChat::new(fast(&server.url())).unwrap();
        assert_eq!(chat.chat(&ChatRequest::default()).unwrap().text, "B");
        assert_eq!(server.hits(), 3);
    }

    #[test]
    fn persistent_500_exhausts_retries() {
        let server = MockServer::start(|_| Response::json(500, &json!({}))).unwrap();
        let chat = HttpChat::new(fast(&server.url())).unwrap();
        let err = chat.chat(&ChatRequest::default()).unwrap_err();
        assert_eq!(
            err,
            QueryError::Status {
                endpoint: "m".into(),
                status: 500,
                attempts: 4
            }
        );
        assert_eq!(server.hits(), 4);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let server = MockServer::start(|_| Response::json(400, &json!({}))).unwrap();
        let chat = HttpChat::new(fast(&server.url())).unwrap();
        assert!(matches!(chat.chat(&ChatRequest::default()), Err(QueryError::Status { status: 400, .. })));
        assert_eq!(server.hits(), 1);
    }

    #[test]
    fn logprobs_are_extracted() {
        let body = json!({"choices": [{
            "message": {"content": "Yes"},
            "logprobs": {"content": [{"token": "Yes", "logprob": -0.1,
                "top_logprobs": [{"token": "Yes", "logprob": -0.1}, {"token": "No", "logprob": -2.4}]}]}
        }]});
        let r = parse_reply("j", &body).unwrap();
        assert_eq!(r.first_token_logprobs.unwrap(), vec![("Yes".into(), -0.1), ("No".into(), -2.4)]);
        assert_eq!(parse_reply("j", &reply("x")).unwrap().first_token_logprobs, None);
    }

    #[test]
    fn array_content_is_joined() {
        let body = json!({"choices": [{"message": {"content": [{"type": "text", "text": "A"}, {"type": "text", "text": "B"}]}}]});
        assert_eq!(parse_reply("m", &body).unwrap().text, "AB");
        assert!(parse_reply("m", &json!({})).is_err());
    }

    #[test]
    fn endpoint_config_validation() {
        let one = r#"{"name": "a", "base_url": "http://x", "model": "m"}"#;
        assert_eq!(ModelEndpoint::load_all(one).unwrap().len(), 1);
        let dup = r#"[{"name": "a", "base_url": "http://x", "model": "m"}, {"name": "a", "base_url": "http://y", "model": "n"}]"#;
        assert!(ModelEndpoint::load_all(dup).is_err());
        let hot = r#"{"name": "a", "base_url": "http://x", "model": "m", "temperature": 0.7}"#;
        assert!(ModelEndpoint::load_all(hot).is_err());
    }

    #[test]
    fn concurrency_is_bounded() {
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let (l, p) = (live.clone(), peak.clone());
        let server = MockServer::start(move |_| {
            let now = l.fetch_add(1, Ordering::SeqCst) + 1;
            p.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(30));
            l.fetch_sub(1, Ordering::SeqCst);
            Response::json(200, &reply("A"))
        })
        .unwrap();
        let mut ep = fast(&server.url());
        ep.max_concurrency = 2;
        let chat = HttpChat::new(ep).unwrap();
        std::thread::scope(|s| {
            for _ in 0..6 {
                s.spawn(|| chat.chat(&ChatRequest::default()).unwrap());
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(server.hits(), 6);
    }
}
