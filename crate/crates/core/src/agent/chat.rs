//! Chat-completions client with bounded retries, plus transcript recording
//! and offline replay.
//!
//! Requests follow the common wire schema: `POST {endpoint}` with a JSON
//! body `{"model", "messages": [{"role", "content"}], "temperature"}`;
//! the reply text is `choices[0].message.content`.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ChatError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("response does not match the chat-completions schema: {0}")]
    Malformed(String),
    #[error("gave up after {attempts} attempt(s): {last}")]
    Exhausted { attempts: u32, last: Box<ChatError> },
    #[error("environment variable `{0}` holding the API key is not set")]
    MissingKey(String),
    #[error("replay transcript has no response for this request ({0})")]
    NotInTranscript(String),
    #[error("transcript {path}: {message}")]
    Transcript { path: PathBuf, message: String },
}

impl ChatError {
    /// HTTP status of the (last) failed attempt, if any.
    pub fn status(&self) -> Option<u16> {
        match self {
            ChatError::Status { status, .. } => Some(*status),
            ChatError::Exhausted { last, .. } => last.status(),
            _ => None,
        }
    }

    fn is_retryable(&self) -> bool {
        match self {
            ChatError::Transport(_) => true,
            ChatError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// One chat-completion round trip.
pub trait ChatClient: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError>;
}

pub fn chat_complete(client: &dyn ChatClient, messages: &[ChatMessage]) -> Result<String, ChatError> {
    client.complete(messages)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatBackendConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "defaults::timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "defaults::max_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "defaults::backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "defaults::max_in_flight")]
    pub max_in_flight: usize,
    /// Append every exchange to this JSONL file.
    #[serde(default)]
    pub transcript: Option<PathBuf>,
}

mod defaults {
    pub fn timeout_secs() -> u64 {
        60
    }
    pub fn max_retries() -> u32 {
        5
    }
    pub fn backoff_base_ms() -> u64 {
        500
    }
    pub fn max_in_flight() -> usize {
        8
    }
}

impl ChatBackendConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        ChatBackendConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: None,
            timeout_secs: defaults::timeout_secs(),
            max_retries: defaults::max_retries(),
            temperature: 0.0,
            backoff_base_ms: defaults::backoff_base_ms(),
            max_in_flight: defaults::max_in_flight(),
            transcript: None,
        }
    }

    pub fn request_body(&self, messages: &[ChatMessage]) -> Value {
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
        })
    }
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpChatClient {
    cfg: ChatBackendConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    gate: Gate,
    transcript: Option<Mutex<File>>,
}

impl fmt::Debug for HttpChatClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpChatClient")
            .field("cfg", &self.cfg)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpChatClient {
    pub fn new(cfg: ChatBackendConfig) -> Result<Self, ChatError> {
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| ChatError::MissingKey(var.clone()))?),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let transcript = match &cfg.transcript {
            Some(path) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| ChatError::Transcript {
                        path: path.clone(),
                        message: e.to_string(),
                    })?,
            )),
            None => None,
        };
        Ok(HttpChatClient {
            gate: Gate::new(cfg.max_in_flight),
            cfg,
            api_key,
            agent,
            transcript,
        })
    }

    fn attempt(&self, body: &Value) -> Result<(u16, String), ChatError> {
        let _permit = self.gate.acquire();
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| ChatError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ChatError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ChatError::Status { status, body: text });
        }
        Ok((status, text))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.cfg.backoff_base_ms.saturating_mul(1u64 << attempt.min(16));
        Duration::from_millis(ms.min(60_000))
    }

    fn record(&self, body: &Value, status: u16, response: &str) {
        let Some(file) = &self.transcript else { return };
        let entry = TranscriptEntry {
            request_digest: request_digest(body),
            request: body.clone(),
            status,
            response: response.to_string(),
        };
        let mut line = serde_json::to_string(&entry).expect("serializable");
        line.push('\n');
        let mut f = file.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = f.write_all(line.as_bytes()) {
            log::warn!("failed to append to chat transcript: {e}");
        }
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        let body = self.cfg.request_body(messages);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok((status, text)) => {
                    self.record(&body, status, &text);
                    return extract_reply(&text);
                }
                Err(err) if err.is_retryable() && attempt < self.cfg.max_retries => {
                    let wait = self.backoff(attempt);
                    log::debug!("chat attempt {} failed ({err}); retrying in {wait:?}", attempt + 1);
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err(err) => {
                    return Err(ChatError::Exhausted {
                        attempts: attempt + 1,
                        last: Box::new(err),
                    })
                }
            }
        }
    }
}

/// Pulls `choices[0].message.content` out of a response body.
pub fn extract_reply(body: &str) -> Result<String, ChatError> {
    let v: Value = serde_json::from_str(body).map_err(|e| ChatError::Malformed(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ChatError::Malformed("missing choices[0].message.content".into()))
}

/// SHA-256 of the canonical JSON encoding of a request body.
pub fn request_digest(body: &Value) -> String {
    let canonical = serde_json::to_string(body).expect("serializable");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request_digest: String,
    pub request: Value,
    pub status: u16,
    pub response: String,
}

/// Answers requests from a recorded transcript without touching the
/// network. Requests are matched by body digest.
pub struct ReplayChatClient {
    cfg: ChatBackendConfig,
    responses: HashMap<String, String>,
}

impl ReplayChatClient {
    pub fn load(path: &Path, cfg: ChatBackendConfig) -> Result<Self, ChatError> {
        let err = |message: String| ChatError::Transcript {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut responses = HashMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: TranscriptEntry =
                serde_json::from_str(line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            responses.insert(entry.request_digest, entry.response);
        }
        Ok(ReplayChatClient { cfg, responses })
    }
}

impl ChatClient for ReplayChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        let digest = request_digest(&self.cfg.request_body(messages));
        let body = self
            .responses
            .get(&digest)
            .ok_or_else(|| ChatError::NotInTranscript(digest.clone()))?;
        extract_reply(body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_first_choice() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"3, 1"}}]}"#;
        assert_eq!(extract_reply(body).unwrap(), "3, 1");
        assert!(matches!(extract_reply("{}"), Err(ChatError::Malformed(_))));
        assert!(matches!(extract_reply("nope"), Err(ChatError::Malformed(_))));
    }

    #[test]
    fn request_body_schema() {
        let cfg = ChatBackendConfig::new("http://x", "m");
        let body = cfg.request_body(&[ChatMessage::user("hi")]);
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hi");
        assert_eq!(body["temperature"], 0.0);
    }

    #[test]
    fn missing_key_is_reported() {
        let mut cfg = ChatBackendConfig::new("http://127.0.0.1:9", "m");
        cfg.api_key_env = Some("MEABENCH_SURELY_UNSET_KEY".into());
        assert!(matches!(HttpChatClient::new(cfg), Err(ChatError::MissingKey(_))));
    }

    #[test]
    fn debug_never_prints_the_key() {
        std::env::set_var("MEABENCH_TEST_KEY_DEBUG", "sk-secret-value");
        let mut cfg = ChatBackendConfig::new("http://127.0.0.1:9", "m");
        cfg.api_key_env = Some("MEABENCH_TEST_KEY_DEBUG".into());
        let client = HttpChatClient::new(cfg).unwrap();
        assert!(!format!("{client:?}").contains("sk-secret-value"));
    }
}
