//! Minimal blocking client for OpenAI-style `/chat/completions` endpoints.
//!
//! Request body: `{"model", "temperature", "messages": [...]}` where each
//! message is `{"role", "content"}` and `content` is either a string or an
//! array of `{"type": "text"}` / `{"type": "image_url"}` parts. The reply text
//! is read from `choices[0].message.content`. The bearer token, when
//! configured, comes from the named environment variable.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChatError {
    #[error("environment variable {0} is not set")]
    MissingKey(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response: {0}")]
    BadResponse(String),
}

impl ChatError {
    fn retryable(&self) -> bool {
        match self {
            ChatError::Transport(_) => true,
            ChatError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChatEndpoint {
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token; no auth header if unset.
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    pub retries: u32,
    pub temperature: f64,
}

impl Default for ChatEndpoint {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            api_key_env: Some("OMNIVLN_API_KEY".into()),
            timeout_secs: 30.0,
            retries: 2,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: "assistant".into(), content: content.into() }
    }
}

pub struct ChatClient {
    cfg: ChatEndpoint,
    http: reqwest::blocking::Client,
}

impl ChatClient {
    pub fn new(cfg: ChatEndpoint) -> Result<Self, ChatError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs.max(0.001)))
            .build()
            .map_err(|e| ChatError::Transport(e.to_string()))?;
        Ok(Self { cfg, http })
    }

    pub fn endpoint(&self) -> &ChatEndpoint {
        &self.cfg
    }

    pub fn request_body(&self, messages: &[Value]) -> Value {
        json!({ "model": self.cfg.model, "temperature": self.cfg.temperature, "messages": messages })
    }

    fn attempt(&self, body: &Value) -> Result<String, ChatError> {
        let mut req = self.http.post(&self.cfg.url).json(body);
        if let Some(var) = &self.cfg.api_key_env {
            match std::env::var(var) {
                Ok(key) => req = req.bearer_auth(key),
                Err(_) => log::debug!("{var} not set; sending request without auth"),
            }
        }
        let resp = req.send().map_err(|e| ChatError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ChatError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ChatError::Status { status: status.as_u16(), body: text });
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| ChatError::BadResponse(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| ChatError::BadResponse("missing choices[0].message.content".into()))
    }

    /// Posts raw message objects, retrying transport errors, 429 and 5xx.
    pub fn complete_raw(&self, messages: &[Value]) -> Result<String, ChatError> {
        let body = self.request_body(messages);
        let mut last = None;
        for attempt in 0..=self.cfg.retries {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) if e.retryable() => {
                    log::warn!("chat request attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    pub fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        let raw: Vec<Value> = messages.iter().map(|m| json!({ "role": m.role, "content": m.content })).collect();
        self.complete_raw(&raw)
    }
}

/// First decimal number in `text`, preferring a `"confidence"` JSON field.
pub fn parse_confidence(text: &str) -> Option<f64> {
    if let Ok(v) = serde_json::from_str::<Value>(text.trim()) {
        if let Some(c) = v.get("confidence").and_then(Value::as_f64) {
            return Some(c);
        }
        if let Some(c) = v.as_f64() {
            return Some(c);
        }
    }
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() || (bytes[i] == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if let Ok(x) = text[start..i].trim_end_matches('.').parse::<f64>() {
                return Some(x);
            }
        }
        i += 1;
    }
    None
}

#[cfg(test)]
pub(crate) mod mock {
    //! One-shot HTTP server answering with canned chat-completion bodies.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};
    use std::thread;

    pub struct MockServer {
        pub url: String,
        pub requests: Arc<Mutex<Vec<String>>>,
    }

    /// Serves `responses` in order, one per connection: (status, body).
    pub fn serve(responses: Vec<(u16, String)>) -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        thread::spawn(move || {
            for (status, body) in responses {
                let Ok((mut stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                let mut head = String::new();
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                    head.push_str(&line);
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).ok();
                log.lock().unwrap().push(format!("{head}\r\n{}", String::from_utf8_lossy(&buf)));
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).ok();
            }
        });
        MockServer { url, requests }
    }

    pub fn completion(content: &str) -> String {
        serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }).to_string()
    }
}
