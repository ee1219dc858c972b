//! Chat-completion backend over HTTP.

use std::time::Duration;

use serde_json::{json, Value as Json};

use super::{GenerateRequest, GeneratorBackend, RefineRequest};
use crate::error::{Error, Result};

pub const DEFAULT_MODEL: &str = "deepseek-r1";
pub const ENDPOINT_VAR: &str = "DATE_LLM_ENDPOINT";
pub const API_KEY_VAR: &str = "DATE_LLM_API_KEY";

const SYSTEM: &str = "You are a careful assistant that writes tabular data and data rules exactly in the requested format.";

#[derive(Clone, Debug, PartialEq)]
pub struct LlmConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
    /// Waits before each retry; the call is attempted `backoff.len() + 1` times.
    pub backoff: Vec<Duration>,
}

impl LlmConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: normalize_endpoint(&endpoint.into()),
            api_key: None,
            model: model.into(),
            temperature: 0.7,
            max_tokens: 4096,
            timeout: Duration::from_secs(120),
            backoff: [1, 2, 4].map(Duration::from_secs).to_vec(),
        }
    }

    /// Reads the endpoint and optional key from the environment.
    pub fn from_env(model: &str) -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_VAR)
            .map_err(|_| Error::Config(format!("{ENDPOINT_VAR} is not set; the llm backend needs an endpoint")))?;
        let mut cfg = Self::new(endpoint, model);
        cfg.api_key = std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }
}

/// Appends `/chat/completions` to base URLs.
fn normalize_endpoint(url: &str) -> String {
    let url = url.trim().trim_end_matches('/');
    if url.ends_with("/chat/completions") {
        url.to_string()
    } else {
        format!("{url}/chat/completions")
    }
}

enum Failure {
    Retry(String),
    Fatal(String),
}

pub struct LlmBackend {
    cfg: LlmConfig,
    agent: ureq::Agent,
    sleep: Box<dyn FnMut(Duration) + Send>,
}

impl LlmBackend {
    pub fn new(cfg: LlmConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { cfg, agent, sleep: Box::new(std::thread::sleep) }
    }

    /// Replaces the backoff sleep, for tests.
    pub fn with_sleep(mut self, sleep: impl FnMut(Duration) + Send + 'static) -> Self {
        self.sleep = Box::new(sleep);
        self
    }

    fn attempt(&self, body: &Json) -> std::result::Result<String, Failure> {
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(k) = &self.cfg.api_key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Failure::Retry(format!("transport: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| Failure::Retry(format!("reading body: {e}")))?;
        if status == 429 || status >= 500 {
            return Err(Failure::Retry(format!("HTTP {status}: {text}")));
        }
        if status >= 400 {
            return Err(Failure::Fatal(format!("HTTP {status}: {text}")));
        }
        let v: Json = serde_json::from_str(&text).map_err(|e| Failure::Fatal(format!("malformed response: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Json::as_str)
            .map(str::to_string)
            .ok_or_else(|| Failure::Fatal("response has no choices[0].message.content".into()))
    }

    /// Sends one chat request, retrying transport errors, 429 and 5xx.
    pub fn chat(&mut self, prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": SYSTEM},
                {"role": "user", "content": prompt},
            ],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        });
        let mut last = String::new();
        for attempt in 0..=self.cfg.backoff.len() {
            if attempt > 0 {
                let wait = self.cfg.backoff[attempt - 1];
                log::warn!("llm call failed ({last}); retrying in {wait:?}");
                (self.sleep)(wait);
            }
            match self.attempt(&body) {
                Ok(s) => return Ok(s),
                Err(Failure::Fatal(m)) => return Err(Error::Backend(m)),
                Err(Failure::Retry(m)) => last = m,
            }
        }
        Err(Error::Backend(format!("gave up after {} attempts: {last}", self.cfg.backoff.len() + 1)))
    }
}

impl GeneratorBackend for LlmBackend {
    fn name(&self) -> &str {
        "llm"
    }

    fn generate(&mut self, req: &GenerateRequest<'_>) -> Result<String> {
        self.chat(req.prompt)
    }

    fn refine_rules(&mut self, req: &RefineRequest<'_>) -> Result<String> {
        self.chat(req.prompt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Serves canned `(status, body)` replies in order and records request bodies.
    fn mock(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        std::thread::spawn(move || {
            for (status, body) in replies {
                let Ok((stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                log.lock().unwrap().push(String::from_utf8(buf).unwrap());
                let mut s = stream;
                write!(
                    s,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (url, seen)
    }

    fn ok_body(content: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    fn backend(url: &str, waits: Arc<Mutex<Vec<Duration>>>) -> LlmBackend {
        let mut cfg = LlmConfig::new(url, "test-model");
        cfg.api_key = Some("k".into());
        LlmBackend::new(cfg).with_sleep(move |d| waits.lock().unwrap().push(d))
    }

    #[test]
    fn endpoint_normalization() {
        assert_eq!(normalize_endpoint("http://h/v1/"), "http://h/v1/chat/completions");
        assert_eq!(normalize_endpoint("http://h/v1/chat/completions"), "http://h/v1/chat/completions");
    }

    #[test]
    fn sends_chat_shape_and_reads_content() {
        let (url, seen) = mock(vec![(200, ok_body("a,y\n1,0"))]);
        let waits = Arc::new(Mutex::new(Vec::new()));
        let out = backend(&url, Arc::clone(&waits)).chat("hello").unwrap();
        assert_eq!(out, "a,y\n1,0");
        let body: Json = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["messages"][1]["content"], "hello");
        assert!(body["temperature"].is_number() && body["max_tokens"].is_number());
        assert!(waits.lock().unwrap().is_empty());
    }

    #[test]
    fn retries_with_backoff_then_succeeds() {
        let (url, _) = mock(vec![(500, "{}".into()), (429, "{}".into()), (200, ok_body("done"))]);
        let waits = Arc::new(Mutex::new(Vec::new()));
        assert_eq!(backend(&url, Arc::clone(&waits)).chat("p").unwrap(), "done");
        assert_eq!(*waits.lock().unwrap(), vec![Duration::from_secs(1), Duration::from_secs(2)]);
    }

    #[test]
    fn gives_up_after_four_attempts() {
        let (url, seen) = mock(vec![(503, "{}".into()); 4]);
        let waits = Arc::new(Mutex::new(Vec::new()));
        let err = backend(&url, Arc::clone(&waits)).chat("p").unwrap_err();
        assert!(matches!(err, Error::Backend(_)));
        assert_eq!(seen.lock().unwrap().len(), 4);
        assert_eq!(*waits.lock().unwrap(), [1, 2, 4].map(Duration::from_secs).to_vec());
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, seen) = mock(vec![(401, "{\"error\":\"bad key\"}".into())]);
        let waits = Arc::new(Mutex::new(Vec::new()));
        assert!(backend(&url, Arc::clone(&waits)).chat("p").is_err());
        assert_eq!(seen.lock().unwrap().len(), 1);
        assert!(waits.lock().unwrap().is_empty());
    }
}
