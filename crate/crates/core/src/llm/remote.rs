//! Client for OpenAI-style chat-completions endpoints.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};

pub const ENV_BASE_URL: &str = "DESKMATE_LLM_BASE_URL";
pub const ENV_MODEL: &str = "DESKMATE_LLM_MODEL";
pub const ENV_API_KEY: &str = "DESKMATE_LLM_API_KEY";
pub const ENV_MAX_IN_FLIGHT: &str = "DESKMATE_LLM_MAX_IN_FLIGHT";
pub const ENV_TIMEOUT_SECS: &str = "DESKMATE_LLM_TIMEOUT_SECS";

const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Everything before `/chat/completions`.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff: Duration,
    pub max_in_flight: usize,
    pub temperature: f32,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(60),
            max_retries: 2,
            backoff: Duration::from_millis(500),
            max_in_flight: 4,
            temperature: 0.0,
        }
    }

    pub fn from_env() -> Result<Self, LlmError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    /// Builds a config from any variable source; `OPENAI_API_KEY` is used
    /// when the dedicated key variable is unset.
    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, LlmError> {
        let model = get(ENV_MODEL)
            .filter(|m| !m.trim().is_empty())
            .ok_or_else(|| LlmError::Config(format!("{ENV_MODEL} is not set")))?;
        let base = get(ENV_BASE_URL).unwrap_or_else(|| DEFAULT_BASE_URL.to_string());
        let mut config = Self::new(base, model);
        config.api_key = get(ENV_API_KEY).or_else(|| get("OPENAI_API_KEY"));
        if let Some(n) = get(ENV_MAX_IN_FLIGHT) {
            config.max_in_flight = n
                .parse()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| LlmError::Config(format!("{ENV_MAX_IN_FLIGHT}={n}")))?;
        }
        if let Some(s) = get(ENV_TIMEOUT_SECS) {
            let secs: u64 = s
                .parse()
                .map_err(|_| LlmError::Config(format!("{ENV_TIMEOUT_SECS}={s}")))?;
            config.timeout = Duration::from_secs(secs);
        }
        Ok(config)
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Counting semaphore bounding concurrent requests.
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("limiter poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("limiter poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("limiter poisoned") += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReply,
}

#[derive(Deserialize)]
struct WireReply {
    content: Option<String>,
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    limiter: Limiter,
    id: String,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            limiter: Limiter::new(config.max_in_flight),
            id: format!("remote:{}", config.model),
            config,
            client,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn attempt(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let user = request.user_text();
        let body = WireRequest {
            model: &self.config.model,
            messages: vec![
                WireMessage {
                    role: "system",
                    content: &request.system_prompt,
                },
                WireMessage {
                    role: "user",
                    content: &user,
                },
            ],
            temperature: self.config.temperature,
        };
        let mut call = self.client.post(self.config.endpoint()).json(&body);
        if let Some(key) = &self.config.api_key {
            call = call.bearer_auth(key);
        }
        let response = call.send().map_err(transport_error)?;
        let status = response.status().as_u16();
        let text = response.text().map_err(transport_error)?;
        match status {
            200..=299 => {}
            429 => return Err(LlmError::RateLimited),
            _ => return Err(LlmError::Http { status, body: text }),
        }
        let parsed: WireResponse =
            serde_json::from_str(&text).map_err(|e| LlmError::Protocol(e.to_string()))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Protocol("response has no choices".into()))?;
        if content.trim().is_empty() {
            return Err(LlmError::EmptyResponse);
        }
        Ok(content)
    }
}

fn transport_error(e: reqwest::Error) -> LlmError {
    if e.is_timeout() {
        LlmError::Timeout
    } else {
        LlmError::Transport(e.to_string())
    }
}

impl ChatBackend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let _permit = self.limiter.acquire();
        let started = Instant::now();
        let mut delay = self.config.backoff;
        let mut retries = 0;
        loop {
            match self.attempt(request) {
                Ok(text) => {
                    return Ok(ChatResponse {
                        text,
                        backend_id: self.id.clone(),
                        latency: started.elapsed(),
                    })
                }
                Err(e) if e.is_transient() && retries < self.config.max_retries => {
                    retries += 1;
                    thread::sleep(delay);
                    delay *= 2;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::RoleTag;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Serves the canned (status, body) replies in order, one per connection,
    /// and counts requests.
    fn fake_server(replies: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        thread::spawn(move || {
            for (status, body) in replies {
                let Ok((stream, _)) = listener.accept() else {
                    return;
                };
                counter.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream);
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut buf = vec![0; length];
                reader.read_exact(&mut buf).unwrap();
                let mut stream = reader.into_inner();
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
            }
        });
        (format!("http://{addr}/v1"), hits)
    }

    fn ok_body(text: &str) -> String {
        serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]})
            .to_string()
    }

    fn backend(url: String) -> RemoteBackend {
        let mut config = RemoteConfig::new(url, "test-model");
        config.backoff = Duration::from_millis(5);
        config.timeout = Duration::from_secs(5);
        RemoteBackend::new(config).unwrap()
    }

    fn request() -> ChatRequest {
        ChatRequest::new(RoleTag::Decision, "system").with("memory", "state")
    }

    #[test]
    fn returns_choice_text() {
        let (url, hits) = fake_server(vec![(200, ok_body("ACTION Stop | outcome=achieved"))]);
        let r = backend(url).complete(&request()).unwrap();
        assert_eq!(r.text, "ACTION Stop | outcome=achieved");
        assert_eq!(r.backend_id, "remote:test-model");
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn retries_transient_failures_twice() {
        let (url, hits) = fake_server(vec![
            (429, "{}".into()),
            (503, "busy".into()),
            (200, ok_body("Y\nfine")),
        ]);
        let r = backend(url).complete(&request()).unwrap();
        assert_eq!(r.text, "Y\nfine");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_two_retries() {
        let (url, hits) = fake_server(vec![
            (429, "{}".into()),
            (429, "{}".into()),
            (429, "{}".into()),
            (200, ok_body("unused")),
        ]);
        let err = backend(url).complete(&request()).unwrap_err();
        assert_eq!(err, LlmError::RateLimited);
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, hits) = fake_server(vec![(401, "nope".into()), (200, ok_body("x"))]);
        let err = backend(url).complete(&request()).unwrap_err();
        assert!(matches!(err, LlmError::Http { status: 401, .. }));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn malformed_body_is_a_protocol_error() {
        let (url, _) = fake_server(vec![(200, "{\"choices\": []}".into())]);
        assert!(matches!(
            backend(url).complete(&request()),
            Err(LlmError::Protocol(_))
        ));
    }

    #[test]
    fn slow_server_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        thread::spawn(move || {
            let held: Vec<_> = listener.incoming().take(3).collect();
            thread::sleep(Duration::from_secs(3));
            drop(held);
        });
        let mut config = RemoteConfig::new(url, "m");
        config.timeout = Duration::from_millis(200);
        config.backoff = Duration::from_millis(1);
        let err = RemoteBackend::new(config)
            .unwrap()
            .complete(&request())
            .unwrap_err();
        assert_eq!(err, LlmError::Timeout);
    }

    #[test]
    fn config_from_variables() {
        let vars = |k: &str| match k {
            ENV_MODEL => Some("gpt-test".to_string()),
            ENV_MAX_IN_FLIGHT => Some("2".to_string()),
            "OPENAI_API_KEY" => Some("k".to_string()),
            _ => None,
        };
        let c = RemoteConfig::from_lookup(vars).unwrap();
        assert_eq!(c.model, "gpt-test");
        assert_eq!(c.base_url, DEFAULT_BASE_URL);
        assert_eq!(c.api_key.as_deref(), Some("k"));
        assert_eq!(c.max_in_flight, 2);
        assert!(matches!(
            RemoteConfig::from_lookup(|_| None),
            Err(LlmError::Config(_))
        ));
    }

    #[test]
    fn limiter_bounds_concurrency() {
        let limiter = Arc::new(Limiter::new(2));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..6)
            .map(|_| {
                let (l, a, p) = (limiter.clone(), active.clone(), peak.clone());
                thread::spawn(move || {
                    let _permit = l.acquire();
                    let now = a.fetch_add(1, Ordering::SeqCst) + 1;
                    p.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(Duration::from_millis(20));
                    a.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
