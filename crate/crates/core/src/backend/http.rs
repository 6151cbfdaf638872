//! OpenAI-compatible chat-completions backend.
//!
//! Every answer sample is its own request with `n = 1`; the `k` requests for
//! one input are issued concurrently, bounded by a per-backend limit shared
//! across all callers.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendError, EntailmentVerdict, Generator, GeneratorInput, PromptTemplates};
use crate::domain::Decoding;

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "CAR_API_KEY";

const MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Unavailable(String),
    Status { code: u16, body: String },
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Timeout | TransportError::Unavailable(_) => true,
            TransportError::Status { code, .. } => *code == 429 || *code >= 500,
        }
    }
}

/// Minimal JSON-over-HTTP POST, swappable for tests.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self {
            agent: ureq::AgentBuilder::new().build(),
        }
    }
}

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, TransportError> {
        let mut request = self.agent.post(url).timeout(timeout);
        if let Some(token) = bearer {
            request = request.set("Authorization", &format!("Bearer {token}"));
        }
        match request.send_json(body) {
            Ok(response) => response
                .into_json::<Value>()
                .map_err(|e| TransportError::Unavailable(format!("invalid JSON body: {e}"))),
            Err(ureq::Error::Status(code, response)) => Err(TransportError::Status {
                code,
                body: response.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(err)) => {
                let message = err.to_string();
                if message.contains("timed out") {
                    Err(TransportError::Timeout)
                } else {
                    Err(TransportError::Unavailable(message))
                }
            }
        }
    }
}

struct Semaphore {
    available: Mutex<usize>,
    released: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            available: Mutex::new(permits),
            released: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock().expect("semaphore poisoned");
        while *available == 0 {
            available = self.released.wait(available).expect("semaphore poisoned");
        }
        *available -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("semaphore poisoned") += 1;
        self.0.released.notify_one();
    }
}

pub struct HttpBackend<T = UreqTransport> {
    transport: T,
    endpoint: String,
    model_name: String,
    judge_model_name: String,
    api_key: Option<String>,
    request_timeout: Duration,
    prompts: PromptTemplates,
    limiter: Semaphore,
    backoff: Duration,
}

impl HttpBackend<UreqTransport> {
    /// Builds a backend over a real HTTP client, reading the token from
    /// [`API_KEY_ENV`].
    pub fn from_env(
        endpoint: impl Into<String>,
        model_name: impl Into<String>,
        request_timeout: Duration,
        max_concurrency: usize,
        prompts: PromptTemplates,
    ) -> Self {
        let mut backend = Self::with_transport(
            UreqTransport::default(),
            endpoint,
            model_name,
            request_timeout,
            max_concurrency,
            prompts,
        );
        backend.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        backend
    }
}

impl<T: Transport> HttpBackend<T> {
    pub fn with_transport(
        transport: T,
        endpoint: impl Into<String>,
        model_name: impl Into<String>,
        request_timeout: Duration,
        max_concurrency: usize,
        prompts: PromptTemplates,
    ) -> Self {
        let model_name = model_name.into();
        Self {
            transport,
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            judge_model_name: model_name.clone(),
            model_name,
            api_key: None,
            request_timeout,
            prompts,
            limiter: Semaphore::new(max_concurrency.max(1)),
            backoff: Duration::from_millis(250),
        }
    }

    /// Routes entailment judgments to a different model.
    pub fn with_judge_model(mut self, name: impl Into<String>) -> Self {
        self.judge_model_name = name.into();
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    /// Base delay between retries; doubled after each failed attempt.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint)
    }

    fn complete(
        &self,
        model: &str,
        prompt: &str,
        decoding: &Decoding,
    ) -> Result<String, BackendError> {
        let body = json!({
            "model": model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": decoding.temperature,
            "max_tokens": decoding.max_tokens,
            "n": 1,
        });
        let url = self.url();
        let mut delay = self.backoff;
        let mut last = TransportError::Unavailable("no attempt made".into());
        for attempt in 1..=MAX_ATTEMPTS {
            let outcome = {
                let _permit = self.limiter.acquire();
                self.transport
                    .post_json(&url, self.api_key.as_deref(), &body, self.request_timeout)
            };
            match outcome {
                Ok(reply) => return extract_content(&reply),
                Err(err) if err.retryable() && attempt < MAX_ATTEMPTS => {
                    log::warn!("request to {url} failed (attempt {attempt}): {err:?}");
                    last = err;
                    thread::sleep(delay);
                    delay *= 2;
                }
                Err(err) => {
                    last = err;
                    break;
                }
            }
        }
        Err(match last {
            TransportError::Timeout => BackendError::Timeout,
            TransportError::Unavailable(msg) => BackendError::BackendUnavailable(msg),
            TransportError::Status { code, body } => {
                BackendError::BackendUnavailable(format!("HTTP {code}: {body}"))
            }
        })
    }
}

fn extract_content(reply: &Value) -> Result<String, BackendError> {
    reply
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| {
            BackendError::BackendUnavailable(format!("reply has no message content: {reply}"))
        })
}

/// Lenient yes/no decoding of a judge reply.
pub(crate) fn parse_judgment(reply: &str) -> Result<EntailmentVerdict, BackendError> {
    let lowered = reply.to_lowercase();
    let words: Vec<&str> = lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    match words.first() {
        Some(&"yes") => return Ok(EntailmentVerdict::Entails),
        Some(&"no") => return Ok(EntailmentVerdict::NotEntails),
        _ => {}
    }
    let has_yes = words.contains(&"yes");
    let has_no = words.contains(&"no");
    match (has_yes, has_no) {
        (true, false) => Ok(EntailmentVerdict::Entails),
        (false, true) => Ok(EntailmentVerdict::NotEntails),
        _ => Err(BackendError::UnparseableJudgment(reply.to_string())),
    }
}

impl<T: Transport> Generator for HttpBackend<T> {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn judge_model_name(&self) -> &str {
        &self.judge_model_name
    }

    fn sample(
        &self,
        input: &GeneratorInput<'_>,
        k: usize,
        decoding: &Decoding,
    ) -> Result<Vec<String>, BackendError> {
        let prompt = self.prompts.render_input(input);
        thread::scope(|scope| {
            let handles: Vec<_> = (0..k)
                .map(|_| scope.spawn(|| self.complete(&self.model_name, &prompt, decoding)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sampling thread panicked"))
                .collect()
        })
    }

    fn judge(
        &self,
        premise: &str,
        hypothesis: &str,
        decoding: &Decoding,
    ) -> Result<EntailmentVerdict, BackendError> {
        let prompt = self.prompts.render_entailment(premise, hypothesis);
        let reply = self.complete(&self.judge_model_name, &prompt, decoding)?;
        parse_judgment(&reply)
    }
}
