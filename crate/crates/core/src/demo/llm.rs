//! Text models that turn a prompt into candidate routes: an OpenAI-style
//! chat-completion endpoint and a scripted offline stand-in.

use std::path::Path;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::prompt::count_tokens;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("endpoint configuration: {0}")]
    Config(String),
    #[error("request failed after {attempts} attempts: {message}")]
    Exhausted { attempts: u32, message: String },
    #[error("endpoint rejected credentials (HTTP {0})")]
    Auth(u16),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion: {0}")]
    Malformed(String),
    #[error("scripted responses: {0}")]
    Script(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Endpoint-reported total tokens, or whitespace chunks of prompt plus
    /// completion when the endpoint does not report usage.
    pub tokens: usize,
}

pub trait TextModel: Send {
    fn complete(&mut self, prompt: &str) -> Result<Completion, LlmError>;
}

pub const ENV_BASE_URL: &str = "LEED_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "LEED_LLM_API_KEY";
pub const ENV_MODEL: &str = "LEED_LLM_MODEL";
pub const ENV_TIMEOUT: &str = "LEED_LLM_TIMEOUT_SECS";

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    /// e.g. `https://api.openai.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub temperature: f64,
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff: Duration,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            model: model.into(),
            timeout: Duration::from_secs(60),
            temperature: 0.2,
            max_attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }

    /// Read `LEED_LLM_BASE_URL`, `LEED_LLM_API_KEY`, `LEED_LLM_MODEL` and
    /// `LEED_LLM_TIMEOUT_SECS`.
    pub fn from_env() -> Result<Self, LlmError> {
        let base = std::env::var(ENV_BASE_URL).map_err(|_| LlmError::Config(format!("{ENV_BASE_URL} is not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-3.5-turbo".to_string());
        let mut cfg = Self::new(base, model);
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        if let Ok(t) = std::env::var(ENV_TIMEOUT) {
            let secs: f64 = t
                .parse()
                .map_err(|_| LlmError::Config(format!("{ENV_TIMEOUT}={t} is not a number")))?;
            cfg.timeout = Duration::from_secs_f64(secs);
        }
        Ok(cfg)
    }
}

/// Blocking chat-completion client with bounded retries.
pub struct ChatEndpoint {
    config: EndpointConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Done(Completion),
    Retry(String),
    Fatal(LlmError),
}

impl ChatEndpoint {
    pub fn new(config: EndpointConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        })
    }

    fn attempt(&self, prompt: &str) -> Attempt {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(self.request_body(prompt)) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let body = match resp.body_mut().read_to_string() {
            Ok(b) => b,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        match status {
            200..=299 => match parse_completion(&body, prompt) {
                Ok(c) => Attempt::Done(c),
                Err(e) => Attempt::Fatal(e),
            },
            401 | 403 => Attempt::Fatal(LlmError::Auth(status)),
            408 | 429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
            _ => Attempt::Fatal(LlmError::Status { status, body }),
        }
    }
}

/// Extract `choices[0].message.content` and `usage.total_tokens`.
pub fn parse_completion(body: &str, prompt: &str) -> Result<Completion, LlmError> {
    let v: Value = serde_json::from_str(body).map_err(|e| LlmError::Malformed(e.to_string()))?;
    let text = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| LlmError::Malformed("missing choices[0].message.content".into()))?
        .to_string();
    let tokens = v["usage"]["total_tokens"]
        .as_u64()
        .map(|t| t as usize)
        .unwrap_or_else(|| count_tokens(prompt) + count_tokens(&text));
    Ok(Completion { text, tokens })
}

impl TextModel for ChatEndpoint {
    fn complete(&mut self, prompt: &str) -> Result<Completion, LlmError> {
        let mut delay = self.config.backoff;
        let mut last = String::new();
        for attempt in 1..=self.config.max_attempts {
            match self.attempt(prompt) {
                Attempt::Done(c) => return Ok(c),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(msg) => {
                    log::warn!("completion attempt {attempt} failed: {msg}");
                    last = msg;
                    if attempt < self.config.max_attempts {
                        thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(LlmError::Exhausted {
            attempts: self.config.max_attempts,
            message: last,
        })
    }
}

/// Replays numbered response files (`0.txt`, `1.txt`, ... sorted by their
/// numeric stem) in order; the last one repeats once the script runs out.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    responses: Vec<String>,
    next: usize,
}

impl ScriptedModel {
    pub fn new(responses: Vec<String>) -> Result<Self, LlmError> {
        if responses.is_empty() {
            return Err(LlmError::Script("no responses".into()));
        }
        Ok(Self { responses, next: 0 })
    }

    pub fn from_dir(dir: &Path) -> Result<Self, LlmError> {
        let entries = std::fs::read_dir(dir).map_err(|e| LlmError::Script(format!("{}: {e}", dir.display())))?;
        let mut numbered = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| LlmError::Script(e.to_string()))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(n) = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<u64>().ok())
            else {
                continue;
            };
            numbered.push((n, path));
        }
        numbered.sort();
        let responses = numbered
            .into_iter()
            .map(|(_, p)| std::fs::read_to_string(&p).map_err(|e| LlmError::Script(format!("{}: {e}", p.display()))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(responses)
    }

    pub fn calls(&self) -> usize {
        self.next
    }
}

impl TextModel for ScriptedModel {
    fn complete(&mut self, prompt: &str) -> Result<Completion, LlmError> {
        let text = self.responses[self.next.min(self.responses.len() - 1)].clone();
        self.next += 1;
        let tokens = count_tokens(prompt) + count_tokens(&text);
        Ok(Completion { text, tokens })
    }
}

/// Model that always fails; stands in for an unreachable endpoint.
#[derive(Debug, Clone, Default)]
pub struct UnavailableModel;

impl TextModel for UnavailableModel {
    fn complete(&mut self, _prompt: &str) -> Result<Completion, LlmError> {
        Err(LlmError::Exhausted {
            attempts: 0,
            message: "model unavailable".into(),
        })
    }
}
