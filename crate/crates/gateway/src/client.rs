//! Blocking chat-completions client with exponential-backoff retries and a
//! bound on concurrent in-flight requests.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

/// Connection settings for one remote endpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct EndpointConfig {
    /// Base URL; requests go to `{base_url}/v1/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key. An unset or
    /// empty variable means the endpoint is used anonymously.
    pub api_key_env: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Concurrent request ceiling across threads sharing this client.
    pub max_in_flight: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: String::new(),
            model: String::new(),
            api_key_env: "MORALSIM_API_KEY".into(),
            timeout: Duration::from_secs(30),
            max_retries: 3,
            temperature: 1.0,
            max_output_tokens: 2,
            max_in_flight: 4,
        }
    }
}

impl EndpointConfig {
    /// Parse from `key = value` text. Keys: `base_url` (required), `model`
    /// (required), `api_key_env`, `timeout_s`, `max_retries`, `temperature`,
    /// `max_output_tokens`, `max_in_flight`.
    pub fn from_kv(label: &str, text: &str) -> Result<Self, GatewayError> {
        let mut cfg = EndpointConfig::default();
        let mut saw_base = false;
        let mut saw_model = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                GatewayError::Config(format!("{label} line {}: expected key = value", idx + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                GatewayError::Config(format!(
                    "{label} line {}: bad value '{value}' for '{what}'",
                    idx + 1
                ))
            };
            match key {
                "base_url" => {
                    cfg.base_url = value.trim_end_matches('/').to_string();
                    saw_base = true;
                }
                "model" => {
                    cfg.model = value.to_string();
                    saw_model = true;
                }
                "api_key_env" => cfg.api_key_env = value.to_string(),
                "timeout_s" => {
                    cfg.timeout =
                        Duration::from_secs_f64(value.parse().map_err(|_| bad("timeout_s"))?)
                }
                "max_retries" => cfg.max_retries = value.parse().map_err(|_| bad("max_retries"))?,
                "temperature" => cfg.temperature = value.parse().map_err(|_| bad("temperature"))?,
                "max_output_tokens" => {
                    cfg.max_output_tokens = value.parse().map_err(|_| bad("max_output_tokens"))?
                }
                "max_in_flight" => {
                    cfg.max_in_flight = value.parse().map_err(|_| bad("max_in_flight"))?
                }
                other => {
                    return Err(GatewayError::Config(format!(
                        "{label} line {}: unknown key '{other}'",
                        idx + 1
                    )))
                }
            }
        }
        if !saw_base || !saw_model {
            return Err(GatewayError::Config(format!(
                "{label}: 'base_url' and 'model' are required"
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.timeout <= Duration::ZERO {
            return Err(GatewayError::Config("timeout must be > 0".into()));
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("endpoint rejected the credentials (HTTP {status})")]
    Auth { status: u16 },

    #[error("giving up after {attempts} attempts: {last}")]
    TransportExhausted { attempts: u32, last: String },

    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },

    #[error("response has no choices[0].message.content: {0}")]
    MalformedResponse(String),

    #[error("gateway configuration: {0}")]
    Config(String),
}

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    available: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(slots: usize) -> Self {
        InFlight {
            available: Mutex::new(slots),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut available = self.available.lock().unwrap();
        while *available == 0 {
            available = self.freed.wait(available).unwrap();
        }
        *available -= 1;
    }

    fn release(&self) {
        *self.available.lock().unwrap() += 1;
        self.freed.notify_one();
    }
}

/// A reusable client for one endpoint.
pub struct GatewayClient {
    cfg: EndpointConfig,
    http: ureq::Agent,
    in_flight: InFlight,
}

enum AttemptError {
    Fatal(GatewayError),
    Retryable(String),
}

impl GatewayClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let http = ureq::AgentBuilder::new().timeout(cfg.timeout).build();
        Ok(GatewayClient {
            in_flight: InFlight::new(cfg.max_in_flight),
            cfg,
            http,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn api_key(&self) -> Option<String> {
        if self.cfg.api_key_env.is_empty() {
            return None;
        }
        std::env::var(&self.cfg.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
    }

    fn attempt(&self, body: &Value) -> Result<String, AttemptError> {
        let url = format!("{}/v1/chat/completions", self.cfg.base_url);
        let mut req = self.http.post(&url).set("content-type", "application/json");
        if let Some(key) = self.api_key() {
            req = req.set("authorization", &format!("Bearer {key}"));
        }
        let response = match req.send_string(&body.to_string()) {
            Ok(r) => r,
            Err(ureq::Error::Status(status, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                return match status {
                    401 | 403 => Err(AttemptError::Fatal(GatewayError::Auth { status })),
                    500..=599 => Err(AttemptError::Retryable(format!("HTTP {status}: {text}"))),
                    _ => Err(AttemptError::Fatal(GatewayError::Http {
                        status,
                        body: text,
                    })),
                };
            }
            Err(ureq::Error::Transport(t)) => return Err(AttemptError::Retryable(t.to_string())),
        };
        let text = response
            .into_string()
            .map_err(|e| AttemptError::Retryable(format!("reading body: {e}")))?;
        let parsed: Value = serde_json::from_str(&text)
            .map_err(|_| AttemptError::Fatal(GatewayError::MalformedResponse(text.clone())))?;
        parsed["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or(AttemptError::Fatal(GatewayError::MalformedResponse(text)))
    }

    /// Send one chat-completion request carrying the prompt as a single user
    /// message and return the first choice's content. Transport errors and
    /// 5xx responses are retried with exponential backoff (1s base, factor
    /// 2) up to `max_retries` extra attempts; auth failures are not retried.
    pub fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": self.cfg.max_output_tokens,
            "temperature": self.cfg.temperature,
        });
        self.in_flight.acquire();
        let result = self.complete_inner(&body);
        self.in_flight.release();
        result
    }

    fn complete_inner(&self, body: &Value) -> Result<String, GatewayError> {
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_secs(1 << (attempt - 1)));
            }
            match self.attempt(body) {
                Ok(content) => return Ok(content),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(msg)) => last = msg,
            }
        }
        Err(GatewayError::TransportExhausted {
            attempts: self.cfg.max_retries + 1,
            last,
        })
    }
}
