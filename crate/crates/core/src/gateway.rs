//! Text-generation backends: an OpenAI-compatible remote endpoint and a
//! deterministic mock for offline runs.
//!
//! Nothing else in the crate performs network I/O.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_API_KEY_ENV: &str = "AEGIS_API_KEY";
pub const AGENT_TEMPERATURE: f64 = 0.0;
pub const MANIPULATOR_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("environment variable {0} holding the API key is not set")]
    MissingCredential(String),
    #[error("gave up after {attempts} attempts (last status: {})", last_status.map(|s| s.to_string()).unwrap_or_else(|| "none".into()))]
    ExhaustedRetries {
        attempts: u32,
        last_status: Option<u16>,
        message: String,
    },
    #[error("backend returned non-retryable status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed backend response: {0}")]
    InvalidResponse(String),
    #[error("scripted mock has no response for message digest {0}")]
    ScriptMissing(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>, temperature: f64) -> Self {
        ChatRequest {
            model: model.into(),
            messages,
            temperature,
            max_tokens: 1024,
            seed: Some(DEFAULT_SEED),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must be non-empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    fn last_user_message(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

/// Deterministic transformation applied by the mock backend to the last user
/// message of a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockRule {
    Echo,
    /// Appends `"\n[INJECTED]"`.
    InjectMarker,
    /// Replaces the last integer with its successor.
    CorruptNumber,
    FixedAnswer(String),
    /// Responses keyed by the sha256 hex digest of the last user message;
    /// `fallback` answers any unlisted message.
    Scripted {
        table: BTreeMap<String, String>,
        fallback: Option<String>,
    },
}

impl MockRule {
    pub fn apply(&self, input: &str) -> Result<String, GatewayError> {
        Ok(match self {
            MockRule::Echo => input.to_string(),
            MockRule::InjectMarker => format!("{input}\n[INJECTED]"),
            MockRule::CorruptNumber => corrupt_last_integer(input),
            MockRule::FixedAnswer(text) => text.clone(),
            MockRule::Scripted { table, fallback } => {
                let key = digest_hex(input);
                match table.get(&key).or(fallback.as_ref()) {
                    Some(answer) => answer.clone(),
                    None => return Err(GatewayError::ScriptMissing(key)),
                }
            }
        })
    }

    /// Builds a scripted rule from plain message → response pairs.
    pub fn scripted<I, K, V>(pairs: I, fallback: Option<String>) -> MockRule
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        MockRule::Scripted {
            table: pairs
                .into_iter()
                .map(|(k, v)| (digest_hex(k.as_ref()), v.into()))
                .collect(),
            fallback,
        }
    }
}

impl fmt::Display for MockRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MockRule::Echo => f.write_str("echo"),
            MockRule::InjectMarker => f.write_str("inject-marker"),
            MockRule::CorruptNumber => f.write_str("corrupt-number"),
            MockRule::FixedAnswer(text) => write!(f, "fixed-answer={text}"),
            MockRule::Scripted { table, .. } => write!(f, "scripted({} entries)", table.len()),
        }
    }
}

impl FromStr for MockRule {
    type Err = GatewayError;

    /// Accepts `echo`, `inject-marker`, `corrupt-number`, `fixed-answer=<text>`
    /// and `scripted=<path to JSON object of digest → response>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "echo" => return Ok(MockRule::Echo),
            "inject-marker" => return Ok(MockRule::InjectMarker),
            "corrupt-number" => return Ok(MockRule::CorruptNumber),
            _ => {}
        }
        if let Some(text) = s.strip_prefix("fixed-answer=") {
            return Ok(MockRule::FixedAnswer(text.to_string()));
        }
        if let Some(path) = s.strip_prefix("scripted=") {
            let body = std::fs::read_to_string(path).map_err(|e| {
                GatewayError::InvalidConfig(format!("reading script table {path}: {e}"))
            })?;
            let mut table: BTreeMap<String, String> = serde_json::from_str(&body).map_err(|e| {
                GatewayError::InvalidConfig(format!("parsing script table {path}: {e}"))
            })?;
            let fallback = table.remove("*");
            return Ok(MockRule::Scripted { table, fallback });
        }
        Err(GatewayError::InvalidConfig(format!("unknown mock rule {s:?}")))
    }
}

pub fn digest_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn corrupt_last_integer(input: &str) -> String {
    static INT: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let re = INT.get_or_init(|| Regex::new(r"-?\d+").unwrap());
    let Some(m) = re.find_iter(input).last() else {
        return input.to_string();
    };
    let replacement = match m.as_str().parse::<i128>() {
        Ok(v) => (v + 1).to_string(),
        // too long for i128: bump the final digit textually
        Err(_) => {
            let mut digits: Vec<u8> = m.as_str().bytes().collect();
            let last = digits.len() - 1;
            digits[last] = if digits[last] == b'9' { b'0' } else { digits[last] + 1 };
            String::from_utf8(digits).unwrap()
        }
    };
    format!("{}{}{}", &input[..m.start()], replacement, &input[m.end()..])
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub api_key_env: String,
    pub timeout: Duration,
    pub max_retries: u32,
    /// First retry delay; later delays double, each with ±20% jitter.
    pub backoff_base: Duration,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff_base: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendConfig {
    Remote(RemoteConfig),
    Mock(MockRule),
}

impl BackendConfig {
    pub fn mock(rule: MockRule) -> Self {
        BackendConfig::Mock(rule)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if let BackendConfig::Remote(remote) = self {
            if remote.base_url.trim().is_empty() {
                return Err(GatewayError::InvalidConfig("remote backend requires base_url".into()));
            }
            if remote.api_key_env.trim().is_empty() {
                return Err(GatewayError::InvalidConfig("api_key_env must be non-empty".into()));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BackendConfig::Remote(_) => "remote",
            BackendConfig::Mock(_) => "mock",
        }
    }
}

#[derive(Debug, Serialize)]
struct RequestLogLine<'a> {
    ts: f64,
    backend: &'a str,
    model: &'a str,
    temperature: f64,
    prompt_digest: String,
    response_digest: String,
}

struct Slots {
    free: Mutex<usize>,
    ready: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.ready.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.ready.notify_one();
    }
}

/// Shared handle to a backend. Cheap to clone; clones share the in-flight
/// bound and the request log.
#[derive(Clone)]
pub struct Gateway {
    cfg: Arc<BackendConfig>,
    slots: Arc<Slots>,
    log: Option<Arc<Mutex<std::fs::File>>>,
    model: String,
    seed: u64,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("cfg", &self.cfg)
            .field("model", &self.model)
            .finish()
    }
}

impl Gateway {
    pub fn new(cfg: BackendConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        Ok(Gateway {
            cfg: Arc::new(cfg),
            slots: Arc::new(Slots { free: Mutex::new(4), ready: Condvar::new() }),
            log: None,
            model: "gpt-4o-mini".to_string(),
            seed: DEFAULT_SEED,
        })
    }

    pub fn mock(rule: MockRule) -> Self {
        Gateway::new(BackendConfig::Mock(rule)).expect("mock config is always valid")
    }

    /// Bounds concurrent remote requests (default 4).
    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.slots = Arc::new(Slots { free: Mutex::new(n.max(1)), ready: Condvar::new() });
        self
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    /// Seed sent with every request built by [`Gateway::request`].
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_request_log(mut self, path: PathBuf) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.log = Some(Arc::new(Mutex::new(file)));
        Ok(self)
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    /// Request with this gateway's model, seed and default token budget.
    pub fn request(&self, messages: Vec<ChatMessage>, temperature: f64) -> ChatRequest {
        let mut req = ChatRequest::new(self.model.clone(), messages, temperature);
        req.seed = Some(self.seed);
        req
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let out = match self.cfg.as_ref() {
            BackendConfig::Mock(rule) => {
                req.validate()?;
                rule.apply(req.last_user_message())?
            }
            BackendConfig::Remote(remote) => {
                let _slot = self.slots.acquire();
                complete_remote(remote, req)?
            }
        };
        if let Some(log) = &self.log {
            let line = RequestLogLine {
                ts: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs_f64())
                    .unwrap_or(0.0),
                backend: self.cfg.kind(),
                model: &req.model,
                temperature: req.temperature,
                prompt_digest: digest_hex(&serde_json::to_string(&req.messages).unwrap_or_default()),
                response_digest: digest_hex(&out),
            };
            let mut file = log.lock().unwrap();
            let _ = writeln!(file, "{}", serde_json::to_string(&line).unwrap());
        }
        Ok(out)
    }
}

/// One-shot completion without a shared handle.
pub fn complete(cfg: &BackendConfig, req: &ChatRequest) -> Result<String, GatewayError> {
    cfg.validate()?;
    match cfg {
        BackendConfig::Mock(rule) => {
            req.validate()?;
            rule.apply(req.last_user_message())
        }
        BackendConfig::Remote(remote) => complete_remote(remote, req),
    }
}

enum Attempt {
    Done(String),
    Retry { status: Option<u16>, message: String },
}

fn complete_remote(cfg: &RemoteConfig, req: &ChatRequest) -> Result<String, GatewayError> {
    req.validate()?;
    let key = std::env::var(&cfg.api_key_env)
        .map_err(|_| GatewayError::MissingCredential(cfg.api_key_env.clone()))?;
    let url = format!("{}/v1/chat/completions", cfg.base_url.trim_end_matches('/'));
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(cfg.timeout))
        .http_status_as_error(false)
        .build()
        .into();

    let mut attempts = 0u32;
    loop {
        attempts += 1;
        let (status, message) = match attempt_remote(&agent, &url, &key, req)? {
            Attempt::Done(text) => return Ok(text),
            Attempt::Retry { status, message } => (status, message),
        };
        let retries_used = attempts - 1;
        if retries_used >= cfg.max_retries {
            return Err(GatewayError::ExhaustedRetries { attempts, last_status: status, message });
        }
        log::debug!("retrying {url} after attempt {attempts} ({message})");
        std::thread::sleep(backoff_delay(cfg.backoff_base, retries_used));
    }
}

/// Delay before retry number `retry` (0-based): `base · 2^retry`, jittered ±20%.
pub fn backoff_delay(base: Duration, retry: u32) -> Duration {
    let nominal = base.as_secs_f64() * 2f64.powi(retry.min(30) as i32);
    let jitter: f64 = rand::rng().random_range(-0.2..=0.2);
    Duration::from_secs_f64(nominal * (1.0 + jitter))
}

fn attempt_remote(
    agent: &ureq::Agent,
    url: &str,
    key: &str,
    req: &ChatRequest,
) -> Result<Attempt, GatewayError> {
    let response = agent
        .post(url)
        .header("Authorization", &format!("Bearer {key}"))
        .send_json(req);
    let mut response = match response {
        Ok(r) => r,
        Err(e) => {
            // timeouts and connection failures are transient
            return Ok(Attempt::Retry { status: None, message: e.to_string() });
        }
    };
    let status = response.status().as_u16();
    let body = response.body_mut().read_to_string().unwrap_or_default();
    if status == 429 || (500..600).contains(&status) {
        return Ok(Attempt::Retry { status: Some(status), message: truncate(&body, 200) });
    }
    if !(200..300).contains(&status) {
        return Err(GatewayError::Http { status, body: truncate(&body, 500) });
    }
    let value: Value = serde_json::from_str(&body)
        .map_err(|e| GatewayError::InvalidResponse(format!("{e}: {}", truncate(&body, 200))))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(|s| Attempt::Done(s.to_string()))
        .ok_or_else(|| GatewayError::InvalidResponse("missing choices[0].message.content".into()))
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}…", &s[..i]),
        None => s.to_string(),
    }
}
