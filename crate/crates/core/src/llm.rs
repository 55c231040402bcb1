//! Chat-completion gateway with live, record and replay modes.
//!
//! Fixtures are stored one file per request digest (`<digest>.json`) holding
//! both the request snapshot and the response. Replay never touches the
//! transport; record serves an existing fixture before going to the network.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_API_KEY_ENV: &str = "LLM_API_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("request timed out")]
    Timeout,
    #[error("provider returned HTTP {0}")]
    HttpError(u16),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error("no fixture recorded for request digest {0}")]
    FixtureMissing(String),
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("fixture store: {0}")]
    Fixture(String),
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
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    /// Single user turn at temperature 0.
    pub fn user(model: &str, prompt: impl Into<String>) -> Self {
        ChatRequest {
            model: model.to_string(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: 0.0,
            max_tokens: None,
        }
    }

    fn check(&self) -> Result<(), GatewayError> {
        let invalid = |m: &str| Err(GatewayError::InvalidRequest(m.to_string()));
        match self.messages.last() {
            None => invalid("messages must not be empty"),
            Some(m) if m.role != Role::User => invalid("last message must come from the user"),
            _ if !(0.0..=2.0).contains(&self.temperature) => invalid("temperature must be within [0, 2]"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Live,
    Record,
    #[default]
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub base_url: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub mode: ProviderMode,
    /// First retry delay; doubles on every further attempt.
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
}

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}
fn default_timeout() -> u64 {
    30
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    1000
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            base_url: "https://api.openai.com/v1".to_string(),
            api_key_env: default_key_env(),
            timeout_s: default_timeout(),
            max_retries: default_retries(),
            mode: ProviderMode::Replay,
            retry_backoff_ms: default_backoff(),
        }
    }
}

impl ProviderConfig {
    pub fn check(&self) -> Result<(), GatewayError> {
        if self.timeout_s < 1 {
            return Err(GatewayError::InvalidRequest("timeout_s must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct CanonicalMessage {
    role: Role,
    content: String,
}

#[derive(Serialize)]
struct CanonicalRequest<'a> {
    model: &'a str,
    temperature: f64,
    max_tokens: Option<u32>,
    messages: Vec<CanonicalMessage>,
}

/// SHA-256 over a fixed-order serialisation with whitespace-normalised
/// message content, as 64 lowercase hex characters.
pub fn request_digest(request: &ChatRequest) -> String {
    let canonical = CanonicalRequest {
        model: &request.model,
        temperature: request.temperature,
        max_tokens: request.max_tokens,
        messages: request
            .messages
            .iter()
            .map(|m| CanonicalMessage {
                role: m.role,
                content: m.content.split_whitespace().collect::<Vec<_>>().join(" "),
            })
            .collect(),
    };
    let bytes = serde_json::to_vec(&canonical).expect("canonical request serialises");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    Timeout,
    Connect(String),
}

/// The only place the gateway touches the network.
pub trait ChatTransport: Send + Sync {
    fn post_json(&self, url: &str, api_key: &str, body: &str, timeout: Duration) -> Result<HttpReply, TransportError>;
}

/// Blocking HTTP transport; the client is built on first use so replay runs
/// never create one.
pub struct HttpTransport {
    client: OnceLock<reqwest::blocking::Client>,
}

impl HttpTransport {
    pub fn new() -> Self {
        HttpTransport { client: OnceLock::new() }
    }

    fn client(&self) -> &reqwest::blocking::Client {
        self.client.get_or_init(reqwest::blocking::Client::new)
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl ChatTransport for HttpTransport {
    fn post_json(&self, url: &str, api_key: &str, body: &str, timeout: Duration) -> Result<HttpReply, TransportError> {
        let resp = self
            .client()
            .post(url)
            .timeout(timeout)
            .bearer_auth(api_key)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string())
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout
                } else {
                    TransportError::Connect(e.to_string())
                }
            })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connect(e.to_string())
            }
        })?;
        Ok(HttpReply { status, body })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fixture {
    pub digest: String,
    pub request: ChatRequest,
    pub response: ChatResponse,
}

/// One JSON file per request digest.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    pub fn get(&self, digest: &str) -> Result<Option<Fixture>, GatewayError> {
        let path = self.path_for(digest);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(GatewayError::Fixture(format!("{}: {e}", path.display()))),
        }
    }

    /// Write-temp-then-rename so concurrent readers never see a partial file.
    pub fn put(&self, fixture: &Fixture) -> Result<(), GatewayError> {
        let io = |e: std::io::Error| GatewayError::Fixture(e.to_string());
        fs::create_dir_all(&self.dir).map_err(io)?;
        let tmp = self.dir.join(format!(
            ".{}.{}-{}.tmp",
            fixture.digest,
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let mut text = serde_json::to_string_pretty(fixture).map_err(|e| GatewayError::Fixture(e.to_string()))?;
        text.push('\n');
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(text.as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        drop(f);
        fs::rename(&tmp, self.path_for(&fixture.digest)).map_err(io)
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct LlmGateway {
    config: ProviderConfig,
    fixtures: FixtureStore,
    transport: Arc<dyn ChatTransport>,
}

impl LlmGateway {
    pub fn new(config: ProviderConfig, fixtures_dir: impl Into<PathBuf>) -> Self {
        Self::with_transport(config, fixtures_dir, Arc::new(HttpTransport::new()))
    }

    pub fn with_transport(config: ProviderConfig, fixtures_dir: impl Into<PathBuf>, transport: Arc<dyn ChatTransport>) -> Self {
        LlmGateway {
            config,
            fixtures: FixtureStore::new(fixtures_dir),
            transport,
        }
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn fixtures(&self) -> &FixtureStore {
        &self.fixtures
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.check()?;
        self.config.check()?;
        let response = match self.config.mode {
            ProviderMode::Replay => {
                let digest = request_digest(request);
                self.fixtures
                    .get(&digest)?
                    .ok_or(GatewayError::FixtureMissing(digest))?
                    .response
            }
            ProviderMode::Record => {
                let digest = request_digest(request);
                match self.fixtures.get(&digest)? {
                    Some(f) => f.response,
                    None => {
                        let response = self.call_live(request)?;
                        self.fixtures.put(&Fixture {
                            digest,
                            request: request.clone(),
                            response: response.clone(),
                        })?;
                        response
                    }
                }
            }
            ProviderMode::Live => self.call_live(request)?,
        };
        if response.content.trim().is_empty() {
            return Err(GatewayError::EmptyCompletion);
        }
        Ok(response)
    }

    fn call_live(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let key = std::env::var(&self.config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| GatewayError::MissingApiKey(self.config.api_key_env.clone()))?;
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = serde_json::to_string(request).map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let timeout = Duration::from_secs(self.config.timeout_s);

        let mut attempt = 0u32;
        loop {
            let err = match self.transport.post_json(&url, &key, &body, timeout) {
                Ok(reply) if (200..300).contains(&reply.status) => return parse_wire(&reply.body),
                Ok(reply) if reply.status == 429 || reply.status >= 500 => GatewayError::HttpError(reply.status),
                Ok(reply) => return Err(GatewayError::HttpError(reply.status)),
                Err(TransportError::Timeout) => GatewayError::Timeout,
                Err(TransportError::Connect(m)) => GatewayError::Transport(m),
            };
            if attempt >= self.config.max_retries {
                return Err(err);
            }
            let delay = self.config.retry_backoff_ms.saturating_mul(1u64 << attempt.min(16));
            thread::sleep(Duration::from_millis(delay));
            attempt += 1;
        }
    }
}

fn parse_wire(body: &str) -> Result<ChatResponse, GatewayError> {
    let wire: WireResponse = serde_json::from_str(body).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::MalformedResponse("no choices".into()))?;
    Ok(ChatResponse {
        content: choice.message.content.unwrap_or_default(),
        finish_reason: choice.finish_reason.unwrap_or_else(|| "stop".into()),
        usage: wire.usage,
    })
}

/// Remove a surrounding markdown code fence, keeping the inner text as is.
pub fn strip_code_fences(text: &str) -> &str {
    let trimmed = text.trim();
    if !trimmed.starts_with("```") || !trimmed.ends_with("```") || trimmed.len() < 6 {
        return text;
    }
    let Some(first_newline) = trimmed.find('\n') else {
        return text;
    };
    // keeps the newline that ended the last code line
    &trimmed[first_newline + 1..trimmed.len() - 3]
}
