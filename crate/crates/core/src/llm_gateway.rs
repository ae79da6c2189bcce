//! Chat-completion gateway shared by all agents.
//!
//! Every request goes through a digest-keyed response cache (when a cache
//! directory is configured) before reaching the provider. Remote calls are
//! retried with exponential backoff and bounded by an in-flight limit.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tracing::{debug, warn};

use crate::error::{Error, Result};
use crate::rule_mock;
use crate::transport::{HttpTransport, JsonTransport};

pub const DEFAULT_TEMPERATURE: f64 = 0.6;
pub const DEFAULT_MAX_TOKENS: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_messages: Vec<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub image_refs: Vec<String>,
    /// Pipeline stage tag, e.g. `"analyst"`.
    pub stage: String,
    pub sample_id: String,
}

impl ChatRequest {
    pub fn new(stage: impl Into<String>, sample_id: impl Into<String>, system_prompt: impl Into<String>) -> Self {
        ChatRequest {
            system_prompt: system_prompt.into(),
            user_messages: Vec::new(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            image_refs: Vec::new(),
            stage: stage.into(),
            sample_id: sample_id.into(),
        }
    }

    pub fn with_message(mut self, text: impl Into<String>) -> Self {
        self.user_messages.push(text.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::InvalidInput(format!("temperature {} is negative", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(Error::InvalidInput("max_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// SHA-256 over the canonical JSON encoding of the whole request.
pub fn request_digest(req: &ChatRequest) -> String {
    let bytes = serde_json::to_vec(req).expect("request serializes");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default)]
    pub provider_meta: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Remote {
        endpoint: String,
        model: String,
        credential_env: String,
    },
    ScriptedMock {
        script_path: PathBuf,
    },
    RuleMock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_base_ms: 500,
        }
    }
}

impl RetryPolicy {
    pub fn delay_before(&self, attempt: u32) -> Duration {
        // attempt is 1-based; no wait before the first one.
        if attempt <= 1 {
            return Duration::ZERO;
        }
        let factor = 1u64.checked_shl(attempt - 2).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub provider: ProviderConfig,
    pub retry: RetryPolicy,
    pub cache_dir: Option<PathBuf>,
    /// Maximum concurrent in-flight provider calls.
    pub rate_limit: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            provider: ProviderConfig::RuleMock,
            retry: RetryPolicy::default(),
            cache_dir: None,
            rate_limit: 4,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.retry.max_attempts == 0 {
            return Err(Error::Config("retry.max_attempts must be at least 1".into()));
        }
        if self.rate_limit == 0 {
            return Err(Error::Config("rate_limit must be at least 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Config("temperature must be non-negative".into()));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// Scripted responses keyed by stage tag, then sample id. A sample id of
/// `"*"` matches any sample for that stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Script(pub HashMap<String, HashMap<String, String>>);

impl Script {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn insert(&mut self, stage: &str, sample: &str, text: impl Into<String>) {
        self.0
            .entry(stage.to_string())
            .or_default()
            .insert(sample.to_string(), text.into());
    }

    pub fn lookup(&self, stage: &str, sample: &str) -> Option<&str> {
        let by_sample = self.0.get(stage)?;
        by_sample.get(sample).or_else(|| by_sample.get("*")).map(String::as_str)
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore poisoned") += 1;
        self.0.freed.notify_one();
    }
}

/// One file per request digest holding the raw response text.
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ResponseCache { dir })
    }

    fn path(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.txt"))
    }

    pub fn get(&self, digest: &str) -> Option<String> {
        std::fs::read_to_string(self.path(digest)).ok()
    }

    pub fn put(&self, digest: &str, text: &str) -> Result<()> {
        let path = self.path(digest);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        tmp.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }
}

enum Backend {
    Remote {
        endpoint: String,
        model: String,
        credential_env: String,
        transport: Arc<dyn JsonTransport>,
    },
    Scripted(Script),
    Rule,
}

pub struct Gateway {
    cfg: GatewayConfig,
    backend: Backend,
    cache: Option<ResponseCache>,
    limiter: Semaphore,
    provider_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl Gateway {
    pub fn new(cfg: GatewayConfig) -> Result<Self> {
        Gateway::with_transport(cfg, Arc::new(HttpTransport::default()))
    }

    /// Builds a gateway whose remote provider talks through `transport`.
    pub fn with_transport(cfg: GatewayConfig, transport: Arc<dyn JsonTransport>) -> Result<Self> {
        cfg.validate()?;
        let backend = match &cfg.provider {
            ProviderConfig::Remote { endpoint, model, credential_env } => Backend::Remote {
                endpoint: endpoint.clone(),
                model: model.clone(),
                credential_env: credential_env.clone(),
                transport,
            },
            ProviderConfig::ScriptedMock { script_path } => Backend::Scripted(Script::load(script_path)?),
            ProviderConfig::RuleMock => Backend::Rule,
        };
        Gateway::assemble(cfg, backend)
    }

    pub fn scripted(cfg: GatewayConfig, script: Script) -> Result<Self> {
        cfg.validate()?;
        Gateway::assemble(cfg, Backend::Scripted(script))
    }

    fn assemble(cfg: GatewayConfig, backend: Backend) -> Result<Self> {
        let cache = cfg.cache_dir.as_ref().map(ResponseCache::open).transpose()?;
        Ok(Gateway {
            limiter: Semaphore::new(cfg.rate_limit),
            cfg,
            backend,
            cache,
            provider_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    /// Number of times the provider itself was invoked (each retry counts).
    pub fn provider_calls(&self) -> u64 {
        self.provider_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }

    /// A request carrying this gateway's sampling settings.
    pub fn request(&self, stage: &str, sample_id: &str, system_prompt: impl Into<String>) -> ChatRequest {
        let mut req = ChatRequest::new(stage, sample_id, system_prompt);
        req.temperature = self.cfg.temperature;
        req.max_tokens = self.cfg.max_tokens;
        req
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse> {
        req.validate()?;
        let digest = request_digest(req);
        if let Some(text) = self.cache.as_ref().and_then(|c| c.get(&digest)) {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            debug!(%digest, stage = %req.stage, "cache hit");
            return Ok(ChatResponse {
                text,
                provider_meta: json!({ "cache": "hit", "digest": digest }),
            });
        }
        let resp = self.call_provider(req)?;
        if let Some(cache) = &self.cache {
            cache.put(&digest, &resp.text)?;
        }
        Ok(resp)
    }

    fn call_provider(&self, req: &ChatRequest) -> Result<ChatResponse> {
        match &self.backend {
            Backend::Scripted(script) => {
                self.provider_calls.fetch_add(1, Ordering::SeqCst);
                let text = script.lookup(&req.stage, &req.sample_id).ok_or_else(|| Error::ScriptMissing {
                    stage: req.stage.clone(),
                    sample: req.sample_id.clone(),
                })?;
                Ok(ChatResponse {
                    text: text.to_string(),
                    provider_meta: json!({ "provider": "scripted_mock" }),
                })
            }
            Backend::Rule => {
                self.provider_calls.fetch_add(1, Ordering::SeqCst);
                Ok(ChatResponse {
                    text: rule_mock::respond(req),
                    provider_meta: json!({ "provider": "rule_mock" }),
                })
            }
            Backend::Remote { endpoint, model, credential_env, transport } => {
                let key = std::env::var(credential_env).map_err(|_| Error::MissingCredential(credential_env.clone()))?;
                let body = remote_body(model, req);
                let policy = &self.cfg.retry;
                let mut last = String::new();
                for attempt in 1..=policy.max_attempts {
                    std::thread::sleep(policy.delay_before(attempt));
                    let result = {
                        let _permit = self.limiter.acquire();
                        self.provider_calls.fetch_add(1, Ordering::SeqCst);
                        transport.post_json(endpoint, &body, Some(&key))
                    };
                    match result.and_then(|v| parse_remote(&v)) {
                        Ok(resp) => return Ok(resp),
                        Err(err) => {
                            warn!(attempt, %err, "remote completion failed");
                            last = err.to_string();
                        }
                    }
                }
                Err(Error::ProviderExhausted {
                    attempts: policy.max_attempts,
                    last,
                })
            }
        }
    }
}

fn image_url(image_ref: &str) -> Option<String> {
    if image_ref.starts_with("http://") || image_ref.starts_with("https://") || image_ref.starts_with("data:") {
        return Some(image_ref.to_string());
    }
    let bytes = std::fs::read(image_ref).ok()?;
    let mime = match Path::new(image_ref).extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/jpeg",
    };
    Some(format!(
        "data:{mime};base64,{}",
        base64::engine::general_purpose::STANDARD.encode(bytes)
    ))
}

fn remote_body(model: &str, req: &ChatRequest) -> Value {
    let mut messages = vec![json!({ "role": "system", "content": req.system_prompt })];
    let images: Vec<String> = req.image_refs.iter().filter_map(|r| image_url(r)).collect();
    for (i, text) in req.user_messages.iter().enumerate() {
        if i == 0 && !images.is_empty() {
            let mut parts = vec![json!({ "type": "text", "text": text })];
            parts.extend(images.iter().map(|url| json!({ "type": "image_url", "image_url": { "url": url } })));
            messages.push(json!({ "role": "user", "content": parts }));
        } else {
            messages.push(json!({ "role": "user", "content": text }));
        }
    }
    json!({
        "model": model,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    })
}

fn parse_remote(v: &Value) -> Result<ChatResponse> {
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::ProviderUnavailable("response lacks choices[0].message.content".into()))?;
    let mut meta = json!({ "provider": "remote" });
    if let Some(model) = v.get("model") {
        meta["model"] = model.clone();
    }
    if let Some(usage) = v.get("usage") {
        meta["usage"] = usage.clone();
    }
    Ok(ChatResponse {
        text: text.to_string(),
        provider_meta: meta,
    })
}
