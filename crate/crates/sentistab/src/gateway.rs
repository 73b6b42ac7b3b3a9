//! Chat-completion wire client with content-addressed response caching.
//!
//! Every request is canonicalized to a stable string, hashed with SHA-256,
//! and looked up in an on-disk cache before any network activity happens.
//! Misses in `live`/`record` mode POST to `{endpoint}/chat/completions` with
//! bearer-token auth (`SENTI_API_KEY`), retry on 429/5xx/transport errors
//! with exponential backoff, and persist the reply atomically
//! (write-temp-rename). `replay` mode never touches the network: a miss is an
//! error.
//!
//! Concurrency: an internal semaphore bounds in-flight HTTP requests;
//! per-key single-flight locks guarantee that concurrent misses on the same
//! key issue at most one upstream call.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable holding the bearer token for live/record mode.
pub const API_KEY_ENV: &str = "SENTI_API_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cache entry {0} not found (replay mode forbids network)")]
    MissingCacheEntry(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("malformed completion response: {0}")]
    MalformedResponse(String),
    #[error("upstream returned HTTP {status}: {detail}")]
    Http { status: u16, detail: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("cache error: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    Live,
    Record,
    Replay,
}

/// Gateway settings. `backoff_base_secs` scales the retry schedule
/// (base, base*2, base*4, ... with +-20% jitter) and exists so tests can run
/// the retry path without real one-second sleeps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatewayConfig {
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    pub cache_dir: PathBuf,
    pub mode: GatewayMode,
    #[serde(default = "default_backoff_base_secs")]
    pub backoff_base_secs: f64,
}

fn default_max_in_flight() -> usize {
    4
}
fn default_max_retries() -> u32 {
    3
}
fn default_timeout_secs() -> f64 {
    60.0
}
fn default_backoff_base_secs() -> f64 {
    1.0
}

impl GatewayConfig {
    pub fn new(cache_dir: impl Into<PathBuf>, mode: GatewayMode) -> Self {
        Self {
            max_in_flight: default_max_in_flight(),
            max_retries: default_max_retries(),
            timeout_secs: default_timeout_secs(),
            cache_dir: cache_dir.into(),
            mode,
            backoff_base_secs: default_backoff_base_secs(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }
}

/// One chat-completion request. Temperature is pinned to 0 so a cached reply
/// is as good as a fresh one.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompletionRequest {
    pub endpoint: String,
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        messages: Vec<Message>,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            messages,
            temperature: 0.0,
            seed: None,
        }
    }
}

/// SHA-256 digest of a canonical request string; 64 lowercase hex chars.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn as_hex(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Stable string form of a request: top-level fields in fixed order
/// (endpoint, model, temperature, seed, messages), message keys sorted,
/// no insignificant whitespace. Identical requests canonicalize identically
/// on every platform.
pub fn canonicalize(req: &CompletionRequest) -> String {
    let mut out = String::with_capacity(128);
    out.push_str("{\"endpoint\":");
    out.push_str(&serde_json::to_string(&req.endpoint).unwrap());
    out.push_str(",\"model\":");
    out.push_str(&serde_json::to_string(&req.model).unwrap());
    out.push_str(",\"temperature\":");
    out.push_str(&serde_json::to_string(&req.temperature).unwrap());
    out.push_str(",\"seed\":");
    match req.seed {
        Some(s) => out.push_str(&s.to_string()),
        None => out.push_str("null"),
    }
    out.push_str(",\"messages\":[");
    for (i, m) in req.messages.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str("{\"content\":");
        out.push_str(&serde_json::to_string(&m.content).unwrap());
        out.push_str(",\"role\":");
        out.push_str(&serde_json::to_string(&m.role).unwrap());
        out.push('}');
    }
    out.push_str("]}");
    out
}

/// Cache key for a request: SHA-256 over its canonical string.
pub fn cache_key(req: &CompletionRequest) -> CacheKey {
    let digest = Sha256::digest(canonicalize(req).as_bytes());
    CacheKey(hex::encode(digest))
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    request: String,
    reply: String,
    timestamp: u64,
}

/// Counting semaphore bounding concurrent HTTP requests.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphorePermit<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphorePermit { sem: self }
    }
}

struct SemaphorePermit<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphorePermit<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap() += 1;
        self.sem.cv.notify_one();
    }
}

/// Thread-safe completion service. Share behind an [`Arc`]; all methods take
/// `&self`.
pub struct Gateway {
    cfg: GatewayConfig,
    agent: ureq::Agent,
    semaphore: Semaphore,
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    network_calls: AtomicU64,
    logical_calls: AtomicU64,
    tmp_counter: AtomicU64,
}

impl Gateway {
    pub fn new(cfg: GatewayConfig) -> Result<Self, GatewayError> {
        if cfg.max_in_flight == 0 {
            return Err(GatewayError::Cache(
                "max_in_flight must be at least 1".into(),
            ));
        }
        std::fs::create_dir_all(&cfg.cache_dir)
            .map_err(|e| GatewayError::Cache(format!("create {}: {e}", cfg.cache_dir.display())))?;
        let agent_cfg = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build();
        Ok(Self {
            semaphore: Semaphore::new(cfg.max_in_flight),
            agent: ureq::Agent::new_with_config(agent_cfg),
            inflight: Mutex::new(HashMap::new()),
            network_calls: AtomicU64::new(0),
            logical_calls: AtomicU64::new(0),
            tmp_counter: AtomicU64::new(0),
            cfg,
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    /// Completion requests issued through this gateway, cache hits included.
    pub fn logical_calls(&self) -> u64 {
        self.logical_calls.load(Ordering::SeqCst)
    }

    /// Actual HTTP attempts sent upstream (each retry counts).
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::SeqCst)
    }

    fn cache_path(&self, key: &CacheKey) -> PathBuf {
        let hexstr = key.as_hex();
        self.cfg.cache_dir.join(&hexstr[..2]).join(format!("{hexstr}.json"))
    }

    fn read_cache(&self, key: &CacheKey) -> Result<Option<String>, GatewayError> {
        let path = self.cache_path(key);
        let raw = match std::fs::read_to_string(&path) {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Cache(format!("read {}: {e}", path.display()))),
        };
        match serde_json::from_str::<CacheEntry>(&raw) {
            Ok(entry) => Ok(Some(entry.reply)),
            // A corrupt entry is fatal in replay mode; live/record refetch it.
            Err(e) if self.cfg.mode == GatewayMode::Replay => Err(GatewayError::Cache(format!(
                "corrupt cache entry {}: {e}",
                path.display()
            ))),
            Err(_) => Ok(None),
        }
    }

    fn write_cache(&self, key: &CacheKey, canonical: &str, reply: &str) -> Result<(), GatewayError> {
        let path = self.cache_path(key);
        let dir = path.parent().expect("cache path has parent");
        std::fs::create_dir_all(dir)
            .map_err(|e| GatewayError::Cache(format!("create {}: {e}", dir.display())))?;
        let entry = CacheEntry {
            request: canonical.to_string(),
            reply: reply.to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let tmp = dir.join(format!(
            ".{}.tmp.{}.{}",
            key.as_hex(),
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::SeqCst)
        ));
        let body = serde_json::to_string(&entry).expect("cache entry serializes");
        std::fs::write(&tmp, body)
            .map_err(|e| GatewayError::Cache(format!("write {}: {e}", tmp.display())))?;
        std::fs::rename(&tmp, &path)
            .map_err(|e| GatewayError::Cache(format!("rename {}: {e}", path.display())))?;
        Ok(())
    }

    /// Resolve a completion: cache first, then (outside replay mode) the
    /// network. Returns the reply text of the first choice.
    pub fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        self.logical_calls.fetch_add(1, Ordering::SeqCst);
        let canonical = canonicalize(req);
        let key = CacheKey(hex::encode(Sha256::digest(canonical.as_bytes())));

        if let Some(reply) = self.read_cache(&key)? {
            return Ok(reply);
        }
        if self.cfg.mode == GatewayMode::Replay {
            return Err(GatewayError::MissingCacheEntry(key.0));
        }

        // Single-flight: concurrent misses on one key serialize here, and
        // every waiter re-checks the cache before fetching.
        let lock = {
            let mut map = self.inflight.lock().unwrap();
            Arc::clone(map.entry(key.0.clone()).or_default())
        };
        let _guard = lock.lock().unwrap();
        if let Some(reply) = self.read_cache(&key)? {
            return Ok(reply);
        }
        let reply = self.fetch(req)?;
        self.write_cache(&key, &canonical, &reply)?;
        Ok(reply)
    }

    fn fetch(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| GatewayError::Auth(format!("{API_KEY_ENV} is not set")))?;
        let url = format!("{}/chat/completions", req.endpoint.trim_end_matches('/'));
        let body = wire_body(req);

        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.try_once(&url, &api_key, &body) {
                Ok(reply) => return Ok(reply),
                Err(e) => {
                    let retryable = matches!(
                        e,
                        GatewayError::RateLimited { .. }
                            | GatewayError::Timeout(_)
                            | GatewayError::Transport(_)
                            | GatewayError::Http { status: 500..=599, .. }
                    );
                    if !retryable || attempt > self.cfg.max_retries {
                        return Err(match e {
                            GatewayError::RateLimited { .. } => {
                                GatewayError::RateLimited { attempts: attempt }
                            }
                            other => other,
                        });
                    }
                    std::thread::sleep(self.backoff(attempt));
                }
            }
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        use rand::Rng;
        let base = self.cfg.backoff_base_secs * 2f64.powi(attempt as i32 - 1);
        let jitter = rand::thread_rng().gen_range(0.8..=1.2);
        Duration::from_secs_f64(base * jitter)
    }

    fn try_once(&self, url: &str, api_key: &str, body: &str) -> Result<String, GatewayError> {
        let _permit = self.semaphore.acquire();
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let result = self
            .agent
            .post(url)
            .header("authorization", &format!("Bearer {api_key}"))
            .header("content-type", "application/json")
            .send(body);
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(reason)) => {
                return Err(GatewayError::Timeout(reason.to_string()))
            }
            Err(e) => return Err(GatewayError::Transport(e.to_string())),
        };
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| GatewayError::Transport(format!("read body: {e}")))?;
        match status {
            200..=299 => extract_content(&text),
            401 | 403 => Err(GatewayError::Auth(format!("HTTP {status}"))),
            429 => Err(GatewayError::RateLimited { attempts: 1 }),
            _ => Err(GatewayError::Http {
                status,
                detail: text.chars().take(200).collect(),
            }),
        }
    }
}

fn wire_body(req: &CompletionRequest) -> String {
    #[derive(Serialize)]
    struct Wire<'a> {
        model: &'a str,
        messages: &'a [Message],
        temperature: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    }
    serde_json::to_string(&Wire {
        model: &req.model,
        messages: &req.messages,
        temperature: req.temperature,
        seed: req.seed,
    })
    .expect("wire body serializes")
}

fn extract_content(body: &str) -> Result<String, GatewayError> {
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| GatewayError::MalformedResponse(format!("not JSON: {e}")))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|v| v.as_str())
        .map(|s| s.to_string())
        .ok_or_else(|| {
            GatewayError::MalformedResponse("missing choices[0].message.content".into())
        })
}

/// Per-task view of a shared gateway that counts the completion calls made
/// through it. The detector hands one handle to each sample's pipeline so
/// results can report exactly how many LLM calls they cost.
pub struct GatewayHandle {
    gateway: Arc<Gateway>,
    calls: AtomicU64,
}

impl GatewayHandle {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self {
            gateway,
            calls: AtomicU64::new(0),
        }
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.gateway.complete(req)
    }

    /// Completion calls made through this handle (cache hits included).
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Number of entries in a cache directory (for `cache stats`).
pub fn cache_entry_count(dir: &Path) -> std::io::Result<usize> {
    let mut count = 0;
    if !dir.exists() {
        return Ok(0);
    }
    for shard in std::fs::read_dir(dir)? {
        let shard = shard?;
        if !shard.file_type()?.is_dir() {
            continue;
        }
        for entry in std::fs::read_dir(shard.path())? {
            let entry = entry?;
            if entry.path().extension().is_some_and(|e| e == "json") {
                count += 1;
            }
        }
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_request() -> CompletionRequest {
        CompletionRequest {
            endpoint: "https://api.example.com/v1".into(),
            model: "test-model".into(),
            messages: vec![Message::system("You are terse."), Message::user("Say hi.")],
            temperature: 0.0,
            seed: Some(7),
        }
    }

    #[test]
    fn canonical_string_is_stable() {
        let expected = "{\"endpoint\":\"https://api.example.com/v1\",\"model\":\"test-model\",\
                        \"temperature\":0.0,\"seed\":7,\"messages\":[{\"content\":\"You are terse.\",\
                        \"role\":\"system\"},{\"content\":\"Say hi.\",\"role\":\"user\"}]}";
        assert_eq!(canonicalize(&fixture_request()), expected);
    }

    #[test]
    fn cache_key_matches_independent_sha256() {
        // digest of the canonical fixture string, computed with an external
        // sha256 tool
        assert_eq!(
            cache_key(&fixture_request()).as_hex(),
            "2c16c5130661733fc643d3fa5e9bc79673f5265766266a374fb43cef7118c755"
        );
    }

    #[test]
    fn canonical_differs_by_model_but_not_by_construction_order() {
        let a = fixture_request();
        let mut b = fixture_request();
        b.model = "other-model".into();
        assert_ne!(canonicalize(&a), canonicalize(&b));

        let rebuilt = CompletionRequest {
            seed: Some(7),
            temperature: 0.0,
            messages: vec![Message::system("You are terse."), Message::user("Say hi.")],
            model: "test-model".into(),
            endpoint: "https://api.example.com/v1".into(),
        };
        assert_eq!(canonicalize(&a), canonicalize(&rebuilt));
    }

    #[test]
    fn replay_miss_is_missing_cache_entry() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::new(GatewayConfig::new(dir.path(), GatewayMode::Replay)).unwrap();
        let err = gw.complete(&fixture_request()).unwrap_err();
        match err {
            GatewayError::MissingCacheEntry(key) => {
                assert_eq!(key.len(), 64);
                assert_eq!(gw.network_calls(), 0);
            }
            other => panic!("expected MissingCacheEntry, got {other:?}"),
        }
    }

    #[test]
    fn cache_write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::new(GatewayConfig::new(dir.path(), GatewayMode::Replay)).unwrap();
        let req = fixture_request();
        let key = cache_key(&req);
        gw.write_cache(&key, &canonicalize(&req), "hello reply").unwrap();
        assert_eq!(gw.complete(&req).unwrap(), "hello reply");
        assert_eq!(gw.network_calls(), 0);
        assert_eq!(gw.logical_calls(), 1);
        // shard layout: {dir}/{first two hex}/{hex}.json
        let shard = dir.path().join(&key.as_hex()[..2]);
        assert!(shard.join(format!("{}.json", key.as_hex())).exists());
        assert_eq!(cache_entry_count(dir.path()).unwrap(), 1);
    }

    #[test]
    fn extract_content_requires_choices_shape() {
        let ok = r#"{"choices":[{"message":{"content":"hi"}}]}"#;
        assert_eq!(extract_content(ok).unwrap(), "hi");
        assert!(extract_content(r#"{"choices":[]}"#).is_err());
        assert!(extract_content("not json").is_err());
    }

    #[test]
    fn rejects_zero_in_flight() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = GatewayConfig::new(dir.path(), GatewayMode::Replay);
        cfg.max_in_flight = 0;
        assert!(Gateway::new(cfg).is_err());
    }
}
