//! Model gateway: one entry point for every completion the harness requests.
//!
//! The gateway sits between callers and a [`ChatTransport`] and adds the three
//! things every caller needs and none should reimplement: deterministic
//! request digests, a digest-keyed fixture store, and retry/rate-limit
//! handling for live providers.
//!
//! Modes:
//! * `live`    - every call goes to the transport.
//! * `record`  - the fixture store is consulted first; misses go to the
//!               transport and the completion is written back, so repeating a
//!               request never pays for it twice.
//! * `replay`  - served from the store only. A miss is a hard error carrying
//!               the digest, and no transport is ever touched, which makes
//!               "zero network calls" checkable by counting.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Decoding parameters sent with every request and folded into its digest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub temperature: f64,
    pub seed: u64,
    pub max_output_tokens: u32,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            seed: 42,
            max_output_tokens: 1024,
        }
    }
}

/// Canonical request identity: sha256 over the serialized request fields.
/// Field order is fixed by the struct, so equal requests always collide and
/// any change to model, prompt, or decoding yields a fresh digest.
pub fn request_digest(model: &str, prompt: &str, decoding: &DecodingConfig) -> String {
    #[derive(Serialize)]
    struct Canon<'a> {
        model: &'a str,
        prompt: &'a str,
        temperature: f64,
        seed: u64,
        max_output_tokens: u32,
    }
    let canon = Canon {
        model,
        prompt,
        temperature: decoding.temperature,
        seed: decoding.seed,
        max_output_tokens: decoding.max_output_tokens,
    };
    let bytes = serde_json::to_vec(&canon).expect("digest serialization");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Error)]
pub enum TransportError {
    /// Worth retrying: timeouts, connection drops, 429, 5xx.
    #[error("{0}")]
    Retryable(String),
    /// Not worth retrying: auth failures, malformed request rejections.
    #[error("{0}")]
    Fatal(String),
}

/// A provider that can turn a prompt into a completion.
pub trait ChatTransport: Send + Sync {
    fn complete(
        &self,
        model: &str,
        prompt: &str,
        decoding: &DecodingConfig,
    ) -> Result<String, TransportError>;
}

/// One stored request/response pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub digest: String,
    pub model: String,
    pub temperature: f64,
    pub seed: u64,
    pub max_output_tokens: u32,
    pub prompt: String,
    pub completion: String,
}

/// Directory of fixture files, one JSON file per digest.
#[derive(Debug)]
pub struct FixtureStore {
    dir: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixtureIssue {
    pub file: String,
    pub detail: String,
}

impl FixtureStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| GatewayError::Store {
            detail: format!("cannot create fixture dir {}: {e}", dir.display()),
        })?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Number of fixture files on disk.
    pub fn len(&self) -> Result<usize, GatewayError> {
        let entries = fs::read_dir(&self.dir).map_err(|e| GatewayError::Store {
            detail: format!("cannot list {}: {e}", self.dir.display()),
        })?;
        Ok(entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|ext| ext == "json"))
            .count())
    }

    fn path_for(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    pub fn get(&self, digest: &str) -> Result<Option<FixtureRecord>, GatewayError> {
        let path = self.path_for(digest);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => {
                return Err(GatewayError::Store {
                    detail: format!("cannot read {}: {e}", path.display()),
                })
            }
        };
        let record: FixtureRecord =
            serde_json::from_str(&text).map_err(|e| GatewayError::Store {
                detail: format!("cannot parse {}: {e}", path.display()),
            })?;
        Ok(Some(record))
    }

    pub fn put(&self, record: &FixtureRecord) -> Result<(), GatewayError> {
        let path = self.path_for(&record.digest);
        let json = serde_json::to_string_pretty(record).map_err(|e| GatewayError::Store {
            detail: format!("cannot serialize fixture: {e}"),
        })?;
        let mut file = fs::File::create(&path).map_err(|e| GatewayError::Store {
            detail: format!("cannot write {}: {e}", path.display()),
        })?;
        file.write_all(json.as_bytes())
            .and_then(|_| file.write_all(b"\n"))
            .map_err(|e| GatewayError::Store {
                detail: format!("cannot write {}: {e}", path.display()),
            })
    }

    /// Checks every fixture file: parseable, digest consistent with its own
    /// request fields, file name consistent with the digest.
    pub fn verify(&self) -> Result<Vec<FixtureIssue>, GatewayError> {
        let mut issues = Vec::new();
        let mut names = BTreeSet::new();
        let entries = fs::read_dir(&self.dir).map_err(|e| GatewayError::Store {
            detail: format!("cannot list {}: {e}", self.dir.display()),
        })?;
        for entry in entries {
            let entry = entry.map_err(|e| GatewayError::Store {
                detail: format!("cannot list {}: {e}", self.dir.display()),
            })?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            names.insert(path.display().to_string());
        }
        for name in names {
            let path = PathBuf::from(&name);
            let text = match fs::read_to_string(&path) {
                Ok(t) => t,
                Err(e) => {
                    issues.push(FixtureIssue {
                        file: name,
                        detail: format!("unreadable: {e}"),
                    });
                    continue;
                }
            };
            let record: FixtureRecord = match serde_json::from_str(&text) {
                Ok(r) => r,
                Err(e) => {
                    issues.push(FixtureIssue {
                        file: name,
                        detail: format!("invalid JSON: {e}"),
                    });
                    continue;
                }
            };
            let decoding = DecodingConfig {
                temperature: record.temperature,
                seed: record.seed,
                max_output_tokens: record.max_output_tokens,
            };
            let expect = request_digest(&record.model, &record.prompt, &decoding);
            if expect != record.digest {
                issues.push(FixtureIssue {
                    file: name.clone(),
                    detail: format!("stored digest {} does not match request fields", record.digest),
                });
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            if stem != record.digest {
                issues.push(FixtureIssue {
                    file: name,
                    detail: format!("file name does not match digest {}", record.digest),
                });
            }
        }
        Ok(issues)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    Live,
    Record,
    Replay,
}

impl std::fmt::Display for GatewayMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            GatewayMode::Live => "live",
            GatewayMode::Record => "record",
            GatewayMode::Replay => "replay",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for GatewayMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(GatewayMode::Live),
            "record" => Ok(GatewayMode::Record),
            "replay" => Ok(GatewayMode::Replay),
            other => Err(format!("unknown gateway mode '{other}'")),
        }
    }
}

/// Bounded exponential backoff, no jitter: attempt n sleeps
/// `initial * base^(n-1)` capped at `max_delay_ms`.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_delay_ms: u64,
    pub max_delay_ms: u64,
    pub exponential_base: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_delay_ms: 200,
            max_delay_ms: 5_000,
            exponential_base: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn delay_after(&self, failed_attempt: u32) -> Duration {
        let exp = self.exponential_base.powi(failed_attempt.saturating_sub(1) as i32);
        let ms = (self.initial_delay_ms as f64 * exp).min(self.max_delay_ms as f64);
        Duration::from_millis(ms as u64)
    }
}

/// Token bucket: capacity of one minute's worth of requests, refilled
/// continuously.
#[derive(Debug)]
struct Bucket {
    capacity: f64,
    tokens: f64,
    refill_per_sec: f64,
    last: Instant,
}

impl Bucket {
    fn new(requests_per_minute: u32) -> Self {
        let capacity = requests_per_minute.max(1) as f64;
        Self {
            capacity,
            tokens: capacity,
            refill_per_sec: capacity / 60.0,
            last: Instant::now(),
        }
    }

    /// Takes one token if available, otherwise reports how long to wait.
    fn take(&mut self, now: Instant) -> Option<Duration> {
        let elapsed = now.duration_since(self.last).as_secs_f64();
        self.last = now;
        self.tokens = (self.tokens + elapsed * self.refill_per_sec).min(self.capacity);
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            None
        } else {
            let deficit = 1.0 - self.tokens;
            Some(Duration::from_secs_f64(deficit / self.refill_per_sec))
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("fixture missing for request digest {digest}")]
    FixtureMiss { digest: String },
    #[error("provider call failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("provider rejected the request: {detail}")]
    Rejected { detail: String },
    #[error("fixture store: {detail}")]
    Store { detail: String },
    #[error("gateway mode {mode} needs a transport but none was configured")]
    NoTransport { mode: GatewayMode },
}

pub struct Gateway {
    model: String,
    mode: GatewayMode,
    store: Option<FixtureStore>,
    transport: Option<Arc<dyn ChatTransport>>,
    retry: RetryPolicy,
    bucket: Option<Mutex<Bucket>>,
    store_lock: Mutex<()>,
    provider_calls: AtomicU64,
}

impl Gateway {
    pub fn live(model: impl Into<String>, transport: Arc<dyn ChatTransport>) -> Self {
        Self::build(model, GatewayMode::Live, None, Some(transport))
    }

    pub fn record(
        model: impl Into<String>,
        store: FixtureStore,
        transport: Arc<dyn ChatTransport>,
    ) -> Self {
        Self::build(model, GatewayMode::Record, Some(store), Some(transport))
    }

    pub fn replay(model: impl Into<String>, store: FixtureStore) -> Self {
        Self::build(model, GatewayMode::Replay, Some(store), None)
    }

    fn build(
        model: impl Into<String>,
        mode: GatewayMode,
        store: Option<FixtureStore>,
        transport: Option<Arc<dyn ChatTransport>>,
    ) -> Self {
        Self {
            model: model.into(),
            mode,
            store,
            transport,
            retry: RetryPolicy::default(),
            bucket: None,
            store_lock: Mutex::new(()),
            provider_calls: AtomicU64::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, requests_per_minute: u32) -> Self {
        self.bucket = Some(Mutex::new(Bucket::new(requests_per_minute)));
        self
    }

    /// Attaches a transport in replay mode too; useful for asserting it is
    /// never used.
    pub fn with_transport(mut self, transport: Arc<dyn ChatTransport>) -> Self {
        self.transport = Some(transport);
        self
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    /// Number of provider attempts made so far. Stays at zero for a pure
    /// replay run.
    pub fn provider_calls(&self) -> u64 {
        self.provider_calls.load(Ordering::Relaxed)
    }

    pub fn complete(
        &self,
        prompt: &str,
        decoding: &DecodingConfig,
    ) -> Result<String, GatewayError> {
        let digest = request_digest(&self.model, prompt, decoding);
        match self.mode {
            GatewayMode::Replay => {
                let store = self.store.as_ref().expect("replay gateway has a store");
                match store.get(&digest)? {
                    Some(record) => Ok(record.completion),
                    None => Err(GatewayError::FixtureMiss { digest }),
                }
            }
            GatewayMode::Record => {
                let store = self.store.as_ref().expect("record gateway has a store");
                if let Some(record) = store.get(&digest)? {
                    return Ok(record.completion);
                }
                let completion = self.call_provider(prompt, decoding)?;
                // Double-checked under the lock so concurrent identical
                // requests do not interleave partial writes.
                let _guard = self.store_lock.lock().unwrap();
                if store.get(&digest)?.is_none() {
                    store.put(&FixtureRecord {
                        digest: digest.clone(),
                        model: self.model.clone(),
                        temperature: decoding.temperature,
                        seed: decoding.seed,
                        max_output_tokens: decoding.max_output_tokens,
                        prompt: prompt.to_string(),
                        completion: completion.clone(),
                    })?;
                }
                Ok(completion)
            }
            GatewayMode::Live => self.call_provider(prompt, decoding),
        }
    }

    fn call_provider(
        &self,
        prompt: &str,
        decoding: &DecodingConfig,
    ) -> Result<String, GatewayError> {
        let transport = self
            .transport
            .as_ref()
            .ok_or(GatewayError::NoTransport { mode: self.mode })?;
        let mut last = String::new();
        for attempt in 1..=self.retry.max_attempts {
            self.wait_for_token();
            self.provider_calls.fetch_add(1, Ordering::Relaxed);
            match transport.complete(&self.model, prompt, decoding) {
                Ok(completion) => return Ok(completion),
                Err(TransportError::Fatal(detail)) => {
                    return Err(GatewayError::Rejected { detail })
                }
                Err(TransportError::Retryable(detail)) => {
                    last = detail;
                    if attempt < self.retry.max_attempts {
                        std::thread::sleep(self.retry.delay_after(attempt));
                    }
                }
            }
        }
        Err(GatewayError::Exhausted {
            attempts: self.retry.max_attempts,
            last,
        })
    }

    fn wait_for_token(&self) {
        let Some(bucket) = &self.bucket else { return };
        loop {
            let wait = bucket.lock().unwrap().take(Instant::now());
            match wait {
                None => return,
                Some(d) => std::thread::sleep(d),
            }
        }
    }
}

/// HTTP transport speaking the common chat-completions shape:
/// `POST {url}` with `{model, messages, temperature, seed, max_tokens}`,
/// answer read from `choices[0].message.content`.
pub struct HttpTransport {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| GatewayError::Rejected {
                detail: format!("cannot build HTTP client: {e}"),
            })?;
        Ok(Self {
            url: url.into(),
            api_key,
            client,
        })
    }

    /// Reads `CRS_EVAL_PROVIDER_URL` and optionally `CRS_EVAL_API_KEY`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let url = std::env::var("CRS_EVAL_PROVIDER_URL").map_err(|_| GatewayError::Rejected {
            detail: "CRS_EVAL_PROVIDER_URL is not set".to_string(),
        })?;
        let api_key = std::env::var("CRS_EVAL_API_KEY").ok();
        Self::new(url, api_key)
    }
}

impl ChatTransport for HttpTransport {
    fn complete(
        &self,
        model: &str,
        prompt: &str,
        decoding: &DecodingConfig,
    ) -> Result<String, TransportError> {
        let body = serde_json::json!({
            "model": model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": decoding.temperature,
            "seed": decoding.seed,
            "max_tokens": decoding.max_output_tokens,
        });
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| TransportError::Retryable(format!("request failed: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| TransportError::Retryable(format!("cannot read body: {e}")))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(TransportError::Retryable(format!(
                "provider returned {status}"
            )));
        }
        if !status.is_success() {
            return Err(TransportError::Fatal(format!(
                "provider returned {status}: {text}"
            )));
        }
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| TransportError::Fatal(format!("invalid provider JSON: {e}")))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(|s| s.to_string())
            .ok_or_else(|| {
                TransportError::Fatal("provider reply lacks choices[0].message.content".to_string())
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    struct Scripted {
        reply: String,
        calls: AtomicUsize,
    }

    impl Scripted {
        fn new(reply: &str) -> Arc<Self> {
            Arc::new(Self {
                reply: reply.to_string(),
                calls: AtomicUsize::new(0),
            })
        }
    }

    impl ChatTransport for Scripted {
        fn complete(
            &self,
            _model: &str,
            _prompt: &str,
            _decoding: &DecodingConfig,
        ) -> Result<String, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.reply.clone())
        }
    }

    struct Flaky {
        failures_before_success: usize,
        calls: AtomicUsize,
    }

    impl ChatTransport for Flaky {
        fn complete(
            &self,
            _model: &str,
            _prompt: &str,
            _decoding: &DecodingConfig,
        ) -> Result<String, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures_before_success {
                Err(TransportError::Retryable("boom".to_string()))
            } else {
                Ok("recovered".to_string())
            }
        }
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            initial_delay_ms: 1,
            max_delay_ms: 4,
            exponential_base: 2.0,
        }
    }

    #[test]
    fn digest_is_stable_and_input_sensitive() {
        let d = DecodingConfig::default();
        let a = request_digest("m", "hello", &d);
        let b = request_digest("m", "hello", &d);
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert!(a.chars().all(|c| c.is_ascii_hexdigit()));
        assert_ne!(a, request_digest("m2", "hello", &d));
        assert_ne!(a, request_digest("m", "hello!", &d));
        let mut warm = d;
        warm.temperature = 0.7;
        assert_ne!(a, request_digest("m", "hello", &warm));
        let mut reseeded = d;
        reseeded.seed = 7;
        assert_ne!(a, request_digest("m", "hello", &reseeded));
        let mut longer = d;
        longer.max_output_tokens = 2048;
        assert_ne!(a, request_digest("m", "hello", &longer));
    }

    #[test]
    fn record_mode_reuses_the_store_for_identical_requests() {
        let dir = tempfile::tempdir().unwrap();
        let transport = Scripted::new("the completion");
        let gw = Gateway::record(
            "m",
            FixtureStore::open(dir.path()).unwrap(),
            transport.clone(),
        );
        let d = DecodingConfig::default();
        assert_eq!(gw.complete("p", &d).unwrap(), "the completion");
        assert_eq!(gw.complete("p", &d).unwrap(), "the completion");
        assert_eq!(transport.calls.load(Ordering::SeqCst), 1);
        assert_eq!(gw.provider_calls(), 1);
        let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 1);
    }

    #[test]
    fn replay_serves_from_store_without_any_transport_use() {
        let dir = tempfile::tempdir().unwrap();
        let d = DecodingConfig::default();
        {
            let transport = Scripted::new("stored answer");
            let gw = Gateway::record("m", FixtureStore::open(dir.path()).unwrap(), transport);
            gw.complete("p", &d).unwrap();
        }
        let transport = Scripted::new("live answer");
        let gw = Gateway::replay("m", FixtureStore::open(dir.path()).unwrap())
            .with_transport(transport.clone());
        assert_eq!(gw.complete("p", &d).unwrap(), "stored answer");
        assert_eq!(transport.calls.load(Ordering::SeqCst), 0);
        assert_eq!(gw.provider_calls(), 0);
    }

    #[test]
    fn replay_miss_reports_the_digest() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::replay("m", FixtureStore::open(dir.path()).unwrap());
        let d = DecodingConfig::default();
        let err = gw.complete("never recorded", &d).unwrap_err();
        let digest = request_digest("m", "never recorded", &d);
        let msg = err.to_string();
        assert!(msg.contains("fixture missing"), "{msg}");
        assert!(msg.contains(&digest), "{msg}");
    }

    #[test]
    fn retryable_failures_are_retried_to_success() {
        let transport = Arc::new(Flaky {
            failures_before_success: 2,
            calls: AtomicUsize::new(0),
        });
        let gw = Gateway::live("m", transport.clone()).with_retry(fast_retry());
        let got = gw.complete("p", &DecodingConfig::default()).unwrap();
        assert_eq!(got, "recovered");
        assert_eq!(transport.calls.load(Ordering::SeqCst), 3);
        assert_eq!(gw.provider_calls(), 3);
    }

    #[test]
    fn retries_stop_at_max_attempts() {
        let transport = Arc::new(Flaky {
            failures_before_success: 99,
            calls: AtomicUsize::new(0),
        });
        let gw = Gateway::live("m", transport.clone()).with_retry(fast_retry());
        let err = gw.complete("p", &DecodingConfig::default()).unwrap_err();
        assert!(matches!(err, GatewayError::Exhausted { attempts: 3, .. }));
        assert_eq!(transport.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn fatal_failures_are_not_retried() {
        struct AlwaysFatal(AtomicUsize);
        impl ChatTransport for AlwaysFatal {
            fn complete(
                &self,
                _m: &str,
                _p: &str,
                _d: &DecodingConfig,
            ) -> Result<String, TransportError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Err(TransportError::Fatal("bad key".to_string()))
            }
        }
        let transport = Arc::new(AlwaysFatal(AtomicUsize::new(0)));
        let gw = Gateway::live("m", transport.clone()).with_retry(fast_retry());
        let err = gw.complete("p", &DecodingConfig::default()).unwrap_err();
        assert!(matches!(err, GatewayError::Rejected { .. }));
        assert_eq!(transport.0.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            initial_delay_ms: 100,
            max_delay_ms: 350,
            exponential_base: 2.0,
        };
        assert_eq!(p.delay_after(1), Duration::from_millis(100));
        assert_eq!(p.delay_after(2), Duration::from_millis(200));
        assert_eq!(p.delay_after(3), Duration::from_millis(350));
        assert_eq!(p.delay_after(4), Duration::from_millis(350));
    }

    #[test]
    fn bucket_drains_then_waits() {
        let mut bucket = Bucket::new(60);
        let now = Instant::now();
        for _ in 0..60 {
            assert!(bucket.take(now).is_none());
        }
        let wait = bucket.take(now).expect("bucket should be empty");
        assert!(wait > Duration::from_millis(500), "wait = {wait:?}");
    }

    #[test]
    fn verify_flags_tampered_fixtures() {
        let dir = tempfile::tempdir().unwrap();
        let store = FixtureStore::open(dir.path()).unwrap();
        let d = DecodingConfig::default();
        let digest = request_digest("m", "p", &d);
        store
            .put(&FixtureRecord {
                digest: digest.clone(),
                model: "m".to_string(),
                temperature: d.temperature,
                seed: d.seed,
                max_output_tokens: d.max_output_tokens,
                prompt: "p".to_string(),
                completion: "c".to_string(),
            })
            .unwrap();
        assert!(store.verify().unwrap().is_empty());

        // Tamper with the prompt; the stored digest no longer matches.
        let path = dir.path().join(format!("{digest}.json"));
        let mut record: FixtureRecord =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        record.prompt = "tampered".to_string();
        std::fs::write(&path, serde_json::to_string_pretty(&record).unwrap()).unwrap();
        let issues = store.verify().unwrap();
        assert_eq!(issues.len(), 1);
        assert!(issues[0].detail.contains("does not match request fields"));

        std::fs::write(dir.path().join("junk.json"), "not json").unwrap();
        assert_eq!(store.verify().unwrap().len(), 2);
    }
}
