use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

use super::config::{ApiKeys, ConfigError, ProviderConfig, ProviderMode, RetryConfig};
use super::live::LiveProvider;
use super::mock::{MockProvider, MockScript};
use super::templates::TemplateRegistry;
use super::{Capability, Provider, ProviderError, ProviderRequest, ProviderResponse};

/// Counting semaphore bounding concurrent calls to one provider.
#[derive(Debug)]
struct Limiter {
    max: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut used = self.used.lock().expect("limiter poisoned");
        while *used >= self.max {
            used = self.freed.wait(used).expect("limiter poisoned");
        }
        *used += 1;
        LimiterGuard { limiter: self }
    }
}

struct LimiterGuard<'a> {
    limiter: &'a Limiter,
}

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.limiter.used.lock().expect("limiter poisoned") -= 1;
        self.limiter.freed.notify_one();
    }
}

#[derive(Clone)]
struct Route {
    provider: Arc<dyn Provider>,
    limiter: Arc<Limiter>,
}

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicU64,
    attempts: AtomicU64,
    failures: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    images: AtomicU64,
    in_flight: AtomicU64,
    peak_in_flight: AtomicU64,
}

/// Snapshot of gateway counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct GatewayStats {
    pub requests: u64,
    pub attempts: u64,
    pub failures: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub images: u64,
    pub peak_in_flight: u64,
}

struct Inner {
    routes: BTreeMap<Capability, Route>,
    retry: RetryConfig,
    templates: TemplateRegistry,
    counters: Counters,
    secrets: Vec<String>,
}

/// Routes requests to per-capability providers.
///
/// Transient failures (timeouts, rate limits, transport errors) are retried
/// with exponential backoff up to `retry.attempts` times. Every attempt is
/// appended to the audit log, if one is attached.
#[derive(Clone)]
pub struct Gateway {
    inner: Arc<Inner>,
    audit: Option<Arc<AuditLog>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("routes", &self.inner.routes.keys().collect::<Vec<_>>())
            .field("retry", &self.inner.retry)
            .finish()
    }
}

#[derive(Default)]
pub struct GatewayBuilder {
    routes: BTreeMap<Capability, Route>,
    limiters: BTreeMap<String, Arc<Limiter>>,
    retry: RetryConfig,
    secrets: Vec<String>,
}

impl GatewayBuilder {
    /// Route `capability` to `provider`. Providers registered under the same
    /// name share one in-flight limit (the first registration's).
    pub fn route(
        mut self,
        capability: Capability,
        provider: Arc<dyn Provider>,
        max_in_flight: usize,
    ) -> Self {
        let limiter = self
            .limiters
            .entry(provider.name().to_owned())
            .or_insert_with(|| Arc::new(Limiter::new(max_in_flight)))
            .clone();
        self.routes
            .insert(capability, Route { provider, limiter });
        self
    }

    pub fn route_all(self, provider: Arc<dyn Provider>, max_in_flight: usize) -> Self {
        [
            Capability::Vision,
            Capability::Generate,
            Capability::Inpaint,
            Capability::Transcribe,
        ]
        .into_iter()
        .fold(self, |b, c| b.route(c, provider.clone(), max_in_flight))
    }

    pub fn retry(mut self, retry: RetryConfig) -> Self {
        self.retry = retry;
        self
    }

    /// A value that must never appear in audit output.
    pub fn secret(mut self, secret: impl Into<String>) -> Self {
        let s = secret.into();
        if !s.is_empty() {
            self.secrets.push(s);
        }
        self
    }

    pub fn build(self) -> Gateway {
        Gateway {
            inner: Arc::new(Inner {
                routes: self.routes,
                retry: self.retry,
                templates: TemplateRegistry::builtin(),
                counters: Counters::default(),
                secrets: self.secrets,
            }),
            audit: None,
        }
    }
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder::default()
    }

    /// All capabilities served by a seeded mock.
    pub fn mock(seed: u64) -> Self {
        Self::mock_with_script(MockScript::new(seed))
    }

    pub fn mock_with_script(script: MockScript) -> Self {
        Self::builder()
            .route_all(Arc::new(MockProvider::new(script)), 8)
            .build()
    }

    pub fn from_config(config: &ProviderConfig) -> Result<Self, ConfigError> {
        match config.mode {
            ProviderMode::Mock => Ok(Self::builder()
                .route_all(
                    Arc::new(MockProvider::new(MockScript {
                        seed: config.mock_seed,
                        rules: config.mock_rules.clone(),
                    })),
                    8,
                )
                .retry(config.retry)
                .build()),
            ProviderMode::Live => {
                let keys = ApiKeys::from_env()?;
                let vision = Arc::new(LiveProvider::new(
                    "live-vision",
                    config.vision.clone(),
                    keys.vision.clone(),
                    config.image_size,
                ));
                let generate = Arc::new(LiveProvider::new(
                    "live-generate",
                    config.generate.clone(),
                    keys.image.clone(),
                    config.image_size,
                ));
                let inpaint = Arc::new(LiveProvider::new(
                    "live-inpaint",
                    config.inpaint.clone(),
                    keys.image.clone(),
                    config.image_size,
                ));
                let transcribe = Arc::new(LiveProvider::new(
                    "live-transcribe",
                    config.transcribe.clone(),
                    keys.vision.clone(),
                    config.image_size,
                ));
                Ok(Self::builder()
                    .route(Capability::Vision, vision, config.vision.max_in_flight)
                    .route(Capability::Generate, generate, config.generate.max_in_flight)
                    .route(Capability::Inpaint, inpaint, config.inpaint.max_in_flight)
                    .route(
                        Capability::Transcribe,
                        transcribe,
                        config.transcribe.max_in_flight,
                    )
                    .retry(config.retry)
                    .secret(keys.vision)
                    .secret(keys.image)
                    .build())
            }
        }
    }

    /// A handle sharing providers and counters but writing to `audit`.
    pub fn with_audit(&self, audit: Arc<AuditLog>) -> Self {
        Self {
            inner: self.inner.clone(),
            audit: Some(audit),
        }
    }

    pub fn templates(&self) -> &TemplateRegistry {
        &self.inner.templates
    }

    pub fn stats(&self) -> GatewayStats {
        let c = &self.inner.counters;
        GatewayStats {
            requests: c.requests.load(Ordering::Relaxed),
            attempts: c.attempts.load(Ordering::Relaxed),
            failures: c.failures.load(Ordering::Relaxed),
            prompt_tokens: c.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: c.completion_tokens.load(Ordering::Relaxed),
            images: c.images.load(Ordering::Relaxed),
            peak_in_flight: c.peak_in_flight.load(Ordering::Relaxed),
        }
    }

    pub fn invoke(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        request.validate()?;
        let route = self
            .inner
            .routes
            .get(&request.capability)
            .ok_or(ProviderError::Unsupported(request.capability))?;
        let counters = &self.inner.counters;
        counters.requests.fetch_add(1, Ordering::Relaxed);
        let attempts = self.inner.retry.attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            counters.attempts.fetch_add(1, Ordering::Relaxed);
            let started = Instant::now();
            let result = {
                let _permit = route.limiter.acquire();
                let now = counters.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                counters.peak_in_flight.fetch_max(now, Ordering::SeqCst);
                let r = route.provider.invoke(request);
                counters.in_flight.fetch_sub(1, Ordering::SeqCst);
                r
            };
            let result = result.and_then(|mut resp| {
                resp.latency_ms = started.elapsed().as_millis() as u64;
                check_response(request, &resp)?;
                Ok(resp)
            });
            if let Some(audit) = &self.audit {
                audit.record(
                    route.provider.name(),
                    request,
                    attempt,
                    &result,
                    &self.inner.secrets,
                );
            }
            match result {
                Ok(resp) => {
                    counters
                        .prompt_tokens
                        .fetch_add(resp.usage.prompt_tokens, Ordering::Relaxed);
                    counters
                        .completion_tokens
                        .fetch_add(resp.usage.completion_tokens, Ordering::Relaxed);
                    counters
                        .images
                        .fetch_add(resp.usage.images, Ordering::Relaxed);
                    return Ok(resp);
                }
                Err(err) if err.is_transient() && attempt < attempts => {
                    let delay = self.inner.retry.base_delay_ms << (attempt - 1);
                    tracing::warn!(%err, attempt, delay, "retrying provider call");
                    std::thread::sleep(Duration::from_millis(delay));
                }
                Err(err) => {
                    counters.failures.fetch_add(1, Ordering::Relaxed);
                    return Err(match err {
                        ProviderError::Timeout { .. } => ProviderError::Timeout { attempts: attempt },
                        other => other,
                    });
                }
            }
        }
    }
}

fn check_response(req: &ProviderRequest, resp: &ProviderResponse) -> Result<(), ProviderError> {
    let ok = match req.capability {
        Capability::Generate | Capability::Inpaint => !resp.images.is_empty(),
        Capability::Vision | Capability::Transcribe => resp.text.is_some(),
    };
    if ok {
        Ok(())
    } else {
        Err(ProviderError::MalformedResponse {
            detail: format!("{} response is missing its payload", req.capability),
            raw: resp.text.clone().unwrap_or_default(),
        })
    }
}

/// Session-scoped JSONL record of every provider attempt.
pub struct AuditLog {
    path: PathBuf,
    out: Mutex<BufWriter<File>>,
}

impl std::fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuditLog").field("path", &self.path).finish()
    }
}

const SENSITIVE_KEYS: &[&str] = &["key", "token", "secret", "authorization", "password"];
const MAX_LOGGED_PARAM: usize = 512;

impl AuditLog {
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn record(
        &self,
        provider: &str,
        req: &ProviderRequest,
        attempt: u32,
        result: &Result<ProviderResponse, ProviderError>,
        secrets: &[String],
    ) {
        let scrub = |s: &str| {
            secrets
                .iter()
                .fold(s.to_owned(), |acc, secret| acc.replace(secret.as_str(), "***"))
        };
        let params: serde_json::Map<String, Value> = req
            .params
            .iter()
            .map(|(k, v)| {
                let lower = k.to_ascii_lowercase();
                let v = if SENSITIVE_KEYS.iter().any(|s| lower.contains(s)) {
                    Value::String("***".into())
                } else {
                    match v {
                        Value::String(s) if s.len() > MAX_LOGGED_PARAM => {
                            Value::String(format!("<{} bytes>", s.len()))
                        }
                        Value::String(s) => Value::String(scrub(s)),
                        other => other.clone(),
                    }
                };
                (k.clone(), v)
            })
            .collect();
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let mut entry = json!({
            "ts_ms": ts,
            "provider": provider,
            "capability": req.capability,
            "attempt": attempt,
            "prompt": scrub(&req.prompt),
            "params": params,
            "image_hashes": req.images.iter().map(|i| i.content_hash()).collect::<Vec<_>>(),
            "has_mask": req.mask.is_some(),
        });
        match result {
            Ok(resp) => {
                entry["response"] = json!({
                    "text": resp.text.as_deref().map(scrub),
                    "image_hashes": resp.images.iter().map(|i| i.content_hash()).collect::<Vec<_>>(),
                    "usage": resp.usage,
                    "latency_ms": resp.latency_ms,
                });
            }
            Err(e) => {
                entry["error"] = json!({ "kind": e.kind(), "message": scrub(&e.to_string()) });
            }
        }
        let mut out = self.out.lock().expect("audit log poisoned");
        // Audit failures must not fail the request.
        let _ = writeln!(out, "{entry}").and_then(|_| out.flush());
    }
}
