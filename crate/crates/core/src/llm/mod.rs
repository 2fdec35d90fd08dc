//! Provider interface for every LLM-backed step, with schema validation,
//! a content-addressed response cache and deterministic fallbacks.

mod cache;
#[cfg(feature = "http")]
mod http;
mod schema;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use cache::{CacheEntry, ResponseCache, CACHE_DIR};
#[cfg(feature = "http")]
pub use http::HttpTransport;
pub use schema::Schema;

pub const ENV_ENDPOINT: &str = "LAGA_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "LAGA_LLM_API_KEY";
pub const ENV_MODEL: &str = "LAGA_LLM_MODEL";

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const DEFAULT_RETRIES: usize = 2;

/// Prompt templates shipped with the crate.
pub mod prompts {
    pub const SEVERITY: &str = include_str!("../../prompts/severity.txt");
    pub const DENOISE: &str = include_str!("../../prompts/denoise.txt");
    pub const COMPLETE: &str = include_str!("../../prompts/complete.txt");
    pub const GENERATE: &str = include_str!("../../prompts/generate.txt");
    pub const AUGMENT: &str = include_str!("../../prompts/augment.txt");
    pub const SCORE: &str = include_str!("../../prompts/score.txt");

    /// Substitute `{{key}}` placeholders.
    pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
        let mut out = template.to_string();
        for (k, v) in vars {
            out = out.replace(&format!("{{{{{k}}}}}"), v);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "plan.severity")]
    PlanSeverity,
    #[serde(rename = "plan.weights")]
    PlanWeights,
    #[serde(rename = "plan.select")]
    PlanSelect,
    #[serde(rename = "act.denoise")]
    ActDenoise,
    #[serde(rename = "act.complete")]
    ActComplete,
    #[serde(rename = "act.generate")]
    ActGenerate,
    #[serde(rename = "learn.augment")]
    LearnAugment,
    #[serde(rename = "eval.score")]
    EvalScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub role: Role,
    pub prompt: String,
    pub schema: Schema,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl ProviderRequest {
    pub fn new(role: Role, prompt: String, schema: Schema) -> Self {
        Self {
            role,
            prompt,
            schema,
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

/// Chat-completions request body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Sends one chat request and returns the assistant message content.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub value: Value,
    pub fallback: bool,
    pub cached: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStats {
    pub requests: usize,
    pub network_calls: usize,
    pub cache_hits: usize,
    pub fallbacks: usize,
}

#[derive(Default)]
struct Counters {
    requests: AtomicUsize,
    network_calls: AtomicUsize,
    cache_hits: AtomicUsize,
    fallbacks: AtomicUsize,
}

/// Counting semaphore bounding outstanding requests.
struct Gate {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
    peak: AtomicUsize,
}

impl Gate {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            peak: AtomicUsize::new(0),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("gate poisoned");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("gate poisoned");
        }
        *n += 1;
        self.peak.fetch_max(*n, Ordering::SeqCst);
        Permit(self)
    }
}

struct Permit<'a>(&'a Gate);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().expect("gate poisoned");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Shareable client. Without a transport every call resolves to its
/// fallback (or, with fallback disabled, to an error).
pub struct LlmClient {
    transport: Option<Arc<dyn Transport>>,
    cache: Option<ResponseCache>,
    model: String,
    provider_id: String,
    retries: usize,
    fallback_enabled: bool,
    gate: Gate,
    counters: Counters,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("model", &self.model)
            .field("provider_id", &self.provider_id)
            .field("has_transport", &self.transport.is_some())
            .field("cache", &self.cache.as_ref().map(ResponseCache::dir))
            .finish()
    }
}

impl LlmClient {
    pub fn new(transport: Option<Arc<dyn Transport>>, model: impl Into<String>) -> Self {
        Self {
            transport,
            cache: None,
            model: model.into(),
            provider_id: "chat-completions".to_string(),
            retries: DEFAULT_RETRIES,
            fallback_enabled: true,
            gate: Gate::new(DEFAULT_MAX_IN_FLIGHT),
            counters: Counters::default(),
        }
    }

    /// Client with no endpoint; every call takes the fallback path.
    pub fn offline() -> Self {
        Self::new(None, "offline")
    }

    /// Build from `LAGA_LLM_ENDPOINT`, `LAGA_LLM_API_KEY` and
    /// `LAGA_LLM_MODEL`. Missing endpoint yields an offline client.
    pub fn from_env() -> Result<Self> {
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".to_string());
        let Ok(endpoint) = std::env::var(ENV_ENDPOINT) else {
            return Ok(Self::new(None, model));
        };
        #[cfg(feature = "http")]
        {
            let key = std::env::var(ENV_API_KEY).ok();
            let transport = HttpTransport::new(endpoint, key, std::time::Duration::from_secs(60))?;
            Ok(Self::new(Some(Arc::new(transport)), model))
        }
        #[cfg(not(feature = "http"))]
        {
            Err(Error::Provider(format!(
                "{ENV_ENDPOINT}={endpoint} set but built without the `http` feature"
            )))
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retries(mut self, retries: usize) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_fallback(mut self, enabled: bool) -> Self {
        self.fallback_enabled = enabled;
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.gate = Gate::new(limit);
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn is_online(&self) -> bool {
        self.transport.is_some()
    }

    pub fn stats(&self) -> CallStats {
        CallStats {
            requests: self.counters.requests.load(Ordering::SeqCst),
            network_calls: self.counters.network_calls.load(Ordering::SeqCst),
            cache_hits: self.counters.cache_hits.load(Ordering::SeqCst),
            fallbacks: self.counters.fallbacks.load(Ordering::SeqCst),
        }
    }

    /// Highest number of simultaneously outstanding network requests seen.
    pub fn peak_in_flight(&self) -> usize {
        self.gate.peak.load(Ordering::SeqCst)
    }

    /// Content address of a request: prompt, schema and model.
    pub fn cache_key(&self, request: &ProviderRequest) -> String {
        let mut h = Sha256::new();
        h.update(self.model.as_bytes());
        h.update([0]);
        h.update(request.schema.id().as_bytes());
        h.update([0]);
        h.update(request.prompt.as_bytes());
        hex::encode(h.finalize())
    }

    /// Resolve a request: cache, then network with retries, then fallback.
    pub fn complete(&self, request: &ProviderRequest, fallback: impl FnOnce() -> Value) -> Result<Completion> {
        if request.prompt.trim().is_empty() {
            return Err(Error::invalid("empty prompt"));
        }
        self.counters.requests.fetch_add(1, Ordering::SeqCst);
        let key = self.cache_key(request);
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&key)? {
                if let Ok(value) = schema::parse(&entry.response, &request.schema) {
                    self.counters.cache_hits.fetch_add(1, Ordering::SeqCst);
                    return Ok(Completion {
                        value,
                        fallback: false,
                        cached: true,
                    });
                }
            }
        }

        let mut last_error = None;
        if let Some(transport) = &self.transport {
            let chat = ChatRequest {
                model: self.model.clone(),
                messages: vec![ChatMessage {
                    role: "user".into(),
                    content: request.prompt.clone(),
                }],
                temperature: request.temperature,
                max_tokens: request.max_tokens,
            };
            for attempt in 0..=self.retries {
                self.counters.network_calls.fetch_add(1, Ordering::SeqCst);
                let sent = {
                    let _permit = self.gate.acquire();
                    transport.send(&chat)
                };
                match sent.and_then(|text| schema::parse(&text, &request.schema).map(|v| (text, v))) {
                    Ok((text, value)) => {
                        if let Some(cache) = &self.cache {
                            cache.put(&CacheEntry::new(key, text, &self.provider_id))?;
                        }
                        return Ok(Completion {
                            value,
                            fallback: false,
                            cached: false,
                        });
                    }
                    Err(e) => {
                        log::debug!("{:?} attempt {} failed: {e}", request.role, attempt + 1);
                        last_error = Some(e);
                    }
                }
            }
        }

        if !self.fallback_enabled {
            return Err(last_error.unwrap_or_else(|| Error::Provider("no endpoint configured".into())));
        }
        if let Some(e) = &last_error {
            log::warn!("{:?}: falling back to rules after retries: {e}", request.role);
        }
        self.counters.fallbacks.fetch_add(1, Ordering::SeqCst);
        let value = fallback();
        debug_assert!(request.schema.validate(&value).is_ok(), "fallback violates its schema");
        Ok(Completion {
            value,
            fallback: true,
            cached: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use std::thread;
    use std::time::Duration;

    struct Scripted {
        replies: Mutex<Vec<Result<String>>>,
        calls: AtomicUsize,
    }

    impl Transport for Scripted {
        fn send(&self, _: &ChatRequest) -> Result<String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let mut r = self.replies.lock().unwrap();
            if r.is_empty() {
                Err(Error::Provider("exhausted".into()))
            } else {
                r.remove(0)
            }
        }
    }

    fn scripted(replies: Vec<Result<String>>) -> Arc<Scripted> {
        Arc::new(Scripted {
            replies: Mutex::new(replies),
            calls: AtomicUsize::new(0),
        })
    }

    fn severity_request() -> ProviderRequest {
        ProviderRequest::new(Role::PlanSeverity, "rate it".into(), Schema::Plan)
    }

    fn rules() -> Value {
        json!({"severities": [0, 0, 0, 0, 0, 0, 0, 0, 1]})
    }

    #[test]
    fn second_call_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let t = scripted(vec![Ok(r#"{"severities":[1,1,1,1,1,1,1,1,1]}"#.into())]);
        let client = LlmClient::new(Some(t.clone()), "m").with_cache(ResponseCache::new(dir.path()));
        let a = client.complete(&severity_request(), rules).unwrap();
        let b = client.complete(&severity_request(), rules).unwrap();
        assert!(!a.cached && b.cached && !b.fallback);
        assert_eq!(a.value, b.value);
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn unreachable_endpoint_falls_back() {
        let t = scripted(vec![]);
        let client = LlmClient::new(Some(t.clone()), "m");
        let c = client.complete(&severity_request(), rules).unwrap();
        assert!(c.fallback);
        assert_eq!(c.value, rules());
        assert_eq!(t.calls.load(Ordering::SeqCst), 1 + DEFAULT_RETRIES);
    }

    #[test]
    fn out_of_range_severity_is_retried_then_rejected() {
        let bad = r#"{"severities":[0,0,0,0,0,0,0,0,5]}"#.to_string();
        let t = scripted(vec![Ok(bad.clone()), Ok(bad.clone()), Ok(bad)]);
        let client = LlmClient::new(Some(t.clone()), "m");
        let c = client.complete(&severity_request(), rules).unwrap();
        assert!(c.fallback);
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);

        let strict = LlmClient::new(Some(scripted(vec![])), "m").with_fallback(false);
        assert!(strict.complete(&severity_request(), rules).is_err());
    }

    #[test]
    fn retry_recovers() {
        let t = scripted(vec![Ok("not json".into()), Ok(r#"```json
{"text": "fixed"}
```"#.into())]);
        let client = LlmClient::new(Some(t), "m");
        let req = ProviderRequest::new(Role::ActDenoise, "p".into(), Schema::Text);
        let c = client.complete(&req, || json!({"text": "fb"})).unwrap();
        assert_eq!(c.value, json!({"text": "fixed"}));
        assert!(!c.fallback);
    }

    struct Slow;
    impl Transport for Slow {
        fn send(&self, _: &ChatRequest) -> Result<String> {
            thread::sleep(Duration::from_millis(20));
            Ok(r#"{"text":"ok"}"#.into())
        }
    }

    #[test]
    fn in_flight_is_bounded() {
        let client = Arc::new(LlmClient::new(Some(Arc::new(Slow)), "m"));
        let handles: Vec<_> = (0..12)
            .map(|i| {
                let c = client.clone();
                thread::spawn(move || {
                    let req = ProviderRequest::new(Role::ActComplete, format!("p{i}"), Schema::Text);
                    c.complete(&req, || json!({"text": ""})).unwrap()
                })
            })
            .collect();
        for h in handles {
            assert!(!h.join().unwrap().fallback);
        }
        assert!(client.peak_in_flight() <= DEFAULT_MAX_IN_FLIGHT);
        assert!(client.peak_in_flight() >= 2);
    }

    #[test]
    fn render_substitutes() {
        assert_eq!(prompts::render("a {{x}} b {{x}}", &[("x", "1")]), "a 1 b 1");
        assert!(prompts::SEVERITY.contains("{{statistics}}"));
    }
}
