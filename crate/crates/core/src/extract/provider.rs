//! Provider plumbing: the completion trait, retry-with-backoff calling,
//! request-per-minute rate limiting, the JSONL audit log, an HTTP-backed
//! provider for real endpoints, and a scripted provider for tests.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::ProviderExchange;

/// One completion request: instructions plus the assistant-side prefill
/// the completion must continue from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderRequest {
    pub prompt: String,
    pub prefill: String,
}

#[derive(Debug, Error)]
pub enum ProviderError {
    /// Worth retrying: timeouts, connection drops, throttling.
    #[error("transient provider failure: {0}")]
    Transient(String),
    /// Not worth retrying: the provider rejected the request itself.
    #[error("provider refused: {0}")]
    Refused(String),
}

#[derive(Debug, Error)]
pub enum CallError {
    #[error("provider unavailable after {attempts} attempts: {last_error}")]
    Unavailable { attempts: u32, last_error: String },
    #[error("provider refused: {0}")]
    Refused(String),
}

/// A text-completion backend.
pub trait Provider: Send + Sync {
    fn complete(&self, request: &ProviderRequest) -> Result<String, ProviderError>;
    fn id(&self) -> &str;
}

/// Retry schedule for transient failures: `max_attempts` tries with
/// exponentially growing pauses starting at `base_backoff`.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_backoff: Duration::from_millis(200),
        }
    }
}

impl RetryPolicy {
    /// Three attempts with no pauses — for tests and offline providers.
    pub fn immediate() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_backoff: Duration::ZERO,
        }
    }
}

/// Append-only JSONL log of provider exchanges, for audit and replay.
#[derive(Debug)]
pub struct AuditLog {
    file: Mutex<File>,
}

impl AuditLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditLog {
            file: Mutex::new(file),
        })
    }

    pub fn append(&self, exchange: &ProviderExchange) -> std::io::Result<()> {
        let line = serde_json::to_string(exchange)?;
        let mut file = self.file.lock().expect("audit log poisoned");
        writeln!(file, "{line}")?;
        file.flush()
    }
}

/// Call the provider with retry on transient failures. Refusals return
/// immediately; transient errors retry up to the policy's attempt budget
/// with exponential backoff. Every successful exchange is appended to the
/// audit log when one is given (an audit write failure only warns).
pub fn call_provider(
    provider: &dyn Provider,
    request: &ProviderRequest,
    policy: &RetryPolicy,
    audit: Option<&AuditLog>,
) -> Result<ProviderExchange, CallError> {
    let attempts = policy.max_attempts.max(1);
    let mut last_error = String::new();
    for attempt in 1..=attempts {
        let started = Instant::now();
        match provider.complete(request) {
            Ok(raw_response) => {
                let exchange = ProviderExchange {
                    prompt: request.prompt.clone(),
                    prefill: request.prefill.clone(),
                    raw_response,
                    provider_id: provider.id().to_string(),
                    latency_ms: started.elapsed().as_millis() as u64,
                };
                if let Some(audit) = audit {
                    if let Err(e) = audit.append(&exchange) {
                        tracing::warn!(error = %e, "audit log write failed");
                    }
                }
                return Ok(exchange);
            }
            Err(ProviderError::Refused(reason)) => return Err(CallError::Refused(reason)),
            Err(ProviderError::Transient(reason)) => {
                tracing::warn!(attempt, reason, "transient provider failure");
                last_error = reason;
                if attempt < attempts {
                    let backoff = policy.base_backoff * 2u32.saturating_pow(attempt - 1);
                    if !backoff.is_zero() {
                        std::thread::sleep(backoff);
                    }
                }
            }
        }
    }
    Err(CallError::Unavailable {
        attempts,
        last_error,
    })
}

/// Minimum-interval limiter for a requests-per-minute budget, shared by
/// every call into one provider.
#[derive(Debug)]
pub struct RateLimiter {
    min_interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    /// `rpm` = 0 disables limiting.
    pub fn per_minute(rpm: u32) -> Self {
        let min_interval = if rpm == 0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(60.0 / rpm as f64)
        };
        RateLimiter {
            min_interval,
            next_slot: Mutex::new(None),
        }
    }

    /// Block until a request slot is free.
    pub fn acquire(&self) {
        if self.min_interval.is_zero() {
            return;
        }
        let wait = {
            let mut next = self.next_slot.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = match *next {
                Some(at) if at > now => at,
                _ => now,
            };
            *next = Some(slot + self.min_interval);
            slot.saturating_duration_since(now)
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpProviderConfig {
    pub endpoint: String,
    pub model: String,
    /// Bearer token value, typically read from an environment variable.
    pub auth_token: Option<String>,
    pub rate_limit_rpm: u32,
    pub timeout: Duration,
}

/// Provider speaking a minimal JSON contract over HTTP: POST
/// `{"model", "prompt", "prefill"}`, answer `{"completion": "..."}`.
pub struct HttpProvider {
    config: HttpProviderConfig,
    agent: ureq::Agent,
    limiter: RateLimiter,
    provider_id: String,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        let limiter = RateLimiter::per_minute(config.rate_limit_rpm);
        let provider_id = format!("http:{}", config.model);
        HttpProvider {
            config,
            agent,
            limiter,
            provider_id,
        }
    }
}

impl Provider for HttpProvider {
    fn complete(&self, request: &ProviderRequest) -> Result<String, ProviderError> {
        self.limiter.acquire();
        let payload = serde_json::json!({
            "model": self.config.model,
            "prompt": request.prompt,
            "prefill": request.prefill,
        })
        .to_string();

        let mut builder = self
            .agent
            .post(&self.config.endpoint)
            .header("content-type", "application/json");
        if let Some(token) = &self.config.auth_token {
            builder = builder.header("authorization", format!("Bearer {token}"));
        }
        let mut response = builder
            .send(payload.as_str())
            .map_err(|e| ProviderError::Transient(e.to_string()))?;

        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;

        match status {
            200 => {
                let value: serde_json::Value = serde_json::from_str(&body)
                    .map_err(|e| ProviderError::Refused(format!("unparseable answer: {e}")))?;
                value
                    .get("completion")
                    .and_then(serde_json::Value::as_str)
                    .map(str::to_string)
                    .ok_or_else(|| {
                        ProviderError::Refused("answer carries no completion field".to_string())
                    })
            }
            429 | 500..=599 => Err(ProviderError::Transient(format!("status {status}"))),
            _ => Err(ProviderError::Refused(format!("status {status}: {body}"))),
        }
    }

    fn id(&self) -> &str {
        &self.provider_id
    }
}

/// Test provider that replays canned responses in order; an exhausted
/// script refuses.
pub struct ScriptedProvider {
    responses: Mutex<VecDeque<Result<String, ProviderError>>>,
}

impl ScriptedProvider {
    pub fn new(responses: Vec<Result<String, ProviderError>>) -> Self {
        ScriptedProvider {
            responses: Mutex::new(responses.into()),
        }
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, _request: &ProviderRequest) -> Result<String, ProviderError> {
        self.responses
            .lock()
            .expect("script poisoned")
            .pop_front()
            .unwrap_or_else(|| Err(ProviderError::Refused("script exhausted".to_string())))
    }

    fn id(&self) -> &str {
        "scripted"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct FlakyProvider {
        failures_left: AtomicU32,
        calls: AtomicU32,
    }

    impl FlakyProvider {
        fn failing(n: u32) -> Self {
            FlakyProvider {
                failures_left: AtomicU32::new(n),
                calls: AtomicU32::new(0),
            }
        }
    }

    impl Provider for FlakyProvider {
        fn complete(&self, _request: &ProviderRequest) -> Result<String, ProviderError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self
                .failures_left
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok()
            {
                Err(ProviderError::Transient("connection reset".to_string()))
            } else {
                Ok("recovered".to_string())
            }
        }

        fn id(&self) -> &str {
            "flaky"
        }
    }

    fn request() -> ProviderRequest {
        ProviderRequest {
            prompt: "p".to_string(),
            prefill: "{".to_string(),
        }
    }

    #[test]
    fn scripted_responses_return_verbatim() {
        let provider = ScriptedProvider::new(vec![Ok("first".to_string())]);
        let exchange =
            call_provider(&provider, &request(), &RetryPolicy::immediate(), None).unwrap();
        assert_eq!(exchange.raw_response, "first");
        assert_eq!(exchange.provider_id, "scripted");
        assert_eq!(exchange.prefill, "{");
    }

    #[test]
    fn two_failures_then_success_uses_three_attempts() {
        let provider = FlakyProvider::failing(2);
        let exchange =
            call_provider(&provider, &request(), &RetryPolicy::immediate(), None).unwrap();
        assert_eq!(exchange.raw_response, "recovered");
        assert_eq!(provider.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn three_failures_exhaust_the_budget() {
        let provider = FlakyProvider::failing(3);
        let err = call_provider(&provider, &request(), &RetryPolicy::immediate(), None)
            .unwrap_err();
        assert!(matches!(err, CallError::Unavailable { attempts: 3, .. }));
        assert_eq!(provider.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn refusal_is_not_retried() {
        let provider = ScriptedProvider::new(vec![
            Err(ProviderError::Refused("policy".to_string())),
            Ok("never reached".to_string()),
        ]);
        let err = call_provider(&provider, &request(), &RetryPolicy::immediate(), None)
            .unwrap_err();
        assert!(matches!(err, CallError::Refused(_)));
    }

    #[test]
    fn audit_log_appends_one_line_per_exchange() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let audit = AuditLog::open(&path).unwrap();
        let provider = ScriptedProvider::new(vec![Ok("a".to_string()), Ok("b".to_string())]);
        call_provider(&provider, &request(), &RetryPolicy::immediate(), Some(&audit)).unwrap();
        call_provider(&provider, &request(), &RetryPolicy::immediate(), Some(&audit)).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let replayed: ProviderExchange = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(replayed.raw_response, "a");
        assert_eq!(replayed.provider_id, "scripted");
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let limiter = RateLimiter::per_minute(1200); // 50ms interval
        let start = Instant::now();
        limiter.acquire();
        limiter.acquire();
        limiter.acquire();
        assert!(start.elapsed() >= Duration::from_millis(100));
    }

    #[test]
    fn zero_rpm_means_unlimited() {
        let limiter = RateLimiter::per_minute(0);
        let start = Instant::now();
        for _ in 0..100 {
            limiter.acquire();
        }
        assert!(start.elapsed() < Duration::from_millis(100));
    }
}
