//! Single egress point to LLM inference services.
//!
//! Speaks the common HTTP JSON chat-completion shape, enforces a global
//! in-flight cap, retries transient failures with backoff, accounts for a
//! request/token budget, and caches rollout responses so probing runs are
//! resumable. Tests exchange the HTTP transport for scripted ones.

mod cache;

pub use cache::ResponseCache;

use crate::corpus::Prompt;
use crate::rlvr::{self, BatchReport};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("request budget exhausted before dispatch")]
    BudgetExhausted,
    #[error("endpoint returned status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("malformed completion payload: {0}")]
    MalformedPayload(String),
    #[error("audit log: {0}")]
    AuditLog(std::io::Error),
}

/// Decoding settings for one class of calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingProfile {
    pub name: String,
    pub temperature: f64,
    pub top_p: f64,
    /// -1 leaves top-k unrestricted.
    pub top_k: i32,
    pub max_tokens: u32,
}

impl DecodingProfile {
    /// Settings for composition and verification calls.
    pub fn composer() -> Self {
        DecodingProfile {
            name: "composer".into(),
            temperature: 0.1,
            top_p: 0.7,
            top_k: -1,
            max_tokens: 4096,
        }
    }

    /// Settings for training-style rollouts.
    pub fn rollout() -> Self {
        DecodingProfile {
            name: "rollout".into(),
            temperature: 1.0,
            top_p: 1.0,
            top_k: -1,
            max_tokens: 16_384,
        }
    }

    /// Settings for evaluation sampling.
    pub fn eval() -> Self {
        DecodingProfile {
            name: "eval".into(),
            temperature: 0.6,
            top_p: 0.95,
            top_k: 20,
            max_tokens: 32_768,
        }
    }

    /// Stable hash over all fields; part of the response-cache key.
    pub fn cache_hash(&self) -> String {
        use sha2::Digest;
        let mut hasher = sha2::Sha256::new();
        hasher.update(
            format!(
                "{}|{}|{}|{}|{}",
                self.name, self.temperature, self.top_p, self.top_k, self.max_tokens
            )
            .as_bytes(),
        );
        let digest = hasher.finalize();
        format!("{:02x}{:02x}{:02x}{:02x}", digest[0], digest[1], digest[2], digest[3])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            backoff_ms: 50,
        }
    }
}

/// Hard caps checked before dispatching a request.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Budget {
    pub max_requests: Option<u64>,
    pub max_total_tokens: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub endpoint: String,
    pub model: String,
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub budget: Budget,
    /// JSONL request/response audit log.
    #[serde(default)]
    pub audit_log: Option<PathBuf>,
    /// Response cache backing file; enables resumable probing.
    #[serde(default)]
    pub cache_path: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            endpoint: String::new(),
            model: String::new(),
            max_in_flight: 8,
            retry: RetryPolicy::default(),
            budget: Budget::default(),
            audit_log: None,
            cache_path: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: "system".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: i32,
    pub max_tokens: u32,
}

#[derive(Debug, Clone)]
pub struct ChatResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Transport-level failure; [`TransportError::retryable`] drives the retry loop.
#[derive(Debug)]
pub struct TransportError {
    pub status: Option<u16>,
    pub message: String,
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self.status {
            Some(code) => code >= 500 || code == 429,
            None => true,
        }
    }
}

/// The wire boundary; swapped out for fixtures in tests.
pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError>;
}

/// Blocking HTTP transport for chat-completion endpoints.
pub struct HttpTransport {
    url: String,
}

impl HttpTransport {
    pub fn new(endpoint: &str) -> Self {
        let url = if endpoint.ends_with("/chat/completions") {
            endpoint.to_string()
        } else {
            format!("{}/v1/chat/completions", endpoint.trim_end_matches('/'))
        };
        HttpTransport { url }
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl ChatTransport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let body = serde_json::to_string(request).expect("request serializes");
        let reply = ureq::post(&self.url)
            .set("Content-Type", "application/json")
            .send_string(&body);
        match reply {
            Ok(response) => {
                let text = response.into_string().map_err(|e| TransportError {
                    status: None,
                    message: e.to_string(),
                })?;
                let wire: WireResponse = serde_json::from_str(&text).map_err(|e| TransportError {
                    status: Some(200),
                    message: format!("bad payload: {e}"),
                })?;
                let choice = wire.choices.into_iter().next().ok_or(TransportError {
                    status: Some(200),
                    message: "no choices in completion".into(),
                })?;
                let usage = wire.usage.unwrap_or_default();
                Ok(ChatResponse {
                    content: choice.message.content,
                    prompt_tokens: usage.prompt_tokens,
                    completion_tokens: usage.completion_tokens,
                })
            }
            Err(ureq::Error::Status(code, response)) => Err(TransportError {
                status: Some(code),
                message: response.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => Err(TransportError {
                status: None,
                message: t.to_string(),
            }),
        }
    }
}

/// Counting semaphore for the global in-flight cap.
struct InflightGate {
    lock: Mutex<usize>,
    cond: Condvar,
    cap: usize,
}

impl InflightGate {
    fn new(cap: usize) -> Self {
        InflightGate {
            lock: Mutex::new(0),
            cond: Condvar::new(),
            cap: cap.max(1),
        }
    }

    fn acquire(&self) {
        let mut count = self.lock.lock().unwrap();
        while *count >= self.cap {
            count = self.cond.wait(count).unwrap();
        }
        *count += 1;
    }

    fn release(&self) {
        let mut count = self.lock.lock().unwrap();
        *count -= 1;
        self.cond.notify_one();
    }
}

#[derive(Serialize)]
struct AuditRecord<'a> {
    seq: u64,
    profile: &'a str,
    attempts: u32,
    outcome: &'a str,
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// The gateway itself. Cloneable handles are not provided; share by reference.
pub struct Gateway {
    config: GatewayConfig,
    transport: Box<dyn ChatTransport>,
    gate: InflightGate,
    requests: AtomicU64,
    total_tokens: AtomicU64,
    seq: AtomicU64,
    audit: Mutex<Option<std::fs::File>>,
    cache: Option<ResponseCache>,
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        let transport = Box::new(HttpTransport::new(&config.endpoint));
        Self::with_transport(config, transport)
    }

    pub fn with_transport(
        config: GatewayConfig,
        transport: Box<dyn ChatTransport>,
    ) -> Result<Self, GatewayError> {
        let audit = match &config.audit_log {
            Some(path) => Some(
                std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(GatewayError::AuditLog)?,
            ),
            None => None,
        };
        let cache = match &config.cache_path {
            Some(path) => Some(ResponseCache::open(path).map_err(GatewayError::AuditLog)?),
            None => None,
        };
        Ok(Gateway {
            gate: InflightGate::new(config.max_in_flight),
            config,
            transport,
            requests: AtomicU64::new(0),
            total_tokens: AtomicU64::new(0),
            seq: AtomicU64::new(0),
            audit: Mutex::new(audit),
            cache,
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn requests_sent(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn tokens_used(&self) -> u64 {
        self.total_tokens.load(Ordering::Relaxed)
    }

    fn check_budget(&self) -> Result<(), GatewayError> {
        if let Some(cap) = self.config.budget.max_requests {
            if self.requests.load(Ordering::Relaxed) >= cap {
                return Err(GatewayError::BudgetExhausted);
            }
        }
        if let Some(cap) = self.config.budget.max_total_tokens {
            if self.total_tokens.load(Ordering::Relaxed) >= cap {
                return Err(GatewayError::BudgetExhausted);
            }
        }
        Ok(())
    }

    fn audit(&self, profile: &str, attempts: u32, outcome: &str, pt: u64, ct: u64) {
        let mut guard = self.audit.lock().unwrap();
        if let Some(file) = guard.as_mut() {
            let record = AuditRecord {
                seq: self.seq.fetch_add(1, Ordering::Relaxed),
                profile,
                attempts,
                outcome,
                prompt_tokens: pt,
                completion_tokens: ct,
            };
            let line = serde_json::to_string(&record).expect("audit record");
            let _ = writeln!(file, "{line}");
        }
    }

    /// One chat completion under the given profile, with budget check, in-flight
    /// cap, and retry on transient failures.
    pub fn chat(
        &self,
        messages: &[Message],
        profile: &DecodingProfile,
    ) -> Result<String, GatewayError> {
        self.chat_detailed(messages, profile).map(|r| r.content)
    }

    /// Like [`Self::chat`], but keeps the token accounting of the reply.
    pub fn chat_detailed(
        &self,
        messages: &[Message],
        profile: &DecodingProfile,
    ) -> Result<ChatResponse, GatewayError> {
        self.check_budget()?;
        let request = ChatRequest {
            model: self.config.model.clone(),
            messages: messages.to_vec(),
            temperature: profile.temperature,
            top_p: profile.top_p,
            top_k: profile.top_k,
            max_tokens: profile.max_tokens,
        };
        let mut last = String::new();
        for attempt in 1..=self.config.retry.attempts.max(1) {
            self.requests.fetch_add(1, Ordering::Relaxed);
            self.gate.acquire();
            let result = self.transport.send(&request);
            self.gate.release();
            match result {
                Ok(response) => {
                    self.total_tokens.fetch_add(
                        response.prompt_tokens + response.completion_tokens,
                        Ordering::Relaxed,
                    );
                    self.audit(
                        &profile.name,
                        attempt,
                        "ok",
                        response.prompt_tokens,
                        response.completion_tokens,
                    );
                    return Ok(response);
                }
                Err(err) => {
                    last = match err.status {
                        Some(code) => format!("status {code}: {}", err.message),
                        None => err.message.clone(),
                    };
                    if !err.retryable() {
                        self.audit(&profile.name, attempt, "http-error", 0, 0);
                        return Err(GatewayError::Http {
                            status: err.status.unwrap_or(0),
                            body: err.message,
                        });
                    }
                    if attempt < self.config.retry.attempts {
                        std::thread::sleep(Duration::from_millis(
                            self.config.retry.backoff_ms * u64::from(attempt),
                        ));
                    }
                }
            }
        }
        self.audit(&profile.name, self.config.retry.attempts, "exhausted", 0, 0);
        Err(GatewayError::RetriesExhausted {
            attempts: self.config.retry.attempts,
            last,
        })
    }

    /// Samples `g` responses for one prompt and extracts their final answers.
    /// Cached samples are reused; failures after retries leave the result
    /// flagged as partial rather than aborting the run.
    pub fn rollout(
        &self,
        prompt_id: &str,
        prompt_text: &str,
        g: usize,
        profile: &DecodingProfile,
    ) -> Result<RolloutResult, GatewayError> {
        let profile_hash = profile.cache_hash();
        let mut responses = Vec::with_capacity(g);
        let mut last_error: Option<GatewayError> = None;
        let mut tokens = 0u64;
        for sample in 0..g {
            let key = format!("{prompt_id}|{sample}|{profile_hash}");
            if let Some(cache) = &self.cache {
                if let Some(hit) = cache.get(&key) {
                    responses.push(RolloutResponse::from_text(hit));
                    continue;
                }
            }
            match self.chat_detailed(&[Message::user(prompt_text)], profile) {
                Ok(reply) => {
                    if let Some(cache) = &self.cache {
                        cache.put(&key, &reply.content);
                    }
                    tokens += reply.prompt_tokens + reply.completion_tokens;
                    responses.push(RolloutResponse::from_text(reply.content));
                }
                Err(GatewayError::BudgetExhausted) => return Err(GatewayError::BudgetExhausted),
                Err(err) => {
                    log::warn!("rollout sample {sample} for {prompt_id} failed: {err}");
                    last_error = Some(err);
                }
            }
        }
        // Sporadic failures leave a flagged partial result; a prompt with no
        // completions at all surfaces the underlying gateway error instead.
        if responses.is_empty() {
            if let Some(err) = last_error {
                return Err(err);
            }
        }
        let complete = responses.len() == g;
        Ok(RolloutResult {
            prompt_id: prompt_id.to_string(),
            responses,
            tokens,
            complete,
        })
    }

    /// Rolls out every item, grades the extracted answers, and aggregates
    /// solve-rate statistics.
    pub fn probe_dataset<T: rlvr::Gradeable + Sync>(
        &self,
        items: &[T],
        g: usize,
        profile: &DecodingProfile,
    ) -> Result<(Vec<ProbeResult>, BatchReport), GatewayError> {
        let outcomes = bounded_parallel(items, self.config.max_in_flight, |item| {
            let rolled = self.rollout(item.id(), item.text(), g, profile)?;
            let passes = rolled
                .responses
                .iter()
                .filter(|r| {
                    r.final_answer
                        .as_deref()
                        .map(|a| rlvr::grade_answer(item.ground_truth(), a) == 1)
                        .unwrap_or(false)
                })
                .count();
            let total = rolled.responses.len();
            Ok::<ProbeResult, GatewayError>(ProbeResult {
                prompt_id: rolled.prompt_id,
                pass_count: passes,
                samples: total,
                avg_at_k: if total > 0 {
                    passes as f64 / total as f64
                } else {
                    0.0
                },
                solve_all: total > 0 && passes == total,
                solve_none: passes == 0,
                tokens: rolled.tokens,
                complete: rolled.complete,
            })
        });
        let mut results = Vec::with_capacity(outcomes.len());
        for outcome in outcomes {
            results.push(outcome?);
        }
        let report = BatchReport::from_pass_counts(
            results.iter().map(|r| (r.pass_count, r.samples)),
        );
        Ok((results, report))
    }

    /// Drops prompts whose `g` rollouts are all graded incorrect.
    pub fn reliability_filter(
        &self,
        prompts: &[Prompt],
        g: usize,
        profile: &DecodingProfile,
    ) -> Result<Vec<Prompt>, GatewayError> {
        let (results, _) = self.probe_dataset(prompts, g, profile)?;
        Ok(prompts
            .iter()
            .zip(results.iter())
            .filter(|(_, r)| !r.solve_none)
            .map(|(p, _)| p.clone())
            .collect())
    }
}

/// One sampled response with its extracted final answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RolloutResponse {
    pub text: String,
    pub final_answer: Option<String>,
}

impl RolloutResponse {
    fn from_text(text: String) -> Self {
        let final_answer = extract_final_answer(&text);
        RolloutResponse { text, final_answer }
    }
}

#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub prompt_id: String,
    pub responses: Vec<RolloutResponse>,
    /// Tokens spent on fresh samples (cached replays cost nothing).
    pub tokens: u64,
    /// False when fewer than the requested samples came back.
    pub complete: bool,
}

/// Per-prompt probe statistics.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub prompt_id: String,
    pub pass_count: usize,
    pub samples: usize,
    pub avg_at_k: f64,
    pub solve_all: bool,
    pub solve_none: bool,
    pub tokens: u64,
    pub complete: bool,
}

/// Extracts the final answer from a completion: the last `\boxed{...}` wins,
/// otherwise the last numeric token of the last non-empty line.
pub fn extract_final_answer(completion: &str) -> Option<String> {
    if let Some(boxed) = last_boxed(completion) {
        return Some(boxed);
    }
    let line = completion.lines().rev().find(|l| !l.trim().is_empty())?;
    let re = regex::Regex::new(r"[-+]?\d+(?:\.\d+)?(?:/\d+)?").unwrap();
    re.find_iter(line).last().map(|m| m.as_str().to_string())
}

fn last_boxed(text: &str) -> Option<String> {
    let mut result = None;
    let mut search_from = 0;
    while let Some(pos) = text[search_from..].find("\\boxed{") {
        let start = search_from + pos + "\\boxed{".len();
        let mut depth = 1usize;
        let mut end = None;
        for (offset, c) in text[start..].char_indices() {
            match c {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(start + offset);
                        break;
                    }
                }
                _ => {}
            }
        }
        match end {
            Some(e) => {
                result = Some(text[start..e].to_string());
                search_from = e + 1;
            }
            None => break,
        }
    }
    result
}

/// Runs `f` over the items with at most `cap` worker threads, preserving input
/// order in the output.
pub fn bounded_parallel<T: Sync, R: Send>(
    items: &[T],
    cap: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let cap = cap.max(1).min(items.len().max(1));
    if items.len() <= 1 || cap == 1 {
        return items.iter().map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = (0..items.len()).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..cap {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let result = f(&items[i]);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker filled slot"))
        .collect()
}
