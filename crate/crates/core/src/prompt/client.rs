use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::recipe::PromptRecipe;
use crate::factors::StyleFactors;
use crate::{Error, Result};

pub const ENV_ENDPOINT: &str = "STYLEVOX_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "STYLEVOX_LLM_API_KEY";
pub const ENV_MODEL: &str = "STYLEVOX_LLM_MODEL";
pub const ENV_TIMEOUT: &str = "STYLEVOX_LLM_TIMEOUT_SECS";

/// Settings for a chat-completion HTTP endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_attempts: usize,
    pub backoff_base: Duration,
    /// Requests per recipe before giving up on reaching the wanted count.
    pub max_rounds: usize,
    pub concurrency: usize,
    pub temperature: f64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            api_key: None,
            model: "gpt-3.5-turbo".into(),
            timeout: Duration::from_secs(60),
            max_attempts: 3,
            backoff_base: Duration::from_millis(500),
            max_rounds: 4,
            concurrency: 4,
            temperature: 1.0,
        }
    }
}

impl LlmConfig {
    /// Defaults overridden by the `STYLEVOX_LLM_*` environment variables.
    pub fn from_env() -> Result<Self> {
        let mut c = Self::default();
        if let Ok(v) = std::env::var(ENV_ENDPOINT) {
            c.endpoint = v;
        }
        if let Ok(v) = std::env::var(ENV_API_KEY) {
            c.api_key = Some(v).filter(|k| !k.is_empty());
        }
        if let Ok(v) = std::env::var(ENV_MODEL) {
            c.model = v;
        }
        if let Ok(v) = std::env::var(ENV_TIMEOUT) {
            let secs: u64 = v.trim().parse().map_err(|_| Error::InvalidConfig(format!("{ENV_TIMEOUT}={v:?}")))?;
            c.timeout = Duration::from_secs(secs);
        }
        Ok(c)
    }
}

/// A failed attempt that was retried.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RetryEvent {
    pub attempt: usize,
    pub reason: String,
    pub delay_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct LlmResponse {
    pub candidates: Vec<String>,
    pub requests: usize,
    pub retries: Vec<RetryEvent>,
}

/// Blocking client; clones share one rate-limit gate.
#[derive(Clone)]
pub struct LlmClient {
    config: LlmConfig,
    agent: ureq::Agent,
    not_before: Arc<Mutex<Instant>>,
}

enum Failure {
    Retryable(String),
    Fatal(Error),
}

impl LlmClient {
    pub fn new(config: LlmConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Self { config, agent, not_before: Arc::new(Mutex::new(Instant::now())) }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    fn wait_for_gate(&self) {
        let until = *self.not_before.lock().expect("gate poisoned");
        let now = Instant::now();
        if until > now {
            std::thread::sleep(until - now);
        }
    }

    fn hold_gate(&self, delay: Duration) {
        let mut gate = self.not_before.lock().expect("gate poisoned");
        *gate = (*gate).max(Instant::now() + delay);
    }

    fn attempt(&self, message: &str) -> std::result::Result<String, Failure> {
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": message}],
        });
        let mut req = self.agent.post(&self.config.endpoint).set("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = match req.send_string(&body.to_string()) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let detail = r.into_string().unwrap_or_default();
                let reason = format!("HTTP {code}: {}", detail.chars().take(200).collect::<String>());
                return Err(if code == 429 || code >= 500 {
                    Failure::Retryable(reason)
                } else {
                    Failure::Fatal(Error::Llm { attempts: 1, retryable: false, message: reason })
                });
            }
            Err(ureq::Error::Transport(t)) => return Err(Failure::Retryable(t.to_string())),
        };
        let text = resp.into_string().map_err(|e| Failure::Retryable(e.to_string()))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(Error::MalformedResponse(format!("body is not JSON: {e}"))))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Failure::Fatal(Error::MalformedResponse("missing choices[0].message.content".into())))
    }

    /// One chat completion with exponential backoff on transient failures.
    pub fn complete(&self, message: &str, retries: &mut Vec<RetryEvent>) -> Result<String> {
        let attempts = self.config.max_attempts.max(1);
        for attempt in 1..=attempts {
            self.wait_for_gate();
            match self.attempt(message) {
                Ok(content) => return Ok(content),
                Err(Failure::Fatal(Error::Llm { retryable, message, .. })) => {
                    return Err(Error::Llm { attempts: attempt, retryable, message })
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(reason)) => {
                    if attempt == attempts {
                        return Err(Error::Llm { attempts: attempt, retryable: true, message: reason });
                    }
                    let delay = self.config.backoff_base * 2u32.pow(attempt as u32 - 1);
                    tracing::warn!(attempt, delay_ms = delay.as_millis() as u64, %reason, "retrying chat completion");
                    retries.push(RetryEvent { attempt, reason, delay_ms: delay.as_millis() as u64 });
                    self.hold_gate(delay);
                }
            }
        }
        unreachable!("loop returns on the last attempt")
    }

    /// Raw candidate lines for a recipe, gathering up to `count` over several requests.
    pub fn request_prompts(&self, recipe: &PromptRecipe, count: usize) -> Result<LlmResponse> {
        let mut out = LlmResponse::default();
        while out.candidates.len() < count && out.requests < self.config.max_rounds.max(1) {
            let message = recipe.message(count - out.candidates.len());
            let content = self.complete(&message, &mut out.retries)?;
            out.requests += 1;
            let before = out.candidates.len();
            out.candidates.extend(content.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string));
            if out.candidates.len() == before {
                break;
            }
        }
        Ok(out)
    }

    /// Runs recipes with at most `concurrency` requests in flight.
    pub fn request_many(
        &self,
        jobs: &[(StyleFactors, PromptRecipe)],
        count: usize,
    ) -> Vec<(StyleFactors, Result<LlmResponse>)> {
        let workers = self.config.concurrency.max(1);
        let next = Mutex::new(0usize);
        let results: Mutex<Vec<Option<Result<LlmResponse>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..workers.min(jobs.len()) {
                s.spawn(|| loop {
                    let i = {
                        let mut n = next.lock().expect("job counter poisoned");
                        let i = *n;
                        *n += 1;
                        i
                    };
                    if i >= jobs.len() {
                        break;
                    }
                    let r = self.request_prompts(&jobs[i].1, count);
                    results.lock().expect("results poisoned")[i] = Some(r);
                });
            }
        });
        let results = results.into_inner().expect("results poisoned");
        jobs.iter().zip(results).map(|((f, _), r)| (*f, r.expect("every job ran"))).collect()
    }
}

/// Convenience wrapper building a client for a single recipe.
pub fn request_prompts(recipe: &PromptRecipe, config: &LlmConfig, count: usize) -> Result<LlmResponse> {
    LlmClient::new(config.clone()).request_prompts(recipe, count)
}
