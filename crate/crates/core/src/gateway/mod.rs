//! Completion transport, replay store, retries and cost accounting.
//!
//! A [`Gateway`] wraps one [`Backend`]. It numbers requests, assigns each
//! one a per-key ordinal in request order (so the n-th identical prompt
//! always maps to the n-th stored response, whatever the thread timing),
//! retries transient failures and charges every response to a
//! [`CostLedger`].

mod http;
mod ledger;
mod money;
mod replay;
mod synthetic;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompting::{Message, PromptBundle};

pub use http::{HttpBackend, HttpConfig};
pub use ledger::{CostLedger, GenKind, LedgerEntry};
pub use money::{charge, Dollars, ModelPrice, MoneyError, PriceTable};
pub use replay::{Recorder, ReplayBackend, ReplayEntry, ReplayStore};
pub use synthetic::SyntheticBackend;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("no recorded response #{ordinal} for request {key}")]
    ReplayMiss { key: String, ordinal: usize },
    #[error("request budget of {max_requests} exhausted with {raw} of {target} raw samples")]
    BudgetExceeded {
        max_requests: usize,
        raw: usize,
        target: usize,
    },
    #[error(transparent)]
    Money(#[from] MoneyError),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("fixture store {path}: {message}")]
    Store { path: String, message: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    #[serde(default)]
    pub token_logprobs: Vec<TokenLogprob>,
    #[serde(default)]
    pub usage: Usage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub bundle: PromptBundle,
    pub kind: GenKind,
    pub model_id: String,
    pub temperature: f64,
    pub top_p: f64,
    /// Assigned by the gateway.
    pub request_index: u64,
}

impl CompletionRequest {
    /// Sampling request at temperature 1, top-p 1.
    pub fn new(bundle: PromptBundle, kind: GenKind, model_id: impl Into<String>) -> Self {
        Self {
            bundle,
            kind,
            model_id: model_id.into(),
            temperature: 1.0,
            top_p: 1.0,
            request_index: 0,
        }
    }

    /// Greedy decoding.
    pub fn greedy(self) -> Self {
        Self {
            temperature: 0.0,
            ..self
        }
    }

    pub fn check(&self) -> Result<(), GatewayError> {
        if self.bundle.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::InvalidRequest(format!("top_p {}", self.top_p)));
        }
        Ok(())
    }

    /// Stable content hash of what the model sees; excludes the index.
    pub fn replay_key(&self) -> String {
        #[derive(Serialize)]
        struct Keyed<'a> {
            messages: &'a [Message],
            model: &'a str,
            temperature: f64,
            top_p: f64,
        }
        let canonical = serde_json::to_vec(&Keyed {
            messages: &self.bundle.messages,
            model: &self.model_id,
            temperature: self.temperature,
            top_p: self.top_p,
        })
        .expect("serializable");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// Failure reported by a backend for one attempt.
#[derive(Debug)]
pub enum BackendError {
    /// Worth retrying.
    Transient(String),
    Fatal(GatewayError),
}

/// One attempt as seen by a backend.
pub struct BackendCall<'a> {
    pub request: &'a CompletionRequest,
    pub key: &'a str,
    /// How many earlier requests in this gateway shared `key`.
    pub ordinal: usize,
}

pub trait Backend: Send + Sync {
    fn send(&self, call: &BackendCall<'_>) -> Result<CompletionResponse, BackendError>;

    /// Persists anything buffered.
    fn flush(&self) -> Result<(), GatewayError> {
        Ok(())
    }
}

impl<T: Backend + ?Sized> Backend for Box<T> {
    fn send(&self, call: &BackendCall<'_>) -> Result<CompletionResponse, BackendError> {
        (**self).send(call)
    }

    fn flush(&self) -> Result<(), GatewayError> {
        (**self).flush()
    }
}

impl<T: Backend + ?Sized> Backend for Arc<T> {
    fn send(&self, call: &BackendCall<'_>) -> Result<CompletionResponse, BackendError> {
        (**self).send(call)
    }

    fn flush(&self) -> Result<(), GatewayError> {
        (**self).flush()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 16_000,
        }
    }
}

impl RetryPolicy {
    /// Delay after failed attempt `attempt` (1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

pub struct Gateway {
    backend: Box<dyn Backend>,
    prices: PriceTable,
    retry: RetryPolicy,
    concurrency: usize,
    sleep: Sleeper,
    state: Mutex<State>,
}

#[derive(Default)]
struct State {
    next_index: u64,
    ordinals: HashMap<String, usize>,
    ledger: CostLedger,
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static, prices: PriceTable) -> Self {
        Self {
            backend: Box::new(backend),
            prices,
            retry: RetryPolicy::default(),
            concurrency: 4,
            sleep: Arc::new(std::thread::sleep),
            state: Mutex::new(State::default()),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_concurrency(mut self, n: usize) -> Self {
        self.concurrency = n.max(1);
        self
    }

    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Arc::new(sleep);
        self
    }

    pub fn concurrency(&self) -> usize {
        self.concurrency
    }

    pub fn ledger(&self) -> CostLedger {
        self.state.lock().expect("gateway state").ledger.clone()
    }

    pub fn flush(&self) -> Result<(), GatewayError> {
        self.backend.flush()
    }

    pub fn complete(&self, request: CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        self.complete_all(vec![request]).pop().expect("one result")
    }

    /// Runs requests with at most `concurrency` in flight. Results and ledger
    /// entries are in request order whatever the arrival order.
    pub fn complete_all(&self, requests: Vec<CompletionRequest>) -> Vec<Result<CompletionResponse, GatewayError>> {
        let mut prepared = Vec::with_capacity(requests.len());
        {
            let mut state = self.state.lock().expect("gateway state");
            for mut req in requests {
                req.request_index = state.next_index;
                state.next_index += 1;
                let key = req.replay_key();
                let slot = state.ordinals.entry(key.clone()).or_insert(0);
                let ordinal = *slot;
                *slot += 1;
                prepared.push((req, key, ordinal));
            }
        }
        let mut results: Vec<Option<Result<(CompletionResponse, u32), GatewayError>>> =
            (0..prepared.len()).map(|_| None).collect();
        for (chunk, out) in prepared
            .chunks(self.concurrency)
            .zip(results.chunks_mut(self.concurrency))
        {
            std::thread::scope(|s| {
                for ((req, key, ordinal), slot) in chunk.iter().zip(out.iter_mut()) {
                    s.spawn(move || *slot = Some(self.attempt(req, key, *ordinal)));
                }
            });
        }
        let mut state = self.state.lock().expect("gateway state");
        prepared
            .into_iter()
            .zip(results)
            .map(|((req, _, _), r)| {
                let (resp, attempts) = r.expect("every slot filled")?;
                let dollars = charge(&resp.usage, &req.model_id, &self.prices)?;
                state.ledger.push(LedgerEntry {
                    request_index: req.request_index,
                    kind: req.kind,
                    model_id: req.model_id.clone(),
                    usage: resp.usage,
                    dollars,
                    attempts,
                });
                Ok(resp)
            })
            .collect()
    }

    fn attempt(&self, req: &CompletionRequest, key: &str, ordinal: usize) -> Result<(CompletionResponse, u32), GatewayError> {
        req.check()?;
        self.prices.get(&req.model_id)?;
        let call = BackendCall {
            request: req,
            key,
            ordinal,
        };
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.backend.send(&call) {
                Ok(resp) => return Ok((resp, attempt)),
                Err(BackendError::Fatal(e)) => return Err(e),
                Err(BackendError::Transient(message)) => {
                    log::warn!("request {} attempt {attempt} failed: {message}", req.request_index);
                    if attempt >= self.retry.max_attempts {
                        return Err(GatewayError::Transport {
                            attempts: attempt,
                            message,
                        });
                    }
                    (self.sleep)(self.retry.delay(attempt));
                }
            }
        }
    }

    /// Issues requests until the probe has counted `target` raw samples.
    ///
    /// Requests go out in waves of `min(concurrency, ceil(remaining /
    /// per_request_hint))`; `factory` is called once per request, in
    /// request order. Fails with `BudgetExceeded` once `max_requests`
    /// requests have been issued without reaching the target.
    pub fn generate_until(
        &self,
        target: usize,
        per_request_hint: usize,
        max_requests: usize,
        mut factory: impl FnMut(usize) -> CompletionRequest,
        probe: impl Fn(&CompletionResponse) -> usize,
    ) -> Result<Vec<CompletionResponse>, GatewayError> {
        let mut responses = Vec::new();
        let mut raw = 0;
        while raw < target {
            let issued = responses.len();
            if issued >= max_requests {
                return Err(GatewayError::BudgetExceeded {
                    max_requests,
                    raw,
                    target,
                });
            }
            let wanted = (target - raw).div_ceil(per_request_hint.max(1));
            let wave = wanted.min(self.concurrency).min(max_requests - issued);
            let requests = (issued..issued + wave).map(&mut factory).collect();
            for r in self.complete_all(requests) {
                let r = r?;
                raw += probe(&r);
                responses.push(r);
            }
        }
        Ok(responses)
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        if let Err(e) = self.backend.flush() {
            log::error!("flushing backend: {e}");
        }
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Returns `text_for(call)`; fails transiently `failures` times first.
    pub struct ScriptedBackend<F> {
        pub text_for: F,
        pub failures: AtomicUsize,
        pub calls: AtomicUsize,
    }

    impl<F: Fn(&BackendCall<'_>) -> String + Send + Sync> ScriptedBackend<F> {
        pub fn new(failures: usize, text_for: F) -> Self {
            Self {
                text_for,
                failures: AtomicUsize::new(failures),
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl<F: Fn(&BackendCall<'_>) -> String + Send + Sync> Backend for ScriptedBackend<F> {
        fn send(&self, call: &BackendCall<'_>) -> Result<CompletionResponse, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self
                .failures
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok()
            {
                return Err(BackendError::Transient("connection reset".into()));
            }
            Ok(CompletionResponse {
                text: (self.text_for)(call),
                token_logprobs: vec![],
                usage: Usage {
                    prompt_tokens: 1000,
                    completion_tokens: 500,
                },
            })
        }
    }

    pub fn request(text: &str) -> CompletionRequest {
        CompletionRequest::new(
            PromptBundle {
                kind: crate::prompting::PromptKind::SampleGen,
                messages: vec![Message::user(text)],
                metadata: serde_json::Value::Null,
            },
            GenKind::Ner,
            "gpt-3.5-turbo",
        )
    }
}
