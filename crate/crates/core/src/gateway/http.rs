use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendCall, BackendError, CompletionResponse, GatewayError, TokenLogprob, Usage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Chat-completions endpoint.
    pub url: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            url: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120,
        }
    }
}

/// Live chat-completions client. Asks for token log-probs.
pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    api_key: String,
}

impl HttpBackend {
    pub fn new(config: &HttpConfig) -> Result<Self, GatewayError> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            GatewayError::InvalidRequest(format!("environment variable {} is not set", config.api_key_env))
        })?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            url: config.url.clone(),
            api_key,
        })
    }
}

pub(crate) fn request_body(call: &BackendCall<'_>) -> Value {
    let r = call.request;
    json!({
        "model": r.model_id,
        "messages": r.bundle.messages,
        "temperature": r.temperature,
        "top_p": r.top_p,
        "logprobs": true,
    })
}

pub(crate) fn parse_body(body: &Value) -> Result<CompletionResponse, String> {
    let choice = body
        .pointer("/choices/0")
        .ok_or_else(|| "response has no choices".to_string())?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| "response has no message content".to_string())?
        .to_string();
    let token_logprobs = choice
        .pointer("/logprobs/content")
        .and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .filter_map(|t| {
                    Some(TokenLogprob {
                        token: t.get("token")?.as_str()?.to_string(),
                        logprob: t.get("logprob")?.as_f64()?.min(0.0),
                    })
                })
                .collect()
        })
        .unwrap_or_default();
    let count = |name: &str| body.pointer(&format!("/usage/{name}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(CompletionResponse {
        text,
        token_logprobs,
        usage: Usage {
            prompt_tokens: count("prompt_tokens"),
            completion_tokens: count("completion_tokens"),
        },
    })
}

impl Backend for HttpBackend {
    fn send(&self, call: &BackendCall<'_>) -> Result<CompletionResponse, BackendError> {
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(request_body(call))
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Transient(format!("status {status}: {e}")))?;
        match status {
            200..=299 => parse_body(&body).map_err(|m| BackendError::Fatal(GatewayError::Transport { attempts: 1, message: m })),
            408 | 409 | 429 | 500..=599 => Err(BackendError::Transient(format!("status {status}: {body}"))),
            _ => Err(BackendError::Fatal(GatewayError::Transport {
                attempts: 1,
                message: format!("status {status}: {body}"),
            })),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::testing::request;

    #[test]
    fn wire_format() {
        let req = request("hello").greedy();
        let call = BackendCall {
            request: &req,
            key: "k",
            ordinal: 0,
        };
        let body = request_body(&call);
        assert_eq!(body["messages"][0], json!({"role": "user", "content": "hello"}));
        assert_eq!(body["temperature"], json!(0.0));
        assert_eq!(body["logprobs"], json!(true));

        let reply = json!({
            "choices": [{"message": {"role": "assistant", "content": "Hi"},
                         "logprobs": {"content": [{"token": "Hi", "logprob": -0.25}]}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 1}
        });
        let parsed = parse_body(&reply).unwrap();
        assert_eq!(parsed.text, "Hi");
        assert_eq!(parsed.token_logprobs, vec![TokenLogprob { token: "Hi".into(), logprob: -0.25 }]);
        assert_eq!(parsed.usage.prompt_tokens, 12);
        assert!(parse_body(&json!({"error": "x"})).is_err());
    }

    #[test]
    fn missing_key_is_reported() {
        let cfg = HttpConfig {
            api_key_env: "NERSYNTH_TEST_UNSET_KEY".into(),
            ..HttpConfig::default()
        };
        assert!(HttpBackend::new(&cfg).is_err());
    }
}
