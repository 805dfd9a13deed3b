use std::time::Duration;

use serde_json::{json, Value};

use super::{LlmError, LlmTransport, PromptDocument, ProviderConfig};

/// OpenAI-compatible chat-completion client.
#[derive(Debug, Default, Clone)]
pub struct HttpTransport;

/// Model families that accept an effort parameter.
fn supports_reasoning(model_id: &str) -> bool {
    ["o1", "o3", "o4", "gpt-5"].iter().any(|p| model_id.starts_with(p))
}

enum Failure {
    Retryable(LlmError),
    Final(LlmError),
}

impl HttpTransport {
    pub fn new() -> Self {
        Self
    }

    fn request_body(config: &ProviderConfig, prompt: &PromptDocument) -> Value {
        let mut body = json!({
            "model": config.model_id,
            "messages": [
                { "role": "system", "content": prompt.system_text },
                { "role": "user", "content": prompt.user_text },
            ],
            "temperature": config.temperature,
            "seed": config.seed,
        });
        if supports_reasoning(&config.model_id) {
            body["reasoning_effort"] = json!(config.reasoning_level.as_str());
        } else {
            log::warn!(
                "model `{}` takes no reasoning level; ignoring `{}`",
                config.model_id,
                config.reasoning_level.as_str()
            );
        }
        body
    }

    fn attempt(client: &reqwest::blocking::Client, config: &ProviderConfig, body: &Value) -> Result<String, Failure> {
        let mut req = client.post(&config.endpoint).json(body);
        if let Some(key) = &config.api_key {
            req = req.bearer_auth(key);
        }
        let transport = |e: reqwest::Error| {
            if e.is_timeout() {
                Failure::Retryable(LlmError::Timeout(config.timeout_ms))
            } else {
                Failure::Retryable(LlmError::AdapterUnavailable(e.to_string()))
            }
        };
        let resp = req.send().map_err(transport)?;
        let status = resp.status();
        if !status.is_success() {
            let err = LlmError::AdapterUnavailable(format!("provider answered HTTP {status}"));
            return Err(if status.is_server_error() {
                Failure::Retryable(err)
            } else {
                Failure::Final(err)
            });
        }
        let body: Value = resp.json().map_err(transport)?;
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Failure::Final(LlmError::AdapterUnavailable("response has no message content".into())))
    }
}

impl LlmTransport for HttpTransport {
    /// One round trip, retried once on transport failure.
    fn send(&self, config: &ProviderConfig, prompt: &PromptDocument) -> Result<String, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| LlmError::AdapterUnavailable(e.to_string()))?;
        let body = Self::request_body(config, prompt);
        match Self::attempt(&client, config, &body) {
            Ok(text) => Ok(text),
            Err(Failure::Final(e)) => Err(e),
            Err(Failure::Retryable(e)) => {
                log::warn!("model call failed, retrying once: {e}");
                Self::attempt(&client, config, &body).map_err(|f| match f {
                    Failure::Retryable(e) | Failure::Final(e) => e,
                })
            }
        }
    }
}
