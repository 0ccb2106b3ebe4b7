//! Policy backed by an HTTP chat-completions endpoint.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    build_request, grammar, trim_context, with_body, ActionPolicy, ChatMessage, PolicyError, PolicyInput, Proposal, ReflectionSubject,
    Role, REFLECT_PROMPT, REPAIR_PROMPT,
};
use crate::reasoning::StateText;

pub const API_KEY_ENV: &str = "CLIMB_LLM_API_KEY";
pub const BASE_URL_ENV: &str = "CLIMB_LLM_BASE_URL";
pub const MODEL_ENV: &str = "CLIMB_LLM_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_output_tokens: usize,
    /// Context window in estimated tokens.
    pub context_tokens: usize,
    pub timeout_seconds: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            api_key_env: API_KEY_ENV.into(),
            temperature: 0.2,
            max_output_tokens: 2048,
            context_tokens: 32_000,
            timeout_seconds: 120,
        }
    }
}

impl EndpointConfig {
    /// Defaults overridden by `CLIMB_LLM_BASE_URL` and `CLIMB_LLM_MODEL`.
    pub fn from_env() -> Self {
        let mut c = Self::default();
        if let Ok(u) = std::env::var(BASE_URL_ENV) {
            c.base_url = u;
        }
        if let Ok(m) = std::env::var(MODEL_ENV) {
            c.model = m;
        }
        c
    }
}

pub struct EndpointPolicy {
    config: EndpointConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    exchanges: Vec<Value>,
}

impl std::fmt::Debug for EndpointPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EndpointPolicy").field("config", &self.config).finish_non_exhaustive()
    }
}

fn wire_role(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::Assistant => "assistant",
        Role::User | Role::ToolResult | Role::ExecutionResult => "user",
    }
}

fn wire_content(m: &ChatMessage) -> String {
    match m.role {
        Role::ToolResult => format!("[tool result]\n{}", m.content),
        Role::ExecutionResult => format!("[execution result]\n{}", m.content),
        _ => m.content.clone(),
    }
}

/// Replaces every occurrence of `secret` with a marker.
pub fn redact(text: &str, secret: &str) -> String {
    if secret.is_empty() {
        text.to_string()
    } else {
        text.replace(secret, "[redacted]")
    }
}

impl EndpointPolicy {
    /// Fails before any network traffic when the key is not configured.
    pub fn new(config: EndpointConfig) -> Result<Self, PolicyError> {
        let api_key = std::env::var(&config.api_key_env).unwrap_or_default();
        if api_key.trim().is_empty() {
            return Err(PolicyError::Config(format!("environment variable {} is not set", config.api_key_env)));
        }
        if !(config.base_url.starts_with("http://") || config.base_url.starts_with("https://")) {
            return Err(PolicyError::Config(format!("invalid base URL `{}`", config.base_url)));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_seconds))
            .build()
            .map_err(|e| PolicyError::Config(e.to_string()))?;
        Ok(EndpointPolicy { config, api_key, client, exchanges: Vec::new() })
    }

    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, PolicyError> {
        let budget = self.config.context_tokens.saturating_sub(self.config.max_output_tokens);
        let messages = trim_context(messages, budget)?;
        let body = json!({
            "model": self.config.model,
            "messages": messages.iter().map(|m| json!({"role": wire_role(m.role), "content": wire_content(m)})).collect::<Vec<_>>(),
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
        });
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let result = self.client.post(&url).bearer_auth(&self.api_key).json(&body).send().and_then(|r| r.error_for_status()).and_then(|r| r.text());
        let record = |resp: &str| json!({"url": url, "request": redact(&body.to_string(), &self.api_key), "response": redact(resp, &self.api_key)});
        match result {
            Ok(text) => {
                self.exchanges.push(record(&text));
                let v: Value = serde_json::from_str(&text).map_err(|e| PolicyError::Transport(format!("invalid response body: {e}")))?;
                v.pointer("/choices/0/message/content")
                    .and_then(Value::as_str)
                    .map(str::to_string)
                    .ok_or_else(|| PolicyError::Transport("response has no message content".into()))
            }
            Err(e) => {
                let msg = redact(&e.to_string(), &self.api_key);
                self.exchanges.push(record(&format!("error: {msg}")));
                Err(PolicyError::Transport(msg))
            }
        }
    }
}

impl ActionPolicy for EndpointPolicy {
    fn propose(&mut self, input: &PolicyInput<'_>) -> Result<Proposal, PolicyError> {
        let req = build_request(input, self.config.temperature, self.config.max_output_tokens);
        let mut messages = req.messages;
        let text = self.complete(&messages)?;
        match grammar::parse_action(&text) {
            Ok((action, rationale)) => Ok(Proposal { action, rationale, raw: Some(text) }),
            Err(e) => {
                messages.push(ChatMessage::new(Role::Assistant, text.clone(), true));
                messages.push(ChatMessage::new(Role::User, format!("{REPAIR_PROMPT}\nParse error: {}", e.message), true));
                let retry = self.complete(&messages)?;
                grammar::parse_action(&retry)
                    .map(|(action, rationale)| Proposal { action, rationale, raw: Some(retry.clone()) })
                    .map_err(|e2| PolicyError::Parse { message: e2.message, raw: retry })
            }
        }
    }

    fn reflect(&mut self, state: &StateText, subject: &ReflectionSubject) -> Result<String, PolicyError> {
        let messages = vec![
            ChatMessage::system(REFLECT_PROMPT),
            ChatMessage::new(Role::User, state.serialized(), false),
            ChatMessage::new(Role::ExecutionResult, subject.body.clone(), true),
        ];
        let critique = self.complete(&messages)?;
        Ok(with_body(subject, critique.trim()))
    }

    fn drain_exchanges(&mut self) -> Vec<Value> {
        std::mem::take(&mut self.exchanges)
    }
}
