use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{LlmError, PromptBundle};

/// Environment variable holding the endpoint's bearer token.
pub const TOKEN_ENV: &str = "PCE_API_TOKEN";

pub trait CompletionClient: Send + Sync {
    /// Sends one prompt and returns the raw completion text.
    fn send(&self, bundle: &PromptBundle) -> Result<String, LlmError>;
}

type Responder = dyn Fn(&PromptBundle) -> Result<String, LlmError> + Send + Sync;

/// Offline client answering from a closure.
pub struct MockClient {
    respond: Box<Responder>,
}

impl MockClient {
    pub fn new(respond: impl Fn(&PromptBundle) -> Result<String, LlmError> + Send + Sync + 'static) -> Self {
        MockClient {
            respond: Box::new(respond),
        }
    }

    /// Always answers `text`.
    pub fn constant(text: &str) -> Self {
        let text = text.to_string();
        MockClient::new(move |_| Ok(text.clone()))
    }
}

impl CompletionClient for MockClient {
    fn send(&self, bundle: &PromptBundle) -> Result<String, LlmError> {
        (self.respond)(bundle)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: f64,
    /// Extra attempts after the first failed one.
    pub retries: usize,
    /// Image URL pattern with `{stimulus}` as placeholder; without it images are not sent.
    pub image_url_template: Option<String>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            timeout_secs: 60.0,
            retries: 3,
            image_url_template: None,
        }
    }
}

/// Chat-completion client over HTTP. The token is read once from [`TOKEN_ENV`]
/// and only ever placed in the authorization header.
pub struct HttpClient {
    config: HttpConfig,
    token: Option<String>,
    http: reqwest::blocking::Client,
}

impl fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpClient")
            .field("config", &self.config)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpClient {
    pub fn from_env(config: HttpConfig) -> Result<Self, LlmError> {
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Self::with_token(config, token)
    }

    pub fn with_token(config: HttpConfig, token: Option<String>) -> Result<Self, LlmError> {
        if !(config.timeout_secs.is_finite() && config.timeout_secs > 0.0) {
            return Err(LlmError::Config(format!("timeout_secs must be positive, got {}", config.timeout_secs)));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(HttpClient { config, token, http })
    }

    /// Request body for `bundle`.
    pub fn request_body(&self, bundle: &PromptBundle) -> Value {
        let user = match &self.config.image_url_template {
            Some(tpl) => {
                let mut parts = vec![json!({"type": "text", "text": bundle.user_text})];
                for a in &bundle.attachments {
                    let url = tpl.replace("{stimulus}", &a.stimulus_id);
                    parts.push(json!({"type": "image_url", "image_url": {"url": url}}));
                }
                Value::Array(parts)
            }
            None => Value::String(bundle.user_text.clone()),
        };
        json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": user},
            ],
        })
    }

    fn attempt(&self, body: &Value) -> Result<String, (bool, String)> {
        let mut req = self.http.post(&self.config.endpoint).json(body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        // reqwest errors carry the URL but never request headers
        let resp = req.send().map_err(|e| (true, e.without_url().to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let retry = status.is_server_error() || status.as_u16() == 429;
            return Err((retry, format!("HTTP {status}")));
        }
        let v: Value = resp.json().map_err(|e| (false, e.without_url().to_string()))?;
        first_choice_text(&v).ok_or_else(|| (false, "no text in the first choice".to_string()))
    }
}

/// Text of `choices[0]`, from either the chat or the plain completion shape.
pub(crate) fn first_choice_text(v: &Value) -> Option<String> {
    let choice = v.get("choices")?.get(0)?;
    let content = choice.get("message").and_then(|m| m.get("content")).or_else(|| choice.get("text"))?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect()),
        _ => None,
    }
}

impl CompletionClient for HttpClient {
    fn send(&self, bundle: &PromptBundle) -> Result<String, LlmError> {
        let body = self.request_body(bundle);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((retry, reason)) => {
                    if !retry || attempts > self.config.retries {
                        return Err(LlmError::Transport { attempts, reason });
                    }
                    std::thread::sleep(Duration::from_millis(250 << (attempts - 1).min(5)));
                }
            }
        }
    }
}
