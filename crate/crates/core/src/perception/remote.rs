use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendKind, PerceptionError, Prompt, SideChannel};

pub const ENDPOINT_VAR: &str = "LVLM_ENDPOINT";
pub const KEY_VAR: &str = "LVLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteSettings {
    pub model: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_tokens: u32,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        Self { model: "gpt-4o".into(), timeout_s: 60.0, max_retries: 2, backoff_ms: 500, max_tokens: 400 }
    }
}

/// Chat-completion client. Each answer is one request at temperature 0 with
/// the prompt images inlined as base64 data URIs.
pub struct RemoteLvlm {
    endpoint: Option<String>,
    api_key: Option<String>,
    settings: RemoteSettings,
    client: reqwest::blocking::Client,
}

enum Failure {
    Transient(String),
    Fatal(String),
}

impl RemoteLvlm {
    pub fn new(endpoint: Option<String>, api_key: Option<String>, settings: RemoteSettings) -> Result<Self, PerceptionError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(settings.timeout_s.max(0.001)))
            .build()
            .map_err(|e| PerceptionError::BackendUnavailable(e.to_string()))?;
        let nonempty = |v: Option<String>| v.filter(|s| !s.trim().is_empty());
        Ok(Self { endpoint: nonempty(endpoint), api_key: nonempty(api_key), settings, client })
    }

    /// Reads `LVLM_ENDPOINT` and `LVLM_API_KEY`.
    pub fn from_env(settings: RemoteSettings) -> Result<Self, PerceptionError> {
        Self::new(std::env::var(ENDPOINT_VAR).ok(), std::env::var(KEY_VAR).ok(), settings)
    }

    pub fn request_body(&self, prompt: &Prompt) -> Value {
        let mut content = vec![json!({"type": "text", "text": prompt.user_text()})];
        for image in prompt.images() {
            let data = base64::engine::general_purpose::STANDARD.encode(image.bytes());
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:{};base64,{data}", image.format().mime())}
            }));
        }
        json!({
            "model": self.settings.model,
            "temperature": prompt.temperature(),
            "max_tokens": self.settings.max_tokens,
            "messages": [
                {"role": "system", "content": prompt.system_text()},
                {"role": "user", "content": content}
            ]
        })
    }

    fn send(&self, endpoint: &str, key: &str, body: &Value) -> Result<String, Failure> {
        let response = self.client.post(endpoint).bearer_auth(key).json(body).send().map_err(|e| Failure::Transient(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Failure::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(Failure::Fatal(format!("HTTP {status}: {}", text.chars().take(300).collect::<String>())));
        }
        let value: Value = response.json().map_err(|e| Failure::Fatal(format!("bad response body: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Failure::Fatal("response has no choices[0].message.content".into()))
    }
}

impl Backend for RemoteLvlm {
    fn kind(&self) -> BackendKind {
        BackendKind::RemoteLvlm
    }

    fn answer(&self, prompt: &Prompt, _side: Option<&SideChannel>) -> Result<String, PerceptionError> {
        let key = self.api_key.as_deref().ok_or_else(|| PerceptionError::BackendUnavailable(format!("{KEY_VAR} is not set")))?;
        let endpoint = self.endpoint.as_deref().ok_or_else(|| PerceptionError::BackendUnavailable(format!("{ENDPOINT_VAR} is not set")))?;
        let body = self.request_body(prompt);
        let mut attempt = 0;
        loop {
            match self.send(endpoint, key, &body) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(PerceptionError::BackendUnavailable(e)),
                Err(Failure::Transient(e)) if attempt >= self.settings.max_retries => {
                    return Err(PerceptionError::BackendUnavailable(format!("{e} (after {} attempts)", attempt + 1)))
                }
                Err(Failure::Transient(_)) => {
                    std::thread::sleep(Duration::from_millis(self.settings.backoff_ms << attempt));
                    attempt += 1;
                }
            }
        }
    }
}
