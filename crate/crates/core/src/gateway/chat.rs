//! Chat/vision model access over the OpenAI-compatible chat-completions protocol.

use std::time::Duration;

use async_trait::async_trait;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::BackendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContentPart {
    Text(String),
    /// PNG bytes, sent inline as a data URL.
    Image(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatMessage {
    pub role: Role,
    pub content: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: vec![ContentPart::Text(text.into())],
        }
    }

    pub fn joined_text(&self) -> String {
        self.content
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text(t) => Some(t.as_str()),
                ContentPart::Image(_) => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn images(&self) -> impl Iterator<Item = &[u8]> {
        self.content.iter().filter_map(|p| match p {
            ContentPart::Image(b) => Some(b.as_slice()),
            ContentPart::Text(_) => None,
        })
    }

    /// OpenAI message JSON. Plain-text messages use a string `content`.
    pub fn to_openai(&self) -> Value {
        let only_text = self
            .content
            .iter()
            .all(|p| matches!(p, ContentPart::Text(_)));
        let content = if only_text {
            Value::String(self.joined_text())
        } else {
            Value::Array(
                self.content
                    .iter()
                    .map(|p| match p {
                        ContentPart::Text(t) => json!({"type": "text", "text": t}),
                        ContentPart::Image(bytes) => json!({
                            "type": "image_url",
                            "image_url": {"url": png_data_url(bytes)},
                        }),
                    })
                    .collect(),
            )
        };
        json!({"role": self.role, "content": content})
    }

    /// Inverse of [`ChatMessage::to_openai`]; used by the mock server.
    pub fn from_openai(v: &Value) -> Option<ChatMessage> {
        let role: Role = serde_json::from_value(v.get("role")?.clone()).ok()?;
        let content = match v.get("content")? {
            Value::String(s) => vec![ContentPart::Text(s.clone())],
            Value::Array(parts) => parts
                .iter()
                .filter_map(|p| match p.get("type")?.as_str()? {
                    "text" => Some(ContentPart::Text(p.get("text")?.as_str()?.to_string())),
                    "image_url" => {
                        let url = p.get("image_url")?.get("url")?.as_str()?;
                        let b64 = url.split_once("base64,")?.1;
                        base64::engine::general_purpose::STANDARD
                            .decode(b64)
                            .ok()
                            .map(ContentPart::Image)
                    }
                    _ => None,
                })
                .collect(),
            _ => return None,
        };
        Some(ChatMessage { role, content })
    }
}

pub fn png_data_url(bytes: &[u8]) -> String {
    format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(bytes)
    )
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub idempotency_key: Option<String>,
}

impl ChatRequest {
    pub fn system_text(&self) -> String {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(ChatMessage::joined_text)
            .unwrap_or_default()
    }

    /// The first user message: the rendered template, before any correction turns.
    pub fn first_user_text(&self) -> String {
        self.messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(ChatMessage::joined_text)
            .unwrap_or_default()
    }

    pub fn images(&self) -> Vec<&[u8]> {
        self.messages.iter().flat_map(|m| m.images()).collect()
    }
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Single-shot completion; returns the assistant message text.
    async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone)]
pub struct OpenAiChatConfig {
    pub id: String,
    /// Base URL; `/v1/chat/completions` is appended.
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub json_mode: bool,
}

pub struct OpenAiChat {
    http: reqwest::Client,
    endpoint: String,
    config: OpenAiChatConfig,
}

impl OpenAiChat {
    pub fn new(config: OpenAiChatConfig) -> Result<Self, BackendError> {
        let http = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::transport(&config.id, e))?;
        Ok(OpenAiChat {
            http,
            endpoint: format!("{}/v1/chat/completions", config.url.trim_end_matches('/')),
            config,
        })
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": request.messages.iter().map(ChatMessage::to_openai).collect::<Vec<_>>(),
            "temperature": 0,
        });
        if self.config.json_mode {
            body["response_format"] = json!({"type": "json_object"});
        }
        body
    }
}

#[async_trait]
impl ChatBackend for OpenAiChat {
    fn id(&self) -> &str {
        &self.config.id
    }

    async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let id = &self.config.id;
        let mut req = self.http.post(&self.endpoint).json(&self.body(request));
        if let Some(key) = self.config.api_key.as_deref().filter(|k| !k.is_empty()) {
            req = req.bearer_auth(key);
        }
        if let Some(k) = &request.idempotency_key {
            req = req.header("Idempotency-Key", k);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| BackendError::transport(id, e))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(BackendError::status(id, status.as_u16(), body));
        }
        let v: Value = resp
            .json()
            .await
            .map_err(|e| BackendError::transport(id, e))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::transport(id, "response has no choices[0].message.content"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn openai_message_shapes() {
        let m = ChatMessage::text(Role::System, "hi");
        assert_eq!(m.to_openai(), json!({"role": "system", "content": "hi"}));

        let m = ChatMessage {
            role: Role::User,
            content: vec![ContentPart::Text("look".into()), ContentPart::Image(vec![1, 2, 3])],
        };
        let v = m.to_openai();
        assert_eq!(v["content"][1]["type"], "image_url");
        assert!(v["content"][1]["image_url"]["url"]
            .as_str()
            .unwrap()
            .starts_with("data:image/png;base64,"));
        assert_eq!(ChatMessage::from_openai(&v).unwrap(), m);
    }
}
