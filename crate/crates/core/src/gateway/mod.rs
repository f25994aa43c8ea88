//! Uniform access to the four external model services.
//!
//! [`Gateway`] wraps a chat model, a generator, an editor and a segmenter
//! behind retry policy. Format retries (re-asking after a schema violation)
//! and transport retries (network errors, 5xx) have separate budgets: a
//! structured call makes at most `(1 + format_retries) * (1 + transport_retries)`
//! chat attempts.

pub mod chat;
pub mod imaging;
pub mod mock;
pub mod structured;
pub mod templates;

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::artifact::{png_dimensions, MAX_IMAGE_BYTES};
use crate::error::{BackendError, Error, Result};
use crate::session::EditMode;

pub use chat::{ChatBackend, ChatMessage, ChatRequest, ContentPart, Role};
pub use imaging::{GenerateParams, ImageEditor, ImageGenerator, SegmentOutcome, Segmenter};
use structured::{extract_json, SchemaId, StructuredOutput, Violation, ViolationKind};
pub use templates::TemplateSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub format_retries: u32,
    pub transport_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            format_retries: 1,
            transport_retries: 2,
            backoff_ms: 250,
        }
    }
}

/// The four configured backends.
#[derive(Clone)]
pub struct BackendSet {
    pub chat: Arc<dyn ChatBackend>,
    pub generator: Arc<dyn ImageGenerator>,
    pub editor: Arc<dyn ImageEditor>,
    pub segmenter: Arc<dyn Segmenter>,
}

/// One backend attempt, as recorded in the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub backend: String,
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    pub attempt: u32,
    pub outcome: String,
}

#[derive(Default)]
struct TraceInner {
    records: Vec<CallRecord>,
    key_base: Option<String>,
    logical_calls: u32,
}

/// Per-session record of backend attempts. Drained into each event payload.
#[derive(Clone, Default)]
pub struct CallTrace(Arc<Mutex<TraceInner>>);

impl CallTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Idempotency keys for subsequent calls derive from `base`.
    pub fn set_key_base(&self, base: impl Into<String>) {
        let mut inner = self.0.lock().unwrap();
        inner.key_base = Some(base.into());
        inner.logical_calls = 0;
    }

    fn next_key(&self) -> Option<String> {
        let mut inner = self.0.lock().unwrap();
        inner.logical_calls += 1;
        let n = inner.logical_calls;
        inner.key_base.as_ref().map(|b| format!("{b}-{n}"))
    }

    pub fn record(&self, rec: CallRecord) {
        self.0.lock().unwrap().records.push(rec);
    }

    pub fn drain(&self) -> Vec<CallRecord> {
        std::mem::take(&mut self.0.lock().unwrap().records)
    }

    pub fn snapshot(&self) -> Vec<CallRecord> {
        self.0.lock().unwrap().records.clone()
    }
}

pub struct StructuredCallSpec {
    pub template: String,
    pub variables: BTreeMap<String, String>,
    pub expected_schema: SchemaId,
    /// PNG attachments sent with the user message.
    pub attachments: Vec<Vec<u8>>,
    /// Call-specific rule applied after schema validation.
    pub extra_check: Option<Box<dyn Fn(&Value) -> std::result::Result<(), Violation> + Send + Sync>>,
}

impl StructuredCallSpec {
    pub fn new(template: &str, schema: SchemaId) -> Self {
        StructuredCallSpec {
            template: template.to_string(),
            variables: BTreeMap::new(),
            expected_schema: schema,
            attachments: Vec::new(),
            extra_check: None,
        }
    }

    pub fn var(mut self, name: &str, value: impl Into<String>) -> Self {
        self.variables.insert(name.to_string(), value.into());
        self
    }

    pub fn attach(mut self, png: Vec<u8>) -> Self {
        self.attachments.push(png);
        self
    }

    pub fn check(
        mut self,
        f: impl Fn(&Value) -> std::result::Result<(), Violation> + Send + Sync + 'static,
    ) -> Self {
        self.extra_check = Some(Box::new(f));
        self
    }
}

fn status_label(e: &BackendError) -> String {
    match e {
        BackendError::Transport { .. } => "transport_error".to_string(),
        BackendError::Status { status, .. } => format!("status_{status}"),
    }
}

fn check_image_size(what: &str, bytes: &[u8]) -> Result<()> {
    if bytes.is_empty() {
        return Err(Error::validation(format!("{what} is empty")));
    }
    if bytes.len() > MAX_IMAGE_BYTES {
        return Err(Error::validation(format!(
            "{what} is {} bytes, limit is {MAX_IMAGE_BYTES}",
            bytes.len()
        )));
    }
    Ok(())
}

pub struct Gateway {
    backends: BackendSet,
    policy: RetryPolicy,
    templates: TemplateSet,
}

impl Gateway {
    pub fn new(backends: BackendSet, policy: RetryPolicy, templates: TemplateSet) -> Self {
        Gateway {
            backends,
            policy,
            templates,
        }
    }

    pub fn backends(&self) -> &BackendSet {
        &self.backends
    }

    pub fn policy(&self) -> RetryPolicy {
        self.policy
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// transport budget is spent. Every attempt is traced.
    async fn with_transport_retry<T, F, Fut>(
        &self,
        trace: &CallTrace,
        backend: &str,
        op: &str,
        template: Option<&str>,
        mut call: F,
    ) -> std::result::Result<T, BackendError>
    where
        F: FnMut() -> Fut,
        Fut: Future<Output = std::result::Result<T, BackendError>>,
    {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = call().await;
            let outcome = match &result {
                Ok(_) => "ok".to_string(),
                Err(e) => status_label(e),
            };
            trace.record(CallRecord {
                backend: backend.to_string(),
                op: op.to_string(),
                template: template.map(str::to_string),
                attempt,
                outcome,
            });
            match result {
                Err(e) if e.is_retryable() && attempt <= self.policy.transport_retries => {
                    tracing::warn!(backend, op, attempt, error = %e, "retrying backend call");
                    let backoff = self.policy.backoff_ms.saturating_mul(1 << (attempt - 1).min(6));
                    if backoff > 0 {
                        tokio::time::sleep(Duration::from_millis(backoff)).await;
                    }
                }
                other => return other,
            }
        }
    }

    /// Schema-validated chat call with one re-ask per format retry.
    pub async fn chat_structured(&self, spec: &StructuredCallSpec, trace: &CallTrace) -> Result<Value> {
        let template = self.templates.get(&spec.template)?;
        let rendered = template.render(&spec.variables)?;
        for (i, a) in spec.attachments.iter().enumerate() {
            check_image_size(&format!("attachment {i}"), a)?;
        }
        let mut user = vec![ContentPart::Text(rendered.user)];
        user.extend(spec.attachments.iter().cloned().map(ContentPart::Image));
        let mut request = ChatRequest {
            messages: vec![
                ChatMessage::text(Role::System, rendered.system),
                ChatMessage {
                    role: Role::User,
                    content: user,
                },
            ],
            idempotency_key: trace.next_key(),
        };

        let chat = &self.backends.chat;
        let mut format_attempts = 0u32;
        loop {
            let text = self
                .with_transport_retry(trace, chat.id(), "chat", Some(&spec.template), || {
                    chat.complete(&request)
                })
                .await?;
            format_attempts += 1;

            let verdict = extract_json(&text).and_then(|v| {
                spec.expected_schema.validate(&v)?;
                if let Some(extra) = &spec.extra_check {
                    extra(&v)?;
                }
                Ok(v)
            });
            match verdict {
                Ok(v) => return Ok(v),
                Err(violation) => {
                    tracing::debug!(template = %spec.template, %violation, "structured reply rejected");
                    trace.record(CallRecord {
                        backend: chat.id().to_string(),
                        op: "validate".to_string(),
                        template: Some(spec.template.clone()),
                        attempt: format_attempts,
                        outcome: match violation.kind {
                            ViolationKind::Format => "format_violation".to_string(),
                            ViolationKind::Range => "range_violation".to_string(),
                        },
                    });
                    if format_attempts > self.policy.format_retries {
                        let (template, attempts, message) =
                            (spec.template.clone(), format_attempts, violation.message);
                        return Err(match violation.kind {
                            ViolationKind::Format => Error::Format {
                                template,
                                attempts,
                                message,
                            },
                            ViolationKind::Range => Error::ScoreRange {
                                template,
                                attempts,
                                message,
                            },
                        });
                    }
                    request
                        .messages
                        .push(ChatMessage::text(Role::Assistant, text));
                    request.messages.push(ChatMessage::text(
                        Role::User,
                        format!(
                            "Your previous reply was rejected: {}. Reply again with only the corrected JSON object.",
                            violation.message
                        ),
                    ));
                }
            }
        }
    }

    pub async fn chat_typed<T: StructuredOutput>(
        &self,
        spec: StructuredCallSpec,
        trace: &CallTrace,
    ) -> Result<T> {
        debug_assert_eq!(spec.expected_schema, T::SCHEMA);
        let v = self.chat_structured(&spec, trace).await?;
        serde_json::from_value(v).map_err(|e| Error::Format {
            template: spec.template.clone(),
            attempts: 0,
            message: e.to_string(),
        })
    }

    pub async fn generate(&self, prompt: &str, params: &GenerateParams, trace: &CallTrace) -> Result<Vec<u8>> {
        if params.width == 0 || params.height == 0 {
            return Err(Error::validation(format!(
                "image dimensions must be positive, got {}x{}",
                params.width, params.height
            )));
        }
        if prompt.trim().is_empty() {
            return Err(Error::validation("generation prompt is empty"));
        }
        let generator = &self.backends.generator;
        let key = trace.next_key();
        let png = self
            .with_transport_retry(trace, generator.id(), "generate", None, || {
                generator.generate(prompt, params, key.as_deref())
            })
            .await?;
        check_image_size("generated image", &png)?;
        Ok(png)
    }

    pub async fn edit(
        &self,
        prompt: &str,
        image: &[u8],
        mask: &[u8],
        mode: EditMode,
        trace: &CallTrace,
    ) -> Result<Vec<u8>> {
        check_image_size("edit image", image)?;
        check_image_size("edit mask", mask)?;
        let image_dims = png_dimensions(image)?;
        let mask_dims = png_dimensions(mask)?;
        if image_dims != mask_dims {
            return Err(Error::DimensionMismatch {
                image: image_dims,
                mask: mask_dims,
            });
        }
        let editor = &self.backends.editor;
        let key = trace.next_key();
        let png = self
            .with_transport_retry(trace, editor.id(), "edit", None, || {
                editor.edit(prompt, image, mask, mode, key.as_deref())
            })
            .await?;
        check_image_size("edited image", &png)?;
        Ok(png)
    }

    /// Referring-expression segmentation. A mask whose size differs from the
    /// image is reported as `NotFound`: the cascade treats it as a failed stage.
    pub async fn segment(&self, image: &[u8], expression: &str, trace: &CallTrace) -> Result<SegmentOutcome> {
        if expression.trim().is_empty() {
            return Err(Error::validation("segmentation expression is empty"));
        }
        check_image_size("segment image", image)?;
        let segmenter = &self.backends.segmenter;
        let key = trace.next_key();
        let outcome = self
            .with_transport_retry(trace, segmenter.id(), "segment", None, || {
                segmenter.segment(image, expression, key.as_deref())
            })
            .await?;
        match outcome {
            SegmentOutcome::Mask(mask) => {
                let image_dims = png_dimensions(image)?;
                match png_dimensions(&mask) {
                    Ok(d) if d == image_dims => Ok(SegmentOutcome::Mask(mask)),
                    other => {
                        tracing::warn!(?other, ?image_dims, "segmenter mask rejected");
                        trace.record(CallRecord {
                            backend: segmenter.id().to_string(),
                            op: "validate".to_string(),
                            template: None,
                            attempt: 1,
                            outcome: "mask_dimension_mismatch".to_string(),
                        });
                        Ok(SegmentOutcome::NotFound)
                    }
                }
            }
            SegmentOutcome::NotFound => Ok(SegmentOutcome::NotFound),
        }
    }
}
