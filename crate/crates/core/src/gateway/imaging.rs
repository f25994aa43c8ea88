//! Generator, editor and segmenter backends and their HTTP contracts.
//!
//! ```text
//! POST /generate {prompt, width, height, seed}            -> image/png
//! POST /edit     {prompt, image_b64, mask_b64, mode}      -> image/png
//! POST /segment  {image_b64, expression}                  -> image/png | 404
//! ```

use std::time::Duration;

use async_trait::async_trait;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::BackendError;
use crate::session::EditMode;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateBody {
    pub prompt: String,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditBody {
    pub prompt: String,
    pub image_b64: String,
    pub mask_b64: String,
    pub mode: EditMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentBody {
    pub image_b64: String,
    pub expression: String,
}

pub fn b64_encode(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn b64_decode(s: &str) -> Result<Vec<u8>, base64::DecodeError> {
    base64::engine::general_purpose::STANDARD.decode(s.trim())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateParams {
    pub width: u32,
    pub height: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SegmentOutcome {
    Mask(Vec<u8>),
    NotFound,
}

#[async_trait]
pub trait ImageGenerator: Send + Sync {
    fn id(&self) -> &str;
    fn capabilities(&self) -> &[String];
    async fn generate(
        &self,
        prompt: &str,
        params: &GenerateParams,
        idempotency_key: Option<&str>,
    ) -> Result<Vec<u8>, BackendError>;
}

#[async_trait]
pub trait ImageEditor: Send + Sync {
    fn id(&self) -> &str;
    fn capabilities(&self) -> &[String];
    async fn edit(
        &self,
        prompt: &str,
        image: &[u8],
        mask: &[u8],
        mode: EditMode,
        idempotency_key: Option<&str>,
    ) -> Result<Vec<u8>, BackendError>;
}

#[async_trait]
pub trait Segmenter: Send + Sync {
    fn id(&self) -> &str;
    async fn segment(
        &self,
        image: &[u8],
        expression: &str,
        idempotency_key: Option<&str>,
    ) -> Result<SegmentOutcome, BackendError>;
}

/// One HTTP client per imaging slot; the three slots share this implementation.
pub struct HttpImagingBackend {
    id: String,
    base_url: String,
    capabilities: Vec<String>,
    http: reqwest::Client,
}

impl HttpImagingBackend {
    pub fn new(
        id: impl Into<String>,
        base_url: impl Into<String>,
        capabilities: Vec<String>,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let id = id.into();
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::transport(&id, e))?;
        Ok(HttpImagingBackend {
            id,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            capabilities,
            http,
        })
    }

    async fn post<B: Serialize + Sync>(
        &self,
        path: &str,
        body: &B,
        key: Option<&str>,
    ) -> Result<reqwest::Response, BackendError> {
        let mut req = self
            .http
            .post(format!("{}{path}", self.base_url))
            .json(body);
        if let Some(k) = key {
            req = req.header("Idempotency-Key", k);
        }
        req.send()
            .await
            .map_err(|e| BackendError::transport(&self.id, e))
    }

    async fn png_body(&self, resp: reqwest::Response) -> Result<Vec<u8>, BackendError> {
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(BackendError::status(&self.id, status.as_u16(), body));
        }
        let bytes = resp
            .bytes()
            .await
            .map_err(|e| BackendError::transport(&self.id, e))?;
        Ok(bytes.to_vec())
    }
}

#[async_trait]
impl ImageGenerator for HttpImagingBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> &[String] {
        &self.capabilities
    }

    async fn generate(
        &self,
        prompt: &str,
        params: &GenerateParams,
        key: Option<&str>,
    ) -> Result<Vec<u8>, BackendError> {
        let body = GenerateBody {
            prompt: prompt.to_string(),
            width: params.width,
            height: params.height,
            seed: params.seed,
        };
        let resp = self.post("/generate", &body, key).await?;
        self.png_body(resp).await
    }
}

#[async_trait]
impl ImageEditor for HttpImagingBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> &[String] {
        &self.capabilities
    }

    async fn edit(
        &self,
        prompt: &str,
        image: &[u8],
        mask: &[u8],
        mode: EditMode,
        key: Option<&str>,
    ) -> Result<Vec<u8>, BackendError> {
        let body = EditBody {
            prompt: prompt.to_string(),
            image_b64: b64_encode(image),
            mask_b64: b64_encode(mask),
            mode,
        };
        let resp = self.post("/edit", &body, key).await?;
        self.png_body(resp).await
    }
}

#[async_trait]
impl Segmenter for HttpImagingBackend {
    fn id(&self) -> &str {
        &self.id
    }

    async fn segment(
        &self,
        image: &[u8],
        expression: &str,
        key: Option<&str>,
    ) -> Result<SegmentOutcome, BackendError> {
        let body = SegmentBody {
            image_b64: b64_encode(image),
            expression: expression.to_string(),
        };
        let resp = self.post("/segment", &body, key).await?;
        if resp.status() == reqwest::StatusCode::NOT_FOUND {
            return Ok(SegmentOutcome::NotFound);
        }
        self.png_body(resp).await.map(SegmentOutcome::Mask)
    }
}
