//! Application configuration file and backend construction.
//!
//! ```json
//! {
//!   "backends": {
//!     "chat":      {"kind": "openai", "url": "https://api.example.com", "model": "gpt-4o-mini"},
//!     "generator": {"kind": "http", "id": "flux", "url": "http://gpu:8001", "capabilities": ["generate"]},
//!     "editor":    {"kind": "mock"},
//!     "segmenter": {"kind": "mock", "fallback": "center_box"}
//!   },
//!   "run":    {"threshold": 8.0, "max_regen": 3, "creativity_default": "MEDIUM"},
//!   "retry":  {"format_retries": 1, "transport_retries": 2, "backoff_ms": 250},
//!   "server": {"port": 8080, "cors_origins": []}
//! }
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::chat::{OpenAiChat, OpenAiChatConfig};
use crate::gateway::imaging::HttpImagingBackend;
use crate::gateway::mock::{MockHandles, MockScoring, SegmenterFallback};
use crate::gateway::{BackendSet, ChatBackend, Gateway, ImageEditor, ImageGenerator, RetryPolicy, Segmenter, TemplateSet};
use crate::orchestrator::RunConfig;

pub const DEFAULT_API_KEY_ENV: &str = "T2I_COPILOT_API_KEY";

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChatConfig {
    Openai {
        #[serde(default = "default_chat_id")]
        id: String,
        url: String,
        model: String,
        /// Environment variable holding the bearer token.
        #[serde(default = "default_api_key_env")]
        api_key_env: String,
        #[serde(default = "default_chat_timeout")]
        timeout_s: u64,
        #[serde(default = "default_true")]
        json_mode: bool,
    },
    Mock {
        #[serde(default)]
        scoring: MockScoring,
    },
}

fn default_chat_id() -> String {
    "chat".to_string()
}

fn default_chat_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImagingConfig {
    Http {
        id: String,
        url: String,
        #[serde(default)]
        capabilities: Vec<String>,
        #[serde(default)]
        timeout_s: Option<u64>,
    },
    Mock {
        #[serde(default)]
        id: Option<String>,
        #[serde(default)]
        capabilities: Option<Vec<String>>,
        /// Segmenter only: what to return for expressions without a fixture.
        #[serde(default)]
        fallback: SegmenterFallback,
    },
}

impl ImagingConfig {
    fn mock() -> Self {
        ImagingConfig::Mock {
            id: None,
            capabilities: None,
            fallback: SegmenterFallback::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendsConfig {
    pub chat: ChatConfig,
    pub generator: ImagingConfig,
    pub editor: ImagingConfig,
    pub segmenter: ImagingConfig,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        BackendsConfig {
            chat: ChatConfig::Mock {
                scoring: MockScoring::default(),
            },
            generator: ImagingConfig::mock(),
            editor: ImagingConfig::mock(),
            segmenter: ImagingConfig::mock(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub port: u16,
    pub cors_origins: Vec<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            port: 8080,
            cors_origins: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AppConfig {
    #[serde(default)]
    pub backends: BackendsConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub server: ServerConfig,
    /// Where sessions and artifacts live. Relative paths resolve against the
    /// config file's directory.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Directory of prompt template overrides.
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<AppConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data_dir, &mut cfg.templates_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<AppConfig> {
        let cfg: AppConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.run.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        match &self.templates_dir {
            Some(dir) => TemplateSet::with_overrides(dir),
            None => Ok(TemplateSet::builtin()),
        }
    }

    /// Build the four backends. Mock slots share one [`MockHandles`], returned
    /// for inspection.
    pub fn build_backends(&self) -> Result<(BackendSet, MockHandles)> {
        let scoring = match &self.backends.chat {
            ChatConfig::Mock { scoring } => scoring.clone(),
            ChatConfig::Openai { .. } => MockScoring::default(),
        };
        let seg_fallback = match &self.backends.segmenter {
            ImagingConfig::Mock { fallback, .. } => *fallback,
            ImagingConfig::Http { .. } => SegmenterFallback::default(),
        };
        let mocks = MockHandles::new(scoring, seg_fallback);

        let chat: Arc<dyn ChatBackend> = match &self.backends.chat {
            ChatConfig::Mock { .. } => mocks.chat.clone(),
            ChatConfig::Openai {
                id,
                url,
                model,
                api_key_env,
                timeout_s,
                json_mode,
            } => Arc::new(OpenAiChat::new(OpenAiChatConfig {
                id: id.clone(),
                url: url.clone(),
                model: model.clone(),
                api_key: std::env::var(api_key_env).ok(),
                timeout: Duration::from_secs(*timeout_s),
                json_mode: *json_mode,
            })?),
        };
        let http = |c: &ImagingConfig, default_timeout: u64| -> Result<Option<Arc<HttpImagingBackend>>> {
            match c {
                ImagingConfig::Http {
                    id,
                    url,
                    capabilities,
                    timeout_s,
                } => Ok(Some(Arc::new(HttpImagingBackend::new(
                    id.clone(),
                    url.clone(),
                    capabilities.clone(),
                    Duration::from_secs(timeout_s.unwrap_or(default_timeout)),
                )?))),
                ImagingConfig::Mock { .. } => Ok(None),
            }
        };
        let generator: Arc<dyn ImageGenerator> = match http(&self.backends.generator, 300)? {
            Some(b) => b,
            None => mock_generator(&self.backends.generator, &mocks),
        };
        let editor: Arc<dyn ImageEditor> = match http(&self.backends.editor, 180)? {
            Some(b) => b,
            None => mock_editor(&self.backends.editor, &mocks),
        };
        let segmenter: Arc<dyn Segmenter> = match http(&self.backends.segmenter, 60)? {
            Some(b) => b,
            None => mocks.segmenter.clone(),
        };
        Ok((
            BackendSet {
                chat,
                generator,
                editor,
                segmenter,
            },
            mocks,
        ))
    }

    pub fn build_gateway(&self) -> Result<(Gateway, MockHandles)> {
        let (backends, mocks) = self.build_backends()?;
        Ok((Gateway::new(backends, self.retry, self.templates()?), mocks))
    }
}

fn mock_generator(c: &ImagingConfig, mocks: &MockHandles) -> Arc<dyn ImageGenerator> {
    match c {
        ImagingConfig::Mock {
            id: Some(_), ..
        }
        | ImagingConfig::Mock {
            capabilities: Some(_),
            ..
        } => {
            let (id, caps) = mock_identity(c, "mock-generator", mocks.generator.capabilities());
            Arc::new(crate::gateway::mock::MockGenerator::new(id, caps))
        }
        _ => mocks.generator.clone(),
    }
}

fn mock_editor(c: &ImagingConfig, mocks: &MockHandles) -> Arc<dyn ImageEditor> {
    match c {
        ImagingConfig::Mock {
            id: Some(_), ..
        }
        | ImagingConfig::Mock {
            capabilities: Some(_),
            ..
        } => {
            let (id, caps) = mock_identity(c, "mock-editor", mocks.editor.capabilities());
            Arc::new(crate::gateway::mock::MockEditor::new(id, caps))
        }
        _ => mocks.editor.clone(),
    }
}

fn mock_identity(c: &ImagingConfig, default_id: &str, default_caps: &[String]) -> (String, Vec<String>) {
    match c {
        ImagingConfig::Mock {
            id, capabilities, ..
        } => (
            id.clone().unwrap_or_else(|| default_id.to_string()),
            capabilities.clone().unwrap_or_else(|| default_caps.to_vec()),
        ),
        ImagingConfig::Http { .. } => (default_id.to_string(), default_caps.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_mock_with_default_run_settings() {
        let cfg = AppConfig::parse("{}").unwrap();
        assert_eq!(cfg.run.threshold, 8.0);
        assert_eq!(cfg.run.max_regen, 3);
        assert_eq!(cfg.retry, RetryPolicy::default());
        assert!(matches!(cfg.backends.chat, ChatConfig::Mock { .. }));
        assert!(cfg.build_gateway().is_ok());
    }

    #[test]
    fn full_config_parses() {
        let cfg = AppConfig::parse(
            r#"{
              "backends": {
                "chat": {"kind": "openai", "url": "http://localhost:9", "model": "m"},
                "generator": {"kind": "http", "id": "gen", "url": "http://localhost:9", "capabilities": ["style"]},
                "editor": {"kind": "mock"},
                "segmenter": {"kind": "mock", "fallback": "center_box"}
              },
              "run": {"threshold": 7.5, "max_regen": 2, "creativity_default": "HIGH"},
              "retry": {"format_retries": 2},
              "server": {"port": 9000, "cors_origins": ["http://localhost:5173"]}
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.run.threshold, 7.5);
        assert_eq!(cfg.retry.format_retries, 2);
        assert_eq!(cfg.retry.transport_retries, 2);
        assert_eq!(cfg.server.port, 9000);
        let (backends, _) = cfg.build_backends().unwrap();
        assert_eq!(backends.generator.id(), "gen");
        assert_eq!(backends.chat.id(), "chat");
    }

    #[test]
    fn bad_threshold_rejected() {
        assert!(AppConfig::parse(r#"{"run": {"threshold": 11}}"#).is_err());
    }
}
