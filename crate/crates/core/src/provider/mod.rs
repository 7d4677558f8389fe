//! Provider-agnostic access to the external model capabilities.
//!
//! Four capabilities are modelled: text/vision reasoning, image generation,
//! region inpainting and speech transcription. Concrete backends implement
//! [`Provider`]; the [`Gateway`] routes requests per capability and adds
//! retries, in-flight limits and audit logging.

mod config;
mod gateway;
mod live;
mod mock;
pub mod templates;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::mask::BinaryMask;
use crate::model::RasterImage;

pub use config::{ProviderConfig, ProviderMode, EndpointConfig, RetryConfig, ConfigError};
pub use gateway::{AuditLog, Gateway, GatewayBuilder, GatewayStats};
pub use live::LiveProvider;
pub use mock::{tasks, MockErrorKind, MockProvider, MockReply, MockRule, MockScript};
pub use templates::{render_edit_phrases, render_template, PromptTemplate, TemplateError, TemplateRegistry};

/// Keys of well-known request parameters.
pub mod params {
    /// Pipeline step issuing the request; mocks dispatch on it.
    pub const TASK: &str = "task";
    pub const CATEGORY: &str = "category";
    pub const FUNCTION: &str = "function";
    pub const CURRENT: &str = "current";
    pub const TARGET: &str = "target";
    pub const TRANSCRIPT: &str = "transcript";
    /// Colour-name -> component-label legend of an overlay.
    pub const LEGEND: &str = "legend";
    pub const INDEX: &str = "index";
    pub const COUNT: &str = "n";
    pub const SIZE: &str = "size";
    pub const ATTEMPT: &str = "attempt";
    pub const TRIAL: &str = "trial";
    pub const SYSTEM: &str = "system";
    pub const AUDIO_BASE64: &str = "audio_base64";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Capability {
    Vision,
    Generate,
    Inpaint,
    Transcribe,
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderRequest {
    pub capability: Capability,
    pub prompt: String,
    pub images: Vec<RasterImage>,
    pub mask: Option<BinaryMask>,
    pub params: BTreeMap<String, Value>,
}

impl ProviderRequest {
    pub fn new(capability: Capability, prompt: impl Into<String>) -> Self {
        Self {
            capability,
            prompt: prompt.into(),
            images: Vec::new(),
            mask: None,
            params: BTreeMap::new(),
        }
    }

    pub fn image(mut self, image: RasterImage) -> Self {
        self.images.push(image);
        self
    }

    pub fn mask(mut self, mask: BinaryMask) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_owned(), value.into());
        self
    }

    pub fn str_param(&self, key: &str) -> Option<&str> {
        self.params.get(key).and_then(Value::as_str)
    }

    pub fn u64_param(&self, key: &str) -> Option<u64> {
        self.params.get(key).and_then(Value::as_u64)
    }

    /// Capability-specific shape checks.
    pub fn validate(&self) -> Result<(), ProviderError> {
        match self.capability {
            Capability::Inpaint => {
                if self.images.len() != 1 {
                    return Err(ProviderError::InvalidRequest(format!(
                        "inpaint needs exactly one image, got {}",
                        self.images.len()
                    )));
                }
                let Some(mask) = &self.mask else {
                    return Err(ProviderError::InvalidRequest(
                        "inpaint needs a mask".into(),
                    ));
                };
                let img = &self.images[0];
                if (mask.width(), mask.height()) != (img.width(), img.height()) {
                    return Err(ProviderError::InvalidRequest(
                        "inpaint mask size differs from image".into(),
                    ));
                }
            }
            Capability::Generate | Capability::Vision => {
                if self.prompt.trim().is_empty() {
                    return Err(ProviderError::InvalidRequest("empty prompt".into()));
                }
            }
            Capability::Transcribe => {
                if !self.params.contains_key(params::AUDIO_BASE64) {
                    return Err(ProviderError::InvalidRequest(
                        "transcription needs audio".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub images: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderResponse {
    pub text: Option<String>,
    pub images: Vec<RasterImage>,
    pub usage: Usage,
    pub latency_ms: u64,
}

impl ProviderResponse {
    pub fn text(text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            usage: Usage {
                completion_tokens: text.split_whitespace().count() as u64,
                ..Usage::default()
            },
            text: Some(text),
            images: Vec::new(),
            latency_ms: 0,
        }
    }

    pub fn images(images: Vec<RasterImage>) -> Self {
        Self {
            text: None,
            usage: Usage {
                images: images.len() as u64,
                ..Usage::default()
            },
            images,
            latency_ms: 0,
        }
    }

    /// The text body, or `MalformedResponse` when absent.
    pub fn require_text(&self) -> Result<&str, ProviderError> {
        self.text.as_deref().ok_or_else(|| ProviderError::MalformedResponse {
            detail: "response has no text".into(),
            raw: String::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("provider timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("provider rate limited the request")]
    RateLimited,
    #[error("provider rejected the request on content policy grounds: {0}")]
    ContentPolicyRejection(String),
    #[error("malformed provider response: {detail}")]
    MalformedResponse { detail: String, raw: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider transport error: {0}")]
    Transport(String),
    #[error("no provider configured for {0}")]
    Unsupported(Capability),
}

impl ProviderError {
    /// Errors worth retrying with backoff.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            Self::Timeout { .. } | Self::RateLimited | Self::Transport(_)
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Timeout { .. } => "Timeout",
            Self::RateLimited => "RateLimited",
            Self::ContentPolicyRejection(_) => "ContentPolicyRejection",
            Self::MalformedResponse { .. } => "MalformedResponse",
            Self::InvalidRequest(_) => "InvalidRequest",
            Self::Transport(_) => "Transport",
            Self::Unsupported(_) => "Unsupported",
        }
    }
}

/// A backend for one or more capabilities.
pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    fn invoke(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError>;
}
