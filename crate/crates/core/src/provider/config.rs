use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub const ENV_VISION_KEY: &str = "CONCEPT_VISION_API_KEY";
pub const ENV_IMAGE_KEY: &str = "CONCEPT_IMAGE_API_KEY";
pub const ENV_MODE: &str = "CONCEPT_PROVIDER_MODE";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading provider config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing provider config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown provider mode {0:?}; expected mock or live")]
    BadMode(String),
    #[error("live mode needs {0} to be set")]
    MissingKey(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    #[default]
    Mock,
    Live,
}

impl std::str::FromStr for ProviderMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mock" => Ok(Self::Mock),
            "live" => Ok(Self::Live),
            _ => Err(ConfigError::BadMode(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
}

impl EndpointConfig {
    fn with_model(model: &str) -> Self {
        Self {
            model: model.to_owned(),
            ..Self::default()
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".to_owned(),
            model: String::new(),
            timeout_ms: 120_000,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryConfig {
    pub attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay_ms: 500,
        }
    }
}

/// Provider configuration file (JSON).
///
/// ```json
/// { "mode": "mock", "mock_seed": 7,
///   "vision": { "base_url": "...", "model": "...", "timeout_ms": 60000, "max_in_flight": 4 },
///   "retry": { "attempts": 3, "base_delay_ms": 500 } }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    pub mock_seed: u64,
    pub vision: EndpointConfig,
    pub generate: EndpointConfig,
    pub inpaint: EndpointConfig,
    pub transcribe: EndpointConfig,
    pub retry: RetryConfig,
    /// Square output size requested from image generators.
    pub image_size: u32,
    /// Override rules for the mock provider.
    pub mock_rules: Vec<super::MockRule>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            mode: ProviderMode::Mock,
            mock_seed: 7,
            vision: EndpointConfig::with_model("gpt-4o"),
            generate: EndpointConfig::with_model("dall-e-3"),
            inpaint: EndpointConfig::with_model("dall-e-2"),
            transcribe: EndpointConfig::with_model("whisper-1"),
            retry: RetryConfig::default(),
            image_size: 256,
            mock_rules: Vec::new(),
        }
    }
}

impl ProviderConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Apply `CONCEPT_PROVIDER_MODE` if set.
    pub fn apply_env(mut self) -> Result<Self, ConfigError> {
        if let Ok(mode) = std::env::var(ENV_MODE) {
            self.mode = mode.parse()?;
        }
        Ok(self)
    }
}

/// API keys for live mode, read from the environment.
#[derive(Clone)]
pub(crate) struct ApiKeys {
    pub vision: String,
    pub image: String,
}

impl std::fmt::Debug for ApiKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ApiKeys(***)")
    }
}

impl ApiKeys {
    pub fn from_env() -> Result<Self, ConfigError> {
        let get = |k: &'static str| std::env::var(k).map_err(|_| ConfigError::MissingKey(k));
        Ok(Self {
            vision: get(ENV_VISION_KEY)?,
            image: get(ENV_IMAGE_KEY)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_fills_defaults() {
        let cfg: ProviderConfig =
            serde_json::from_str(r#"{"mode":"live","vision":{"timeout_ms":5}}"#).unwrap();
        assert_eq!(cfg.mode, ProviderMode::Live);
        assert_eq!(cfg.vision.timeout_ms, 5);
        assert_eq!(cfg.vision.max_in_flight, 4);
        assert_eq!(cfg.retry.attempts, 3);
    }

    #[test]
    fn mode_parse() {
        assert_eq!("MOCK".parse::<ProviderMode>().unwrap(), ProviderMode::Mock);
        assert!("cloud".parse::<ProviderMode>().is_err());
    }
}
