//! Service and harness configuration.
//!
//! One TOML file with every field optional, then `NPROMPT_*` environment
//! overrides on top.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use nprompt_core::decode::DecodeParams;
use nprompt_core::pipeline::KeywordTaxonomy;
use nprompt_core::scoring::{
    HttpImageBackend, HttpScorer, ImageBackend, RetryPolicy, Scorer, StubAestheticScorer,
    StubImageBackend, StubPreferenceScorer, DEFAULT_MAX_IN_FLIGHT,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid value {value:?} for {var}: {message}")]
    Env {
        var: &'static str,
        value: String,
        message: String,
    },
    #[error("live mode requires {0}; set it in the config file or the environment")]
    MissingLive(&'static str),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Stub,
    Live,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "stub" => Ok(Mode::Stub),
            "live" => Ok(Mode::Live),
            other => Err(format!("expected stub or live, got {other:?}")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Stub => "stub",
            Mode::Live => "live",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub image_url: Option<String>,
    pub pick_url: Option<String>,
    pub aesthetics_url: Option<String>,
    pub image_steps: u32,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            image_url: None,
            pick_url: None,
            aesthetics_url: None,
            image_steps: 50,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            retry: RetryPolicy::default(),
        }
    }
}

/// The served model: a model file, or an n-gram model counted from the
/// bundled training prompts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub path: Option<PathBuf>,
    pub ngram_order: usize,
    pub ngram_alpha: f64,
    pub taxonomy: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            path: None,
            ngram_order: 2,
            ngram_alpha: 0.1,
            taxonomy: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub mode: Mode,
    /// Default seed for clause sampling, decoding and images.
    pub seed: u64,
    pub server: ServerConfig,
    pub backends: BackendConfig,
    pub model: ModelConfig,
    pub records: PathBuf,
    pub decode: DecodeParams,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            mode: Mode::Stub,
            seed: 0,
            server: ServerConfig::default(),
            backends: BackendConfig::default(),
            model: ModelConfig::default(),
            records: PathBuf::from("nprompt-records.jsonl"),
            decode: DecodeParams::default(),
        }
    }
}

fn parse_env<T: FromStr>(var: &'static str, value: String) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Env {
        var,
        message: e.to_string(),
        value,
    })
}

impl Config {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    /// File (or defaults) plus overrides from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let base = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        base.with_env(|k| std::env::var(k).ok())
    }

    /// Applies `NPROMPT_*` overrides read through `get`.
    pub fn with_env(mut self, get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        if let Some(v) = get("NPROMPT_MODE") {
            self.mode = parse_env("NPROMPT_MODE", v)?;
        }
        if let Some(v) = get("NPROMPT_SEED") {
            self.seed = parse_env("NPROMPT_SEED", v)?;
        }
        if let Some(v) = get("NPROMPT_HOST") {
            self.server.host = v;
        }
        if let Some(v) = get("NPROMPT_PORT") {
            self.server.port = parse_env("NPROMPT_PORT", v)?;
        }
        if let Some(v) = get("NPROMPT_IMAGE_URL") {
            self.backends.image_url = Some(v);
        }
        if let Some(v) = get("NPROMPT_PICK_URL") {
            self.backends.pick_url = Some(v);
        }
        if let Some(v) = get("NPROMPT_AESTHETICS_URL") {
            self.backends.aesthetics_url = Some(v);
        }
        if let Some(v) = get("NPROMPT_MODEL") {
            self.model.path = Some(v.into());
        }
        if let Some(v) = get("NPROMPT_RECORDS") {
            self.records = v.into();
        }
        if let Some(v) = get("NPROMPT_BEAM") {
            self.decode.beam_size = parse_env("NPROMPT_BEAM", v)?;
        }
        if let Some(v) = get("NPROMPT_LAMBDA") {
            self.decode.satisfaction_weight = parse_env("NPROMPT_LAMBDA", v)?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.decode
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.model.ngram_order == 0 {
            return Err(ConfigError::Invalid("model.ngram_order must be at least 1".into()));
        }
        if !(self.model.ngram_alpha > 0.0 && self.model.ngram_alpha.is_finite()) {
            return Err(ConfigError::Invalid("model.ngram_alpha must be positive".into()));
        }
        if self.mode == Mode::Live {
            self.live_urls()?;
        }
        Ok(())
    }

    fn live_urls(&self) -> Result<(&str, &str, &str), ConfigError> {
        let b = &self.backends;
        Ok((
            b.image_url
                .as_deref()
                .ok_or(ConfigError::MissingLive("backends.image_url (NPROMPT_IMAGE_URL)"))?,
            b.pick_url
                .as_deref()
                .ok_or(ConfigError::MissingLive("backends.pick_url (NPROMPT_PICK_URL)"))?,
            b.aesthetics_url.as_deref().ok_or(ConfigError::MissingLive(
                "backends.aesthetics_url (NPROMPT_AESTHETICS_URL)",
            ))?,
        ))
    }

    pub fn taxonomy(&self) -> Result<KeywordTaxonomy, ConfigError> {
        match &self.model.taxonomy {
            Some(p) => KeywordTaxonomy::load(p).map_err(|e| ConfigError::Invalid(e.to_string())),
            None => Ok(KeywordTaxonomy::bundled()),
        }
    }

    /// Stub backends, or HTTP clients in live mode.
    pub fn scoring_backends(&self, taxonomy: &KeywordTaxonomy) -> Result<ScoringBackends, ConfigError> {
        match self.mode {
            Mode::Stub => Ok(ScoringBackends::stub(taxonomy, self.seed)),
            Mode::Live => {
                let (image, pick, aes) = self.live_urls()?;
                let retry = self.backends.retry.clone();
                Ok(ScoringBackends {
                    images: Arc::new(HttpImageBackend::new(image, self.backends.image_steps, retry.clone())),
                    pick: Arc::new(HttpScorer::new(pick, retry.clone())),
                    aesthetics: Arc::new(HttpScorer::new(aes, retry)),
                    image_seed: self.seed,
                    max_in_flight: self.backends.max_in_flight,
                })
            }
        }
    }
}

/// Image generator plus preference and aesthetics scorers.
#[derive(Clone)]
pub struct ScoringBackends {
    pub images: Arc<dyn ImageBackend>,
    pub pick: Arc<dyn Scorer>,
    pub aesthetics: Arc<dyn Scorer>,
    pub image_seed: u64,
    pub max_in_flight: usize,
}

impl ScoringBackends {
    pub fn stub(taxonomy: &KeywordTaxonomy, seed: u64) -> Self {
        Self {
            images: Arc::new(StubImageBackend),
            pick: Arc::new(StubPreferenceScorer::new(taxonomy, seed)),
            aesthetics: Arc::new(StubAestheticScorer::new(taxonomy, seed)),
            image_seed: seed,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}
