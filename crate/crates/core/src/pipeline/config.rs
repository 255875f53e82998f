use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::backend::{BackendError, Clients};
use super::live::{LiveSettings, LiveSynthesizer, LiveTranscriber, LiveVision};
use super::mock::{CallLog, MockSettings};
use super::prompt::{PromptTemplate, DEFAULT_SYSTEM_PROMPT};
use super::query::Pipeline;
use crate::foveation::CropSpec;
use crate::geometry::FixationDepth;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    #[default]
    Mock,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionEntry {
    pub id: String,
    pub path: PathBuf,
}

/// Service and pipeline configuration (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: BackendMode,
    pub bind: String,
    pub crop: CropSpec,
    /// Depth used when projecting recorded gaze; omit for 1 m.
    pub fixation_depth_m: Option<f64>,
    pub system_prompt: Option<String>,
    pub query_template: PromptTemplate,
    pub transcript_log: Option<PathBuf>,
    pub mock: MockSettings,
    pub live: LiveSettings,
    pub sessions: Vec<SessionEntry>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: BackendMode::Mock,
            bind: "127.0.0.1:8787".into(),
            crop: CropSpec::default(),
            fixation_depth_m: None,
            system_prompt: Some(DEFAULT_SYSTEM_PROMPT.into()),
            query_template: PromptTemplate::default(),
            transcript_log: None,
            mock: MockSettings::default(),
            live: LiveSettings::default(),
            sessions: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative session and log paths resolve against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut cfg.sessions {
            if s.path.is_relative() {
                s.path = base.join(&s.path);
            }
        }
        if let Some(log) = cfg.transcript_log.as_mut().filter(|l| l.is_relative()) {
            *log = base.join(&*log);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.crop.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(d) = self.fixation_depth_m {
            if !(d > 0.0) {
                return Err(ConfigError::Invalid(format!("fixation_depth_m must be positive, got {d}")));
            }
        }
        for d in [self.mock.stt_delay_s, self.mock.lmm_delay_s, self.mock.tts_delay_s] {
            if !(d.is_finite() && d >= 0.0) {
                return Err(ConfigError::Invalid(format!("mock delays must be non-negative, got {d}")));
            }
        }
        let mut ids: Vec<&str> = self.sessions.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(ConfigError::Invalid(format!("duplicate session id {:?}", w[0])));
        }
        Ok(())
    }

    pub fn fixation_depth(&self) -> FixationDepth {
        self.fixation_depth_m.map_or_else(FixationDepth::default, FixationDepth::Finite)
    }

    /// Builds the clients for the configured mode. Mock clients record into
    /// `log`.
    pub fn clients(&self, log: CallLog) -> Result<Clients, ConfigError> {
        Ok(match self.mode {
            BackendMode::Mock => self.mock.build(log),
            BackendMode::Live => Clients {
                transcriber: Arc::new(LiveTranscriber::new(&self.live)?),
                vision: Arc::new(LiveVision::new(&self.live)?),
                synthesizer: Arc::new(LiveSynthesizer::new(&self.live)?),
            },
        })
    }

    pub fn pipeline(&self, clients: Clients) -> Pipeline {
        Pipeline {
            clients,
            spec: self.crop,
            system_prompt: self.system_prompt.clone(),
            template: self.query_template.clone(),
        }
    }
}
