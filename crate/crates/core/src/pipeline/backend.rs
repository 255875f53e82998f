use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The three externally served stages of a query, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Stt,
    Lmm,
    Tts,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Stt, Stage::Lmm, Stage::Tts];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Stt => "stt",
            Stage::Lmm => "lmm",
            Stage::Tts => "tts",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("could not decode response: {0}")]
    Decode(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
    #[error("{0}")]
    Injected(String),
}

/// A request to a multimodal model: optional system prompt, user text and
/// base64-encoded PNG images in narrow-to-wide order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionRequest {
    pub system: Option<String>,
    pub prompt: String,
    pub images_png_b64: Vec<String>,
}

/// Speech to text.
pub trait Transcriber: Send + Sync {
    fn transcribe(&self, wav: &[u8]) -> Result<String, BackendError>;
}

/// Text plus images to text.
pub trait VisionModel: Send + Sync {
    fn complete(&self, request: &VisionRequest) -> Result<String, BackendError>;
}

/// Text to speech; returns encoded audio.
pub trait Synthesizer: Send + Sync {
    fn synthesize(&self, text: &str) -> Result<Vec<u8>, BackendError>;
}

impl<T: Transcriber + ?Sized> Transcriber for Arc<T> {
    fn transcribe(&self, wav: &[u8]) -> Result<String, BackendError> {
        (**self).transcribe(wav)
    }
}

impl<T: VisionModel + ?Sized> VisionModel for Arc<T> {
    fn complete(&self, request: &VisionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<T: Synthesizer + ?Sized> Synthesizer for Arc<T> {
    fn synthesize(&self, text: &str) -> Result<Vec<u8>, BackendError> {
        (**self).synthesize(text)
    }
}

/// One client per stage.
#[derive(Clone)]
pub struct Clients {
    pub transcriber: Arc<dyn Transcriber>,
    pub vision: Arc<dyn VisionModel>,
    pub synthesizer: Arc<dyn Synthesizer>,
}

impl fmt::Debug for Clients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Clients").finish_non_exhaustive()
    }
}
