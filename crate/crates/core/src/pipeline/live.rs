//! HTTP adapters for hosted speech and multimodal services: an OpenAI-style
//! transcription endpoint, an OpenAI-style chat-completions endpoint with
//! inline base64 images, and an ElevenLabs-style text-to-speech endpoint.
//!
//! None of these run in the test suite; they need network access and keys.

use std::time::Duration;

use reqwest::blocking::{multipart, Client, Response};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backend::{BackendError, Synthesizer, Transcriber, VisionModel, VisionRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveSettings {
    pub stt_url: String,
    pub stt_model: String,
    pub lmm_url: String,
    pub lmm_model: String,
    pub lmm_max_tokens: u32,
    pub tts_url: String,
    pub tts_model: String,
    pub tts_voice_id: String,
    /// Environment variable holding the key for the speech and model endpoints.
    pub openai_key_env: String,
    /// Environment variable holding the key for the synthesis endpoint.
    pub tts_key_env: String,
    pub timeout_s: f64,
}

impl Default for LiveSettings {
    fn default() -> Self {
        Self {
            stt_url: "https://api.openai.com/v1/audio/transcriptions".into(),
            stt_model: "whisper-1".into(),
            lmm_url: "https://api.openai.com/v1/chat/completions".into(),
            lmm_model: "gpt-4o".into(),
            lmm_max_tokens: 300,
            tts_url: "https://api.elevenlabs.io/v1/text-to-speech".into(),
            tts_model: "eleven_turbo_v2".into(),
            tts_voice_id: "21m00Tcm4TlvDq8ikWAM".into(),
            openai_key_env: "OPENAI_API_KEY".into(),
            tts_key_env: "ELEVENLABS_API_KEY".into(),
            timeout_s: 30.0,
        }
    }
}

fn read_key(var: &str) -> Result<String, BackendError> {
    std::env::var(var).map_err(|_| BackendError::Config(format!("environment variable {var} is not set")))
}

fn http_client(timeout_s: f64) -> Result<Client, BackendError> {
    Client::builder()
        .timeout(Duration::from_secs_f64(timeout_s.max(0.001)))
        .build()
        .map_err(|e| BackendError::Config(e.to_string()))
}

fn map_send(err: reqwest::Error, timeout_s: f64) -> BackendError {
    if err.is_timeout() {
        BackendError::Timeout(Duration::from_secs_f64(timeout_s))
    } else {
        BackendError::Transport(err.to_string())
    }
}

fn check(resp: Response) -> Result<Response, BackendError> {
    let status = resp.status();
    if status.is_success() {
        Ok(resp)
    } else {
        let body = resp.text().unwrap_or_default();
        Err(BackendError::Http { status: status.as_u16(), body })
    }
}

pub struct LiveTranscriber {
    client: Client,
    url: String,
    model: String,
    key: String,
    timeout_s: f64,
}

impl LiveTranscriber {
    pub fn new(settings: &LiveSettings) -> Result<Self, BackendError> {
        Ok(Self {
            client: http_client(settings.timeout_s)?,
            url: settings.stt_url.clone(),
            model: settings.stt_model.clone(),
            key: read_key(&settings.openai_key_env)?,
            timeout_s: settings.timeout_s,
        })
    }
}

impl Transcriber for LiveTranscriber {
    fn transcribe(&self, wav: &[u8]) -> Result<String, BackendError> {
        let part = multipart::Part::bytes(wav.to_vec())
            .file_name("question.wav")
            .mime_str("audio/wav")
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let form = multipart::Form::new().text("model", self.model.clone()).part("file", part);
        let resp = self
            .client
            .post(&self.url)
            .bearer_auth(&self.key)
            .multipart(form)
            .send()
            .map_err(|e| map_send(e, self.timeout_s))?;
        let body: Value = check(resp)?.json().map_err(|e| BackendError::Decode(e.to_string()))?;
        body["text"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| BackendError::Decode("response has no `text` field".into()))
    }
}

pub struct LiveVision {
    client: Client,
    url: String,
    model: String,
    max_tokens: u32,
    key: String,
    timeout_s: f64,
}

impl LiveVision {
    pub fn new(settings: &LiveSettings) -> Result<Self, BackendError> {
        Ok(Self {
            client: http_client(settings.timeout_s)?,
            url: settings.lmm_url.clone(),
            model: settings.lmm_model.clone(),
            max_tokens: settings.lmm_max_tokens,
            key: read_key(&settings.openai_key_env)?,
            timeout_s: settings.timeout_s,
        })
    }
}

/// Chat-completions body with the images attached as data URLs.
pub fn chat_body(model: &str, max_tokens: u32, request: &VisionRequest) -> Value {
    let mut content = vec![json!({"type": "text", "text": request.prompt})];
    content.extend(
        request
            .images_png_b64
            .iter()
            .map(|b64| json!({"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{b64}")}})),
    );
    let mut messages = Vec::new();
    if let Some(system) = &request.system {
        messages.push(json!({"role": "system", "content": system}));
    }
    messages.push(json!({"role": "user", "content": content}));
    json!({"model": model, "max_tokens": max_tokens, "messages": messages})
}

impl VisionModel for LiveVision {
    fn complete(&self, request: &VisionRequest) -> Result<String, BackendError> {
        let resp = self
            .client
            .post(&self.url)
            .bearer_auth(&self.key)
            .json(&chat_body(&self.model, self.max_tokens, request))
            .send()
            .map_err(|e| map_send(e, self.timeout_s))?;
        let body: Value = check(resp)?.json().map_err(|e| BackendError::Decode(e.to_string()))?;
        body["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| BackendError::Decode("response has no choices[0].message.content".into()))
    }
}

pub struct LiveSynthesizer {
    client: Client,
    url: String,
    model: String,
    key: String,
    timeout_s: f64,
}

impl LiveSynthesizer {
    pub fn new(settings: &LiveSettings) -> Result<Self, BackendError> {
        Ok(Self {
            client: http_client(settings.timeout_s)?,
            url: format!("{}/{}", settings.tts_url.trim_end_matches('/'), settings.tts_voice_id),
            model: settings.tts_model.clone(),
            key: read_key(&settings.tts_key_env)?,
            timeout_s: settings.timeout_s,
        })
    }
}

impl Synthesizer for LiveSynthesizer {
    fn synthesize(&self, text: &str) -> Result<Vec<u8>, BackendError> {
        let resp = self
            .client
            .post(&self.url)
            .header("xi-api-key", &self.key)
            .json(&json!({"text": text, "model_id": self.model}))
            .send()
            .map_err(|e| map_send(e, self.timeout_s))?;
        let bytes = check(resp)?.bytes().map_err(|e| BackendError::Decode(e.to_string()))?;
        Ok(bytes.to_vec())
    }
}
