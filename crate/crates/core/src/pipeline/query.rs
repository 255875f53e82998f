use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::backend::{BackendError, Clients, Stage, VisionRequest};
use super::prompt::{PromptTemplate, TemplateError, DEFAULT_SYSTEM_PROMPT};
use crate::capture::Session;
use crate::error::{CaptureError, FoveationError, GeometryError};
use crate::foveation::{multiscale_crop, CropLevelMeta, CropSpec, MultiscaleCrop};
use crate::geometry::{project_gaze, FixationDepth, PixelPoint};

/// The question, typed or spoken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Question {
    Text(String),
    /// WAV bytes.
    Audio(Vec<u8>),
}

/// Where the crop is centered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GazeSource {
    /// Project the recorded gaze sample nearest the trigger.
    Projected(FixationDepth),
    /// A pixel chosen by the caller (e.g. a click in the companion UI).
    Pixel(PixelPoint),
}

impl Default for GazeSource {
    fn default() -> Self {
        GazeSource::Projected(FixationDepth::default())
    }
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Foveation(#[from] FoveationError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("query cancelled before dispatch")]
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Text,
    Audio,
}

/// Record of one end-to-end query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTranscript {
    pub session_id: String,
    /// Position of this query in its session, from 0.
    pub seq: u64,
    pub trigger_t: f64,
    pub frame_index: usize,
    pub gaze_t: Option<f64>,
    pub gaze_px: PixelPoint,
    pub input: InputKind,
    pub question_text: Option<String>,
    pub crops: Vec<CropLevelMeta>,
    /// Where to fetch the crop images from the local service.
    pub crops_ref: String,
    pub response_text: Option<String>,
    pub audio_in_bytes: Option<usize>,
    /// Base64 synthesized response audio.
    pub audio_out_b64: Option<String>,
    /// Seconds per stage; always exactly the keys stt, lmm and tts. Skipped
    /// or never-reached stages are 0.
    pub stage_latencies: BTreeMap<Stage, f64>,
    /// Sum of `stage_latencies`.
    pub total_latency: f64,
    /// Wall time of the whole query minus `total_latency` (capture, crop,
    /// encoding and bookkeeping).
    pub overhead_s: f64,
    pub failed_at: Option<Stage>,
    pub error: Option<String>,
    /// How model answers are matched to labels, recorded because it is a
    /// modelling choice rather than part of the model output.
    pub label_parsing: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum StageEvent {
    StageStart { session_id: String, seq: u64, stage: Stage },
    StageEnd { session_id: String, seq: u64, stage: Stage, latency_s: f64, ok: bool },
    QueryDone { session_id: String, seq: u64, total_latency: f64, failed_at: Option<Stage> },
}

/// Receives progress events while a query runs.
pub trait EventSink: Send + Sync {
    fn emit(&self, event: StageEvent);
}

pub struct NoEvents;

impl EventSink for NoEvents {
    fn emit(&self, _: StageEvent) {}
}

impl<F: Fn(StageEvent) + Send + Sync> EventSink for F {
    fn emit(&self, event: StageEvent) {
        self(event)
    }
}

/// Collects events in memory.
#[derive(Debug, Default, Clone)]
pub struct EventBuffer(pub Arc<Mutex<Vec<StageEvent>>>);

impl EventSink for EventBuffer {
    fn emit(&self, event: StageEvent) {
        self.0.lock().expect("event buffer poisoned").push(event);
    }
}

impl EventBuffer {
    pub fn events(&self) -> Vec<StageEvent> {
        self.0.lock().expect("event buffer poisoned").clone()
    }
}

#[derive(Debug, Clone)]
pub struct QueryRequest {
    pub session_id: String,
    pub seq: u64,
    pub trigger_t: f64,
    pub question: Question,
    pub gaze: GazeSource,
}

/// Clients plus the fixed parts of every query.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub clients: Clients,
    pub spec: CropSpec,
    pub system_prompt: Option<String>,
    pub template: PromptTemplate,
}

impl Pipeline {
    pub fn new(clients: Clients, spec: CropSpec) -> Self {
        Self { clients, spec, system_prompt: Some(DEFAULT_SYSTEM_PROMPT.into()), template: PromptTemplate::default() }
    }

    /// Capture at the trigger, crop, then speech-to-text, model and
    /// speech synthesis, timing each client call. Problems before any client
    /// is called are errors; a failing client yields a transcript marked with
    /// the failed stage and no later stage is called.
    pub fn run(
        &self,
        session: &Session,
        req: &QueryRequest,
        events: &dyn EventSink,
        cancel: Option<&AtomicBool>,
    ) -> Result<(QueryTranscript, MultiscaleCrop), QueryError> {
        let started = Instant::now();
        let cap = session.sample_at(req.trigger_t)?;
        let (gaze_px, gaze_t) = match req.gaze {
            GazeSource::Projected(depth) => (project_gaze(&session.camera, &cap.gaze, depth)?, Some(cap.gaze.t)),
            GazeSource::Pixel(p) => (p, None),
        };
        let crops = multiscale_crop(&cap.frame.pixels, &gaze_px, &session.camera, &self.spec)?;
        let images: Vec<String> = crops.levels.iter().map(|l| l.base64_png()).collect();

        let mut tr = QueryTranscript {
            session_id: req.session_id.clone(),
            seq: req.seq,
            trigger_t: req.trigger_t,
            frame_index: cap.frame_index,
            gaze_t,
            gaze_px,
            input: match req.question {
                Question::Text(_) => InputKind::Text,
                Question::Audio(_) => InputKind::Audio,
            },
            question_text: None,
            crops: crops.plan.levels.clone(),
            crops_ref: format!("/crops?frame_id={}&u={}&v={}", cap.frame_index, gaze_px.u, gaze_px.v),
            response_text: None,
            audio_in_bytes: None,
            audio_out_b64: None,
            stage_latencies: Stage::ALL.iter().map(|s| (*s, 0.0)).collect(),
            total_latency: 0.0,
            overhead_s: 0.0,
            failed_at: None,
            error: None,
            label_parsing: "case-insensitive longest substring match".into(),
        };

        let cancelled = || cancel.is_some_and(|c| c.load(Ordering::SeqCst));
        if cancelled() {
            return Err(QueryError::Cancelled);
        }

        let timed = |stage: Stage, tr: &mut QueryTranscript, f: &mut dyn FnMut() -> Result<(), BackendError>| {
            events.emit(StageEvent::StageStart { session_id: tr.session_id.clone(), seq: tr.seq, stage });
            let t0 = Instant::now();
            let res = f();
            let dt = t0.elapsed().as_secs_f64();
            tr.stage_latencies.insert(stage, dt);
            events.emit(StageEvent::StageEnd {
                session_id: tr.session_id.clone(),
                seq: tr.seq,
                stage,
                latency_s: dt,
                ok: res.is_ok(),
            });
            if let Err(e) = &res {
                tr.failed_at = Some(stage);
                tr.error = Some(e.to_string());
            }
            res.is_ok()
        };

        // Speech to text (skipped for typed questions).
        let mut question = String::new();
        let ok = match &req.question {
            Question::Text(t) => {
                question = t.clone();
                true
            }
            Question::Audio(wav) => {
                tr.audio_in_bytes = Some(wav.len());
                let client = &self.clients.transcriber;
                timed(Stage::Stt, &mut tr, &mut || {
                    question = client.transcribe(wav)?;
                    Ok(())
                })
            }
        };
        if ok {
            tr.question_text = Some(question.clone());
        }

        // Multimodal model.
        let mut response = String::new();
        let ok = ok && !cancelled() && {
            let request = VisionRequest {
                system: self.system_prompt.clone(),
                prompt: self.template.render(Some(&question), None)?,
                images_png_b64: images,
            };
            let client = &self.clients.vision;
            timed(Stage::Lmm, &mut tr, &mut || {
                response = client.complete(&request)?;
                Ok(())
            })
        };
        if ok {
            tr.response_text = Some(response.clone());
        }

        // Speech synthesis.
        let mut audio = Vec::new();
        let ok = ok && !cancelled() && {
            let client = &self.clients.synthesizer;
            timed(Stage::Tts, &mut tr, &mut || {
                audio = client.synthesize(&response)?;
                Ok(())
            })
        };
        if ok {
            tr.audio_out_b64 = Some(base64::engine::general_purpose::STANDARD.encode(&audio));
        } else if tr.failed_at.is_none() {
            tr.error = Some("cancelled".into());
        }

        tr.total_latency = tr.stage_latencies.values().sum();
        tr.overhead_s = (started.elapsed().as_secs_f64() - tr.total_latency).max(0.0);
        events.emit(StageEvent::QueryDone {
            session_id: tr.session_id.clone(),
            seq: tr.seq,
            total_latency: tr.total_latency,
            failed_at: tr.failed_at,
        });
        Ok((tr, crops))
    }
}

/// One query with default prompts, projected gaze at the default depth and
/// no event reporting.
pub fn run_query(
    session: &Session,
    trigger_t: f64,
    question: Question,
    spec: &CropSpec,
    clients: &Clients,
) -> Result<QueryTranscript, QueryError> {
    let req = QueryRequest { session_id: "default".into(), seq: 0, trigger_t, question, gaze: GazeSource::default() };
    Pipeline::new(clients.clone(), *spec).run(session, &req, &NoEvents, None).map(|(t, _)| t)
}

/// Append-only JSON-lines transcript file.
#[derive(Debug)]
pub struct TranscriptLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl TranscriptLog {
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, t: &QueryTranscript) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(t).map_err(std::io::Error::other)?;
        line.push(b'\n');
        let mut f = self.file.lock().expect("transcript log poisoned");
        f.write_all(&line)?;
        f.flush()
    }
}

/// Reads every transcript in a JSON-lines file as raw JSON values.
pub fn read_transcripts(path: impl AsRef<Path>) -> std::io::Result<Vec<serde_json::Value>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}
