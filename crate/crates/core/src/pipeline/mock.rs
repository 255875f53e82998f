//! Offline backends with injectable delays, scripted answers and failures.
//! All three share a [`CallLog`] so tests can check which stages were
//! actually dispatched.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::backend::{BackendError, Clients, Stage, Synthesizer, Transcriber, VisionModel, VisionRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub stage: Stage,
    /// Seconds since the log was created.
    pub at: f64,
    pub request_summary: String,
}

#[derive(Debug, Clone)]
pub struct CallLog {
    origin: Instant,
    records: Arc<Mutex<Vec<CallRecord>>>,
}

impl Default for CallLog {
    fn default() -> Self {
        Self { origin: Instant::now(), records: Arc::default() }
    }
}

impl CallLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, stage: Stage, request_summary: String) {
        let at = self.origin.elapsed().as_secs_f64();
        self.records.lock().expect("call log poisoned").push(CallRecord { stage, at, request_summary });
    }

    pub fn records(&self) -> Vec<CallRecord> {
        self.records.lock().expect("call log poisoned").clone()
    }

    pub fn stages(&self) -> Vec<Stage> {
        self.records().into_iter().map(|r| r.stage).collect()
    }

    pub fn count(&self, stage: Stage) -> usize {
        self.records().iter().filter(|r| r.stage == stage).count()
    }
}

/// What a mock stage does when called.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Fault {
    #[default]
    None,
    /// Sleep for `after_s`, then report a timeout.
    Timeout { after_s: f64 },
    /// Fail immediately (after the delay) with this message.
    Error { message: String },
}

#[derive(Debug, Clone)]
struct StageBehavior {
    delay: Duration,
    fault: Fault,
    log: CallLog,
}

impl StageBehavior {
    fn run(&self, stage: Stage, summary: String) -> Result<(), BackendError> {
        self.log.push(stage, summary);
        match &self.fault {
            Fault::None => {
                thread::sleep(self.delay);
                Ok(())
            }
            Fault::Timeout { after_s } => {
                let after = Duration::from_secs_f64(after_s.max(0.0));
                thread::sleep(after);
                Err(BackendError::Timeout(after))
            }
            Fault::Error { message } => {
                thread::sleep(self.delay);
                Err(BackendError::Injected(message.clone()))
            }
        }
    }
}

fn secs(s: f64) -> Duration {
    Duration::from_secs_f64(if s.is_finite() { s.max(0.0) } else { 0.0 })
}

#[derive(Debug, Clone)]
pub struct MockTranscriber {
    behavior: StageBehavior,
    pub transcript: String,
}

impl MockTranscriber {
    pub fn new(delay_s: f64, transcript: impl Into<String>, log: CallLog) -> Self {
        Self {
            behavior: StageBehavior { delay: secs(delay_s), fault: Fault::None, log },
            transcript: transcript.into(),
        }
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.behavior.fault = fault;
        self
    }
}

impl Transcriber for MockTranscriber {
    fn transcribe(&self, wav: &[u8]) -> Result<String, BackendError> {
        self.behavior.run(Stage::Stt, format!("{} bytes of audio", wav.len()))?;
        Ok(self.transcript.clone())
    }
}

/// How the mock model picks its answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum MockAnswer {
    Fixed(String),
    /// Cycles through the list, one entry per call.
    Script(Vec<String>),
    /// Repeats the prompt back, prefixed.
    Echo,
}

#[derive(Debug)]
pub struct MockVision {
    behavior: StageBehavior,
    answer: MockAnswer,
    calls: AtomicUsize,
}

impl MockVision {
    pub fn new(delay_s: f64, answer: MockAnswer, log: CallLog) -> Self {
        Self {
            behavior: StageBehavior { delay: secs(delay_s), fault: Fault::None, log },
            answer,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.behavior.fault = fault;
        self
    }
}

impl VisionModel for MockVision {
    fn complete(&self, request: &VisionRequest) -> Result<String, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        self.behavior.run(
            Stage::Lmm,
            format!("{} images; prompt {} chars", request.images_png_b64.len(), request.prompt.len()),
        )?;
        Ok(match &self.answer {
            MockAnswer::Fixed(s) => s.clone(),
            MockAnswer::Script(list) if list.is_empty() => String::new(),
            MockAnswer::Script(list) => list[n % list.len()].clone(),
            MockAnswer::Echo => format!("You asked: {}", request.prompt),
        })
    }
}

#[derive(Debug, Clone)]
pub struct MockSynthesizer {
    behavior: StageBehavior,
}

impl MockSynthesizer {
    pub fn new(delay_s: f64, log: CallLog) -> Self {
        Self { behavior: StageBehavior { delay: secs(delay_s), fault: Fault::None, log } }
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.behavior.fault = fault;
        self
    }
}

impl Synthesizer for MockSynthesizer {
    fn synthesize(&self, text: &str) -> Result<Vec<u8>, BackendError> {
        self.behavior.run(Stage::Tts, format!("{} chars", text.len()))?;
        Ok(silent_wav(text))
    }
}

/// A mono 16 kHz WAV of silence whose length scales with the text (60 ms
/// per character, capped at 10 s). Deterministic in `text`.
pub fn silent_wav(text: &str) -> Vec<u8> {
    const RATE: u32 = 16_000;
    let samples = (text.chars().count() as u32 * RATE * 6 / 100).min(RATE * 10);
    let data_len = samples * 2;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&RATE.to_le_bytes());
    out.extend_from_slice(&(RATE * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    out.resize(44 + data_len as usize, 0);
    out
}

/// Delays, answers and faults for a full mock backend set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSettings {
    pub stt_delay_s: f64,
    pub lmm_delay_s: f64,
    pub tts_delay_s: f64,
    pub transcript: String,
    pub answer: MockAnswer,
    pub stt_fault: Fault,
    pub lmm_fault: Fault,
    pub tts_fault: Fault,
}

impl Default for MockSettings {
    fn default() -> Self {
        Self {
            stt_delay_s: 0.0,
            lmm_delay_s: 0.0,
            tts_delay_s: 0.0,
            transcript: "What am I looking at?".into(),
            answer: MockAnswer::Fixed("That looks like a dog.".into()),
            stt_fault: Fault::None,
            lmm_fault: Fault::None,
            tts_fault: Fault::None,
        }
    }
}

impl MockSettings {
    /// The latency decomposition measured for the prototype:
    /// 0.9 s speech-to-text, 4.0 s model, 0.3 s speech synthesis.
    pub fn prototype_latencies() -> Self {
        Self { stt_delay_s: 0.9, lmm_delay_s: 4.0, tts_delay_s: 0.3, ..Self::default() }
    }

    pub fn build(&self, log: CallLog) -> Clients {
        Clients {
            transcriber: Arc::new(
                MockTranscriber::new(self.stt_delay_s, self.transcript.clone(), log.clone())
                    .with_fault(self.stt_fault.clone()),
            ),
            vision: Arc::new(
                MockVision::new(self.lmm_delay_s, self.answer.clone(), log.clone()).with_fault(self.lmm_fault.clone()),
            ),
            synthesizer: Arc::new(MockSynthesizer::new(self.tts_delay_s, log).with_fault(self.tts_fault.clone())),
        }
    }
}
