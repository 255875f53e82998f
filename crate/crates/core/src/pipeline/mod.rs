//! Query orchestration: capture at the trigger, crop around the gaze point,
//! then speech-to-text, multimodal model and speech synthesis, each timed.

mod backend;
mod config;
pub mod live;
pub mod mock;
mod prompt;
mod query;

pub use backend::{BackendError, Clients, Stage, Synthesizer, Transcriber, VisionModel, VisionRequest};
pub use config::{BackendMode, ConfigError, PipelineConfig, SessionEntry};
pub use mock::{CallLog, CallRecord, Fault, MockAnswer, MockSettings};
pub use prompt::{
    classify_query, classify_with_template, format_labels, parse_label, ClassifyError, ClassifyOutcome, PromptTemplate,
    TemplateError, DEFAULT_CLASSIFY_TEMPLATE, DEFAULT_QUERY_TEMPLATE, DEFAULT_SYSTEM_PROMPT,
};
pub use query::{
    read_transcripts, run_query, EventBuffer, EventSink, GazeSource, InputKind, NoEvents, Pipeline, QueryError,
    QueryRequest, QueryTranscript, Question, StageEvent, TranscriptLog,
};
