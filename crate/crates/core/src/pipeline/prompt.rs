use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::backend::{BackendError, VisionModel, VisionRequest};
use crate::foveation::MultiscaleCrop;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TemplateError {
    #[error("placeholder {{{0}}} has no value")]
    Unresolved(String),
    #[error("unknown placeholder {{{0}}}")]
    Unknown(String),
    #[error("unterminated placeholder starting at byte {0}")]
    Unterminated(usize),
}

/// Prompt text with `{question}` and `{labels}` placeholders. `{{` and `}}`
/// are literal braces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptTemplate(pub String);

pub const DEFAULT_SYSTEM_PROMPT: &str = "You are a wearable assistant. The user is wearing glasses with an eye \
tracker and a world-facing camera. The images are crops of the camera frame centered on where the user is \
looking, ordered from the narrowest to the widest field of view. Answer the question about the object at the \
center of the images briefly, in one or two spoken sentences.";

pub const DEFAULT_QUERY_TEMPLATE: &str = "{question}";

pub const DEFAULT_CLASSIFY_TEMPLATE: &str = "Please identify the dog breeds in the following images: the images \
show the same dog at increasing fields of view, centered on it. Choose exactly one breed from this list and \
answer with the breed name only.\n{labels}";

impl Default for PromptTemplate {
    fn default() -> Self {
        Self(DEFAULT_QUERY_TEMPLATE.into())
    }
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Self {
        Self(text.into())
    }

    pub fn classification() -> Self {
        Self(DEFAULT_CLASSIFY_TEMPLATE.into())
    }

    /// Substitutes every placeholder. A placeholder whose value is `None` is
    /// an error, so nothing half-rendered is ever dispatched.
    pub fn render(&self, question: Option<&str>, labels: Option<&[String]>) -> Result<String, TemplateError> {
        let src = &self.0;
        let mut out = String::with_capacity(src.len());
        let mut rest = src.as_str();
        while let Some(i) = rest.find(['{', '}']) {
            out.push_str(&rest[..i]);
            let tail = &rest[i..];
            if tail.starts_with("{{") || tail.starts_with("}}") {
                out.push_str(&tail[..1]);
                rest = &tail[2..];
                continue;
            }
            if let Some(after) = tail.strip_prefix('}') {
                out.push('}');
                rest = after;
                continue;
            }
            let end = tail.find('}').ok_or(TemplateError::Unterminated(src.len() - tail.len()))?;
            let name = &tail[1..end];
            match name {
                "question" => out.push_str(question.ok_or_else(|| TemplateError::Unresolved(name.into()))?),
                "labels" => {
                    let labels = labels.ok_or_else(|| TemplateError::Unresolved(name.into()))?;
                    out.push_str(&format_labels(labels));
                }
                other => return Err(TemplateError::Unknown(other.into())),
            }
            rest = &tail[end + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// One label per line, numbered from 1.
pub fn format_labels(labels: &[String]) -> String {
    labels.iter().enumerate().map(|(i, l)| format!("{}. {l}", i + 1)).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifyError {
    #[error("no candidate labels")]
    NoLabels,
    #[error("response matches {0:?} equally well")]
    Ambiguous(Vec<String>),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ClassifyOutcome {
    Label { label: String },
    NoMatch { response: String },
}

/// Maps a free-text answer onto one label: the longest label that occurs in
/// the response, ignoring case. Two different labels tied for longest is
/// ambiguous; no label at all is `Ok(None)`.
pub fn parse_label(response: &str, labels: &[String]) -> Result<Option<String>, ClassifyError> {
    let hay = response.to_lowercase();
    let mut best: Vec<&String> = Vec::new();
    let mut best_len = 0;
    for l in labels {
        let needle = l.trim().to_lowercase();
        if needle.is_empty() || !hay.contains(&needle) {
            continue;
        }
        let len = needle.chars().count();
        if len > best_len {
            best_len = len;
            best.clear();
        }
        if len == best_len && !best.iter().any(|b| b.trim().to_lowercase() == needle) {
            best.push(l);
        }
    }
    match best.len() {
        0 => Ok(None),
        1 => Ok(Some(best[0].clone())),
        _ => Err(ClassifyError::Ambiguous(best.into_iter().cloned().collect())),
    }
}

/// Asks the model to pick one of `labels` for the crop pyramid.
pub fn classify_query(
    crops: &MultiscaleCrop,
    labels: &[String],
    client: &dyn VisionModel,
) -> Result<ClassifyOutcome, ClassifyError> {
    classify_with_template(crops, labels, client, &PromptTemplate::classification())
}

pub fn classify_with_template(
    crops: &MultiscaleCrop,
    labels: &[String],
    client: &dyn VisionModel,
    template: &PromptTemplate,
) -> Result<ClassifyOutcome, ClassifyError> {
    if labels.is_empty() {
        return Err(ClassifyError::NoLabels);
    }
    let prompt = template.render(None, Some(labels))?;
    let request =
        VisionRequest { system: None, prompt, images_png_b64: crops.levels.iter().map(|l| l.base64_png()).collect() };
    let response = client.complete(&request)?;
    Ok(match parse_label(&response, labels)? {
        Some(label) => ClassifyOutcome::Label { label },
        None => ClassifyOutcome::NoMatch { response },
    })
}
