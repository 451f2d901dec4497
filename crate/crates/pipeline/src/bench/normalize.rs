use serde::{Deserialize, Serialize};

use super::cases::BenchTask;
use super::MAX_ATTEMPTS;
use crate::backend::{Backend, BackendRequest, Task};
use crate::error::{PipelineError, Result};

/// Words a generation-mode description must never contain.
pub const IMPERATIVE_VERBS: &[&str] = &[
    "make", "replace", "change", "turn", "add", "remove", "put", "give", "let", "use", "generate", "create",
    "transform", "swap", "apply", "keep", "draw", "render", "show",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedInstruction {
    pub raw: String,
    pub normalized: String,
    pub mode: BenchTask,
}

fn words(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase)
}

/// Structural contract: edit output keeps the raw text verbatim and adds
/// bracketed descriptions; gen output is one sentence free of imperatives.
pub fn check_normalized(raw: &str, normalized: &str, mode: BenchTask) -> std::result::Result<(), String> {
    match mode {
        BenchTask::Edit => {
            if !normalized.starts_with(raw) {
                return Err("edit normalization must begin with the raw instruction".into());
            }
            let rest = &normalized[raw.len()..];
            if !(rest.contains('[') && rest.contains(']')) {
                return Err("edit normalization must append bracketed descriptions".into());
            }
        }
        BenchTask::Gen => {
            let t = normalized.trim();
            let body = t.strip_suffix(['.', '!', '?']).unwrap_or(t);
            if body.is_empty() || body.contains(['.', '!', '?', '\n']) {
                return Err("generation normalization must be a single sentence".into());
            }
            if let Some(w) = words(body).find(|w| IMPERATIVE_VERBS.contains(&w.as_str())) {
                return Err(format!("generation normalization contains the imperative `{w}`"));
            }
        }
    }
    Ok(())
}

/// Asks the VLM for the refined instruction, retrying bad or failed replies.
pub fn normalize_instruction(raw: &str, mode: BenchTask, images: &[Vec<u8>], vlm: &dyn Backend) -> Result<NormalizedInstruction> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Err(PipelineError::Input("instruction is empty".into()));
    }
    let req = BackendRequest::new(Task::Normalize, raw, 0)
        .element(mode.as_str())
        .images(images.to_vec());
    let mut last = String::new();
    for attempt in 1..=MAX_ATTEMPTS {
        match vlm.call(&req).and_then(|r| r.expect_text(vlm.id())) {
            Ok(text) => match check_normalized(raw, text.trim(), mode) {
                Ok(()) => {
                    return Ok(NormalizedInstruction {
                        raw: raw.to_string(),
                        normalized: text.trim().to_string(),
                        mode,
                    })
                }
                Err(e) => last = e,
            },
            Err(e) => last = e.to_string(),
        }
        log::debug!("normalization attempt {attempt} failed: {last}");
    }
    Err(PipelineError::backend(
        vlm.id(),
        format!("normalization failed after {MAX_ATTEMPTS} attempts: {last}"),
    ))
}
