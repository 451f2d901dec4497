//! Model services behind one request/response contract.
//!
//! A backend is named by a spec string: `stub:<seed>` (deterministic
//! procedural generators, optionally `stub:<seed>?fail=<rate>` to inject
//! failures), `http:<base-url>` (external service), or `toy-dit:<seed>`
//! (the in-process toy transformer, image tasks only).

mod http;
mod stub;
mod toy;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

pub use http::{HttpBackend, HttpJudge, BACKEND_TOKEN_ENV, JUDGE_BASE_URL_ENV, JUDGE_KEY_ENV};
pub use stub::StubBackend;
pub use toy::ToyDitBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// One image from `prompt`.
    T2i,
    /// Two images from `prompt` and `instruction` sharing `element`.
    T2iPair,
    /// Isolate `element` from `images[0]`.
    Extract,
    /// Alter `element` in `images[0]`.
    Edit,
    /// Rewrite a draft image prompt.
    ComposePrompt,
    /// Rewrite a draft instruction; the keyword must survive.
    WriteInstruction,
    /// Name one element of category `element` visible in `images[0]`.
    DescribeKeyword,
    /// Refine a user instruction; `element` is `edit` or `gen`.
    Normalize,
    /// Binary verdict on `images`; `element` carries the case id.
    Judge,
    /// Produce the benchmark output for `prompt` conditioned on `images`.
    Generate,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::T2i => "t2i",
            Task::T2iPair => "t2i_pair",
            Task::Extract => "extract",
            Task::Edit => "edit",
            Task::ComposePrompt => "compose_prompt",
            Task::WriteInstruction => "write_instruction",
            Task::DescribeKeyword => "describe_keyword",
            Task::Normalize => "normalize",
            Task::Judge => "judge",
            Task::Generate => "generate",
        }
    }
}

/// Images travel as PNG bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendRequest {
    pub task: Task,
    pub prompt: String,
    pub instruction: String,
    pub element: Option<String>,
    pub images: Vec<Vec<u8>>,
    pub seed: u64,
}

impl BackendRequest {
    pub fn new(task: Task, prompt: impl Into<String>, seed: u64) -> Self {
        Self {
            task,
            prompt: prompt.into(),
            instruction: String::new(),
            element: None,
            images: Vec::new(),
            seed,
        }
    }

    pub fn instruction(mut self, s: impl Into<String>) -> Self {
        self.instruction = s.into();
        self
    }

    pub fn element(mut self, s: impl Into<String>) -> Self {
        self.element = Some(s.into());
        self
    }

    pub fn images(mut self, images: Vec<Vec<u8>>) -> Self {
        self.images = images;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BackendResponse {
    pub images: Vec<Vec<u8>>,
    pub text: Option<String>,
    /// Service-reported latency; measured wall time is used when absent.
    pub latency_ms: Option<u64>,
}

impl BackendResponse {
    pub fn text(s: impl Into<String>) -> Self {
        Self {
            text: Some(s.into()),
            latency_ms: Some(0),
            ..Default::default()
        }
    }

    pub fn images(images: Vec<Vec<u8>>) -> Self {
        Self {
            images,
            latency_ms: Some(0),
            ..Default::default()
        }
    }

    pub fn expect_images(self, backend: &str, n: usize) -> Result<Vec<Vec<u8>>> {
        if self.images.len() != n {
            return Err(PipelineError::backend(
                backend,
                format!("expected {n} image(s), got {}", self.images.len()),
            ));
        }
        Ok(self.images)
    }

    pub fn expect_text(self, backend: &str) -> Result<String> {
        match self.text {
            Some(t) if !t.trim().is_empty() => Ok(t),
            _ => Err(PipelineError::backend(backend, "response carried no text")),
        }
    }
}

pub trait Backend: Send + Sync {
    /// The descriptor string this backend was built from.
    fn id(&self) -> &str;
    fn call(&self, request: &BackendRequest) -> Result<BackendResponse>;
}

/// Builds a backend from its spec string.
pub fn parse_backend(spec: &str) -> Result<Arc<dyn Backend>> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| PipelineError::Config(format!("backend spec `{spec}` lacks a `kind:` prefix")))?;
    match kind {
        "stub" => Ok(Arc::new(StubBackend::parse(spec, rest)?)),
        "http" => Ok(Arc::new(HttpBackend::new(spec, rest)?)),
        "toy-dit" => Ok(Arc::new(ToyDitBackend::parse(spec, rest)?)),
        other => Err(PipelineError::Config(format!(
            "unknown backend kind `{other}` in `{spec}` (expected stub|http|toy-dit)"
        ))),
    }
}

/// Spec strings for every pipeline role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrySpec {
    pub t2i: String,
    pub extractor: String,
    pub editor: String,
    pub llm: String,
    pub vlm: String,
    pub real_image_store: Option<PathBuf>,
}

impl Default for RegistrySpec {
    fn default() -> Self {
        Self {
            t2i: "stub:1".into(),
            extractor: "stub:2".into(),
            editor: "stub:3".into(),
            llm: "stub:4".into(),
            vlm: "stub:5".into(),
            real_image_store: None,
        }
    }
}

#[derive(Clone)]
pub struct BackendRegistry {
    pub t2i: Arc<dyn Backend>,
    pub extractor: Arc<dyn Backend>,
    pub editor: Arc<dyn Backend>,
    pub llm: Arc<dyn Backend>,
    pub vlm: Arc<dyn Backend>,
    pub real_image_store: Option<PathBuf>,
}

impl BackendRegistry {
    /// Parses every role, reporting all bad specs together.
    pub fn build(spec: &RegistrySpec) -> Result<Self> {
        let roles = [
            ("t2i", &spec.t2i),
            ("extractor", &spec.extractor),
            ("editor", &spec.editor),
            ("llm", &spec.llm),
            ("vlm", &spec.vlm),
        ];
        let mut built = Vec::new();
        let mut errors = Vec::new();
        for (role, s) in roles {
            match parse_backend(s) {
                Ok(b) => built.push(b),
                Err(e) => errors.push(format!("{role}: {e}")),
            }
        }
        if !errors.is_empty() {
            return Err(PipelineError::Config(errors.join("; ")));
        }
        let mut it = built.into_iter();
        let mut next = || it.next().expect("five roles");
        Ok(Self {
            t2i: next(),
            extractor: next(),
            editor: next(),
            llm: next(),
            vlm: next(),
            real_image_store: spec.real_image_store.clone(),
        })
    }

    pub fn ids(&self) -> [(&'static str, &str); 5] {
        [
            ("t2i", self.t2i.id()),
            ("extractor", self.extractor.id()),
            ("editor", self.editor.id()),
            ("llm", self.llm.id()),
            ("vlm", self.vlm.id()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parsing() {
        assert_eq!(parse_backend("stub:7").unwrap().id(), "stub:7");
        assert!(parse_backend("stub:x").is_err());
        assert!(parse_backend("stub:1?fail=2").is_err());
        assert!(parse_backend("grpc:foo").is_err());
        assert!(parse_backend("nocolon").is_err());
        assert_eq!(parse_backend("toy-dit:3").unwrap().id(), "toy-dit:3");
        assert!(parse_backend("http:localhost:1").is_err());
        assert!(parse_backend("http:http://127.0.0.1:9").is_ok());
    }

    #[test]
    fn registry_reports_all_bad_roles() {
        let spec = RegistrySpec {
            llm: "bad".into(),
            vlm: "stub:q".into(),
            ..Default::default()
        };
        let msg = BackendRegistry::build(&spec).err().unwrap().to_string();
        assert!(msg.contains("llm:") && msg.contains("vlm:"), "{msg}");
    }
}
