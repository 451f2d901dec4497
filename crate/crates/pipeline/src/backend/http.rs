use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendRequest, BackendResponse, Task};
use crate::error::{PipelineError, Result};

pub const BACKEND_TOKEN_ENV: &str = "REFMIX_BACKEND_TOKEN";
pub const JUDGE_BASE_URL_ENV: &str = "JUDGE_BASE_URL";
pub const JUDGE_KEY_ENV: &str = "JUDGE_API_KEY";

const TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Serialize)]
struct WireRequest<'a> {
    task: Task,
    prompt: &'a str,
    #[serde(skip_serializing_if = "str::is_empty")]
    instruction: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    element: Option<&'a str>,
    images: Vec<String>,
    seed: u64,
}

#[derive(Deserialize)]
struct WireResponse {
    status: String,
    #[serde(default)]
    images: Vec<String>,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Serialize)]
struct JudgeWireRequest<'a> {
    prompt: &'a str,
    images: Vec<String>,
}

#[derive(Deserialize)]
struct JudgeWireResponse {
    text: String,
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(TIMEOUT))
        .http_status_as_error(false)
        .build()
        .into()
}

fn encode_images(images: &[Vec<u8>]) -> Vec<String> {
    images.iter().map(|b| STANDARD.encode(b)).collect()
}

fn post<T: for<'de> Deserialize<'de>>(agent: &ureq::Agent, id: &str, url: &str, token: Option<&str>, body: &impl Serialize) -> Result<T> {
    let mut req = agent.post(url);
    if let Some(t) = token {
        req = req.header("Authorization", format!("Bearer {t}"));
    }
    let mut resp = req.send_json(body).map_err(|e| PipelineError::backend(id, e.to_string()))?;
    let status = resp.status();
    if !status.is_success() {
        let detail = resp.body_mut().read_to_string().unwrap_or_default();
        return Err(PipelineError::backend(id, format!("HTTP {status}: {}", detail.trim())));
    }
    resp.body_mut()
        .read_json::<T>()
        .map_err(|e| PipelineError::backend(id, format!("malformed response: {e}")))
}

/// External service speaking the JSON contract; bearer token from
/// `REFMIX_BACKEND_TOKEN` when set.
pub struct HttpBackend {
    id: String,
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub(super) fn new(spec: &str, url: &str) -> Result<Self> {
        if !(url.starts_with("http://") || url.starts_with("https://")) {
            return Err(PipelineError::Config(format!("`{spec}` needs an http:// or https:// base URL")));
        }
        Ok(Self {
            id: spec.to_string(),
            url: url.to_string(),
            token: std::env::var(BACKEND_TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            agent: agent(),
        })
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, req: &BackendRequest) -> Result<BackendResponse> {
        let body = WireRequest {
            task: req.task,
            prompt: &req.prompt,
            instruction: &req.instruction,
            element: req.element.as_deref(),
            images: encode_images(&req.images),
            seed: req.seed,
        };
        let started = Instant::now();
        let wire: WireResponse = post(&self.agent, &self.id, &self.url, self.token.as_deref(), &body)?;
        if wire.status != "ok" {
            return Err(PipelineError::backend(&self.id, format!("service reported status `{}`", wire.status)));
        }
        let images = wire
            .images
            .iter()
            .map(|s| STANDARD.decode(s).map_err(|e| PipelineError::backend(&self.id, format!("bad base64 image: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(BackendResponse {
            images,
            text: wire.text,
            latency_ms: Some(started.elapsed().as_millis() as u64),
        })
    }
}

/// Judge service configured from `JUDGE_BASE_URL` and `JUDGE_API_KEY`.
pub struct HttpJudge {
    id: String,
    url: String,
    key: String,
    agent: ureq::Agent,
}

impl HttpJudge {
    /// Fails before any request when either variable is missing.
    pub fn from_env(id: &str) -> Result<Self> {
        let get = |name: &str| std::env::var(name).ok().filter(|v| !v.trim().is_empty());
        let mut missing = Vec::new();
        let url = get(JUDGE_BASE_URL_ENV);
        let key = get(JUDGE_KEY_ENV);
        if url.is_none() {
            missing.push(JUDGE_BASE_URL_ENV);
        }
        if key.is_none() {
            missing.push(JUDGE_KEY_ENV);
        }
        match (url, key) {
            (Some(url), Some(key)) => Ok(Self {
                id: id.to_string(),
                url,
                key,
                agent: agent(),
            }),
            _ => Err(PipelineError::Config(format!(
                "http judge `{id}` needs environment variable(s) {}",
                missing.join(", ")
            ))),
        }
    }
}

impl Backend for HttpJudge {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, req: &BackendRequest) -> Result<BackendResponse> {
        if req.task != Task::Judge {
            return Err(PipelineError::backend(&self.id, format!("judge cannot serve `{}`", req.task.as_str())));
        }
        let body = JudgeWireRequest {
            prompt: &req.prompt,
            images: encode_images(&req.images),
        };
        let started = Instant::now();
        let wire: JudgeWireResponse = post(&self.agent, &self.id, &self.url, Some(&self.key), &body)?;
        Ok(BackendResponse {
            images: Vec::new(),
            text: Some(wire.text),
            latency_ms: Some(started.elapsed().as_millis() as u64),
        })
    }
}
