use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::cases::{BenchTask, TestCase};
use super::run::BenchOutput;
use super::MAX_ATTEMPTS;
use crate::backend::{Backend, BackendRequest, Task};
use crate::error::{PipelineError, Result};
use crate::image_io::read_png;
use crate::manifest::{read_lines, to_line};

pub const HUMAN_JUDGE: &str = "human";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub case_id: String,
    pub judge_id: String,
    pub run: String,
    pub success: bool,
    pub raw_response: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum JudgeOutcome {
    Scored(Verdict),
    Unscored { case_id: String, judge_id: String, reason: String },
}

/// `Some(true)` for YES, `Some(false)` for NO, `None` unless exactly one of
/// the two tokens appears (case-insensitive, punctuation ignored).
pub fn parse_verdict(text: &str) -> Option<bool> {
    let upper = text.to_uppercase();
    let mut tokens = upper.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty());
    let (mut yes, mut no) = (false, false);
    for t in tokens.by_ref() {
        yes |= t == "YES";
        no |= t == "NO";
    }
    match (yes, no) {
        (true, false) => Some(true),
        (false, true) => Some(false),
        _ => None,
    }
}

pub fn judge_prompt(case: &TestCase, normalized: &str) -> String {
    let kind = match case.task {
        BenchTask::Edit => "an instruction-based edit",
        BenchTask::Gen => "an instruction-based generation",
    };
    let source = if case.source_image.is_some() { "the source image, then " } else { "" };
    format!(
        "You are grading {kind}.\n\
         Instruction: {}\n\
         Refined instruction: {normalized}\n\
         Images: {source}{} reference image(s), then the output image last.\n\
         Expected element: {}\n\
         Does the output follow the instruction and carry over the referenced element? \
         Answer with exactly one word: YES or NO.",
        case.instruction,
        case.reference_images.len(),
        case.expected_element
    )
}

/// One verdict for one output. Backend errors and unparseable replies are
/// retried; after the last attempt the case is unscored.
pub fn judge(case: &TestCase, output: &BenchOutput, cases_dir: &Path, out_dir: &Path, judge_id: &str, backend: &dyn Backend, run: &str) -> Result<JudgeOutcome> {
    let mut images = case
        .input_images()
        .map(|p| read_png(&cases_dir.join(p)))
        .collect::<Result<Vec<_>>>()?;
    images.push(read_png(&out_dir.join(&output.output_image))?);
    let req = BackendRequest::new(Task::Judge, judge_prompt(case, &output.normalized_instruction), 0)
        .element(case.id.clone())
        .images(images);
    let mut last = String::new();
    for attempt in 1..=MAX_ATTEMPTS {
        let started = Instant::now();
        match backend.call(&req).and_then(|r| {
            let latency = r.latency_ms;
            r.expect_text(backend.id()).map(|t| (t, latency))
        }) {
            Ok((text, latency)) => match parse_verdict(&text) {
                Some(success) => {
                    return Ok(JudgeOutcome::Scored(Verdict {
                        case_id: case.id.clone(),
                        judge_id: judge_id.to_string(),
                        run: run.to_string(),
                        success,
                        raw_response: text,
                        latency_ms: latency.unwrap_or_else(|| started.elapsed().as_millis() as u64),
                    }))
                }
                None => last = format!("unparseable response `{}`", text.trim()),
            },
            Err(e) => last = e.to_string(),
        }
        log::debug!("judge {judge_id} case {} attempt {attempt}: {last}", case.id);
    }
    Ok(JudgeOutcome::Unscored {
        case_id: case.id.clone(),
        judge_id: judge_id.to_string(),
        reason: format!("after {MAX_ATTEMPTS} attempts: {last}"),
    })
}

pub fn read_verdicts(path: &Path) -> Result<Vec<Verdict>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            serde_json::from_str(&text).map_err(|e| PipelineError::Parse {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct JudgeSummary {
    pub scored: usize,
    pub unscored: usize,
    /// Already present in the log from an earlier invocation.
    pub skipped: usize,
}

fn append(path: &Path, line: &str) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| PipelineError::io(format!("opening {}", path.display()), e))?;
    f.write_all(line.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| PipelineError::io(format!("appending to {}", path.display()), e))
}

/// Judges every output with every judge, skipping (case, judge, run) triples
/// already in the verdict log. Requests run `parallelism` at a time; results
/// are appended in case order per judge. Unscored cases go to
/// `unscored.jsonl` beside the log.
#[allow(clippy::too_many_arguments)]
pub fn judge_all(
    cases: &[TestCase],
    outputs: &[BenchOutput],
    cases_dir: &Path,
    out_dir: &Path,
    judges: &[(String, Arc<dyn Backend>)],
    log_path: &Path,
    run: &str,
    parallelism: usize,
) -> Result<JudgeSummary> {
    let by_id: BTreeMap<&str, &TestCase> = cases.iter().map(|c| (c.id.as_str(), c)).collect();
    let done: HashSet<(String, String)> = read_verdicts(log_path)?
        .into_iter()
        .filter(|v| v.run == run)
        .map(|v| (v.case_id, v.judge_id))
        .collect();
    let unscored_path = log_path.with_file_name("unscored.jsonl");
    let mut sorted: Vec<&BenchOutput> = outputs.iter().collect();
    sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let mut summary = JudgeSummary::default();
    let mut tasks = Vec::new();
    for (jid, backend) in judges {
        for out in &sorted {
            let case = by_id
                .get(out.case_id.as_str())
                .ok_or_else(|| PipelineError::Integrity(format!("output for unknown case {}", out.case_id)))?;
            if done.contains(&(out.case_id.clone(), jid.clone())) {
                summary.skipped += 1;
            } else {
                tasks.push((*case, *out, jid.as_str(), backend.as_ref()));
            }
        }
    }

    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::channel();
        for _ in 0..parallelism.max(1).min(tasks.len()) {
            let tx = tx.clone();
            let (tasks, next) = (&tasks, &next);
            scope.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(case, out, jid, backend)) = tasks.get(k) else { break };
                if tx.send((k, judge(case, out, cases_dir, out_dir, jid, backend, run))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // reorder so the log is written in task order
        let mut pending = BTreeMap::new();
        let mut expected = 0;
        for (k, outcome) in rx {
            pending.insert(k, outcome);
            while let Some(outcome) = pending.remove(&expected) {
                match outcome? {
                    JudgeOutcome::Scored(v) => {
                        append(log_path, &to_line(&v))?;
                        summary.scored += 1;
                    }
                    u @ JudgeOutcome::Unscored { .. } => {
                        append(&unscored_path, &to_line(&u))?;
                        summary.unscored += 1;
                    }
                }
                expected += 1;
            }
        }
        Ok(())
    })?;
    Ok(summary)
}

/// Manual verdicts from a `case_id,success` CSV (`yes|no|1|0|true|false`).
pub fn load_human_verdicts(path: &Path, run: &str) -> Result<Vec<Verdict>> {
    #[derive(Deserialize)]
    struct Row {
        case_id: String,
        success: String,
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| PipelineError::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        let success = match row.success.trim().to_lowercase().as_str() {
            "yes" | "1" | "true" => true,
            "no" | "0" | "false" => false,
            other => {
                return Err(PipelineError::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("success must be yes/no, got `{other}`"),
                })
            }
        };
        out.push(Verdict {
            case_id: row.case_id,
            judge_id: HUMAN_JUDGE.to_string(),
            run: run.to_string(),
            success,
            raw_response: row.success,
            latency_ms: 0,
        });
    }
    Ok(out)
}
