//! Resumable batch jobs (pipeline stages and benchmark runs).
//!
//! Each finished item is written as a part file under `.work/<job>/`; the
//! job-state file records the configuration hash and completed ids. Once
//! every id has a part, the manifest is written in ascending id order, so its
//! bytes do not depend on worker scheduling or on interruptions.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::image_io::write_atomic;
use crate::manifest::{to_line, FailureRecord, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobState {
    pub schema_version: u32,
    pub job: String,
    pub config_hash: String,
    pub completed: BTreeSet<String>,
    pub finished: bool,
}

impl JobState {
    pub fn path(out_dir: &Path, job: &str) -> PathBuf {
        out_dir.join(format!("{job}.job.json"))
    }

    pub fn load(out_dir: &Path, job: &str) -> Result<Option<Self>> {
        let p = Self::path(out_dir, job);
        match std::fs::read_to_string(&p) {
            Ok(s) => serde_json::from_str(&s).map(Some).map_err(|e| PipelineError::Parse {
                path: p,
                line: 1,
                message: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(PipelineError::io(format!("reading {}", p.display()), e)),
        }
    }

    fn save(&self, out_dir: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).expect("job state serializes");
        write_atomic(&Self::path(out_dir, &self.job), s.as_bytes())
    }
}

/// How much of a stage to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunControl {
    /// Continue an existing job instead of starting over.
    pub resume: bool,
    /// Produce at most this many items, then stop as if interrupted.
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSummary {
    pub job: String,
    pub manifest: PathBuf,
    pub total: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub produced_now: usize,
    pub interrupted: bool,
}

impl StageSummary {
    /// Every attempted item failed at a backend.
    pub fn all_failed(&self) -> bool {
        self.total > 0 && self.succeeded == 0 && !self.interrupted
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Part<T> {
    Done(T),
    Failed(String),
}

/// One resumable job. Outputs are `<name>.jsonl` (header line, then records
/// in id order) and `<name>.failures.jsonl`.
pub struct StagePlan<'a> {
    pub name: &'a str,
    pub out_dir: &'a Path,
    pub config_hash: &'a str,
    /// Ascending item ids; item `i` is produced by `produce(i)`.
    pub ids: Vec<String>,
    pub workers: usize,
    /// Header line for a manifest holding the given number of records.
    pub header: &'a (dyn Fn(usize) -> String + Sync),
}

impl StagePlan<'_> {
    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}.jsonl", self.name))
    }

    pub fn failures_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}.failures.jsonl", self.name))
    }
}

fn work_dir(out_dir: &Path, job: &str) -> PathBuf {
    out_dir.join(".work").join(job)
}

fn remove_if_exists(p: &Path) -> Result<()> {
    let r = if p.is_dir() { std::fs::remove_dir_all(p) } else { std::fs::remove_file(p) };
    match r {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(PipelineError::io(format!("removing {}", p.display()), e)),
        _ => Ok(()),
    }
}

/// Errors that stop the whole stage rather than one item.
fn is_fatal(e: &PipelineError) -> bool {
    matches!(e, PipelineError::Config(_) | PipelineError::JobMismatch(_) | PipelineError::Dependency(_))
}

/// Runs `produce(index)` for every item not yet completed and assembles the
/// manifest once all items are accounted for.
pub fn run_stage<T, F>(plan: &StagePlan<'_>, control: RunControl, produce: F) -> Result<StageSummary>
where
    T: Serialize + DeserializeOwned + Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let out = plan.out_dir;
    let stage = plan.name;
    let manifest = plan.manifest_path();
    let work = work_dir(out, stage);
    let existing = JobState::load(out, stage)?;

    let mut state = match (control.resume, existing) {
        (true, None) => {
            return Err(PipelineError::Dependency(format!("no {stage} job to resume under {}", out.display())));
        }
        (true, Some(s)) if s.config_hash != plan.config_hash => {
            return Err(PipelineError::JobMismatch(format!(
                "{stage} was started with configuration {} but the current configuration hashes to {}; \
                 restore the original settings or rerun the stage from scratch",
                s.config_hash, plan.config_hash
            )));
        }
        (true, Some(s)) => s,
        (false, _) => {
            for p in [&manifest, &plan.failures_path(), &work, &JobState::path(out, stage)] {
                remove_if_exists(p)?;
            }
            JobState {
                schema_version: SCHEMA_VERSION,
                job: stage.to_string(),
                config_hash: plan.config_hash.to_string(),
                completed: BTreeSet::new(),
                finished: false,
            }
        }
    };
    std::fs::create_dir_all(&work).map_err(|e| PipelineError::io(format!("creating {}", work.display()), e))?;

    if state.finished && manifest.exists() {
        log::info!("{stage} already complete; nothing to resume");
        return summarize(plan, &manifest, 0, false);
    }

    let ids = &plan.ids;
    let count = ids.len();
    // parts written before an unclean stop count as completed
    for id in ids {
        if work.join(format!("{id}.json")).exists() {
            state.completed.insert(id.clone());
        }
    }
    state.save(out)?;

    let mut todo: Vec<usize> = (0..count).filter(|&i| !state.completed.contains(&ids[i])).collect();
    let interrupted = matches!(control.limit, Some(l) if l < todo.len());
    if let Some(l) = control.limit {
        todo.truncate(l);
    }

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let mut fatal: Option<PipelineError> = None;
    let mut produced = 0;
    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::channel::<(usize, Result<T>)>();
        for _ in 0..plan.workers.max(1).min(todo.len()) {
            let tx = tx.clone();
            let (todo, next, stop, produce) = (&todo, &next, &stop, &produce);
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = todo.get(k) else { break };
                if tx.send((i, produce(i))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, result) in rx {
            let part = match result {
                Ok(record) => Part::Done(record),
                Err(e) if is_fatal(&e) => {
                    stop.store(true, Ordering::SeqCst);
                    fatal.get_or_insert(e);
                    continue;
                }
                Err(e) => {
                    log::warn!("{stage} item {} failed: {e}", ids[i]);
                    Part::Failed(e.to_string())
                }
            };
            let bytes = serde_json::to_vec(&part).expect("part serializes");
            write_atomic(&work.join(format!("{}.json", ids[i])), &bytes)?;
            state.completed.insert(ids[i].clone());
            state.save(out)?;
            produced += 1;
        }
        Ok(())
    })?;
    if let Some(e) = fatal {
        return Err(e);
    }
    if interrupted {
        log::info!("{stage} stopped after {produced} item(s); {} remain", count - state.completed.len());
        let succeeded = count_done::<T>(&work, ids, &state)?;
        return Ok(StageSummary {
            job: stage.to_string(),
            manifest,
            total: count,
            succeeded,
            failed: state.completed.len() - succeeded,
            produced_now: produced,
            interrupted: true,
        });
    }

    finalize::<T>(plan, ids, &work, &manifest)?;
    state.finished = true;
    state.save(out)?;
    remove_if_exists(&work)?;
    summarize(plan, &manifest, produced, false)
}

fn read_part<T: DeserializeOwned>(work: &Path, id: &str) -> Result<Part<T>> {
    let p = work.join(format!("{id}.json"));
    let bytes = std::fs::read(&p).map_err(|e| PipelineError::io(format!("reading {}", p.display()), e))?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Parse {
        path: p,
        line: 1,
        message: e.to_string(),
    })
}

fn count_done<T: DeserializeOwned>(work: &Path, ids: &[String], state: &JobState) -> Result<usize> {
    let mut n = 0;
    for id in ids.iter().filter(|id| state.completed.contains(*id)) {
        if matches!(read_part::<T>(work, id)?, Part::Done(_)) {
            n += 1;
        }
    }
    Ok(n)
}

fn finalize<T: Serialize + DeserializeOwned>(plan: &StagePlan<'_>, ids: &[String], work: &Path, manifest: &Path) -> Result<()> {
    let mut records = String::new();
    let mut failures = String::new();
    let mut n = 0;
    for id in ids {
        match read_part::<T>(work, id)? {
            Part::Done(r) => {
                records.push_str(&to_line(&r));
                n += 1;
            }
            Part::Failed(reason) => failures.push_str(&to_line(&FailureRecord {
                id: id.clone(),
                job: plan.name.to_string(),
                reason,
            })),
        }
    }
    let mut body = (plan.header)(n);
    body.push('\n');
    body.push_str(&records);
    write_atomic(manifest, body.as_bytes())?;
    write_atomic(&plan.failures_path(), failures.as_bytes())
}

fn summarize(plan: &StagePlan<'_>, manifest: &Path, produced: usize, interrupted: bool) -> Result<StageSummary> {
    let records = crate::manifest::read_lines(manifest)?.len().saturating_sub(1);
    let failures = crate::manifest::read_lines(&plan.failures_path())?.len();
    Ok(StageSummary {
        job: plan.name.to_string(),
        manifest: manifest.to_path_buf(),
        total: records + failures,
        succeeded: records,
        failed: failures,
        produced_now: produced,
        interrupted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(n: usize) -> String {
        format!("{{\"records\":{n}}}")
    }

    fn plan<'a>(dir: &'a Path, count: usize, hash: &'a str) -> StagePlan<'a> {
        StagePlan {
            name: "stage1",
            out_dir: dir,
            config_hash: hash,
            ids: (0..count).map(|i| format!("i{i:03}")).collect(),
            workers: 3,
            header: &header,
        }
    }

    fn produce(i: usize) -> Result<String> {
        if i % 4 == 3 {
            Err(PipelineError::backend("stub:0", "boom"))
        } else {
            Ok(format!("item {i}"))
        }
    }

    #[test]
    fn failures_are_isolated_and_ordered() {
        let dir = tempfile::tempdir().unwrap();
        let s = run_stage(&plan(dir.path(), 8, "h"), RunControl::default(), produce).unwrap();
        assert_eq!((s.succeeded, s.failed), (6, 2));
        let lines = crate::manifest::read_lines(&s.manifest).unwrap();
        assert_eq!(lines[0].1, "{\"records\":6}");
        let recs: Vec<String> = lines[1..].iter().map(|(_, l)| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(recs[0], "item 0");
        assert_eq!(recs[5], "item 6");
    }

    #[test]
    fn interrupted_then_resumed_matches_uninterrupted() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_stage(&plan(a.path(), 10, "h"), RunControl::default(), produce).unwrap();
        let part = RunControl { resume: false, limit: Some(3) };
        assert!(run_stage(&plan(b.path(), 10, "h"), part, produce).unwrap().interrupted);
        assert!(!b.path().join("stage1.jsonl").exists());
        let resume = RunControl { resume: true, limit: None };
        let s = run_stage(&plan(b.path(), 10, "h"), resume, produce).unwrap();
        assert_eq!(s.produced_now, 7);
        let read = |d: &Path| std::fs::read(d.join("stage1.jsonl")).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
        // resuming a finished job does nothing
        assert_eq!(run_stage(&plan(b.path(), 10, "h"), resume, produce).unwrap().produced_now, 0);
    }

    #[test]
    fn resume_rejects_changed_configuration() {
        let d = tempfile::tempdir().unwrap();
        run_stage(&plan(d.path(), 4, "h1"), RunControl { resume: false, limit: Some(1) }, produce).unwrap();
        let err = run_stage(&plan(d.path(), 4, "h2"), RunControl { resume: true, limit: None }, produce).unwrap_err();
        assert!(matches!(err, PipelineError::JobMismatch(_)));
    }

    #[test]
    fn fatal_error_aborts() {
        let d = tempfile::tempdir().unwrap();
        let r = run_stage(&plan(d.path(), 4, "h"), RunControl::default(), |_| -> Result<String> {
            Err(PipelineError::Config("nope".into()))
        });
        assert!(matches!(r, Err(PipelineError::Config(_))));
    }

    #[test]
    fn zero_items_gives_header_only() {
        let d = tempfile::tempdir().unwrap();
        let s = run_stage(&plan(d.path(), 0, "h"), RunControl::default(), produce).unwrap();
        let text = std::fs::read_to_string(&s.manifest).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.contains("\"records\":0"));
    }
}
