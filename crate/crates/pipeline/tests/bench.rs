mod common;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use num_bigint::BigUint;
use proptest::prelude::*;
use refmix_pipeline::backend::{Backend, BackendRequest, BackendResponse, StubBackend, ToyDitBackend};
use refmix_pipeline::bench::*;
use refmix_pipeline::{PipelineError, RunControl};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn meta(model: &str) -> ReportMeta {
    ReportMeta {
        model_id: model.into(),
        timestamp: "2026-01-01T00:00:00Z".into(),
        manifest_hash: "fixture".into(),
    }
}

fn fixture_report(kind: &str) -> ScoreReport {
    let dir = fixtures();
    let cases = load_cases(&dir.join(format!("{kind}_cases.jsonl"))).unwrap();
    let mut verdicts = read_verdicts(&dir.join(format!("{kind}_verdicts.jsonl"))).unwrap();
    let human = dir.join(format!("{kind}_human.csv"));
    if human.exists() {
        verdicts.extend(load_human_verdicts(&human, "fixture").unwrap());
    }
    aggregate(&verdicts, &cases, meta("model-x")).unwrap()
}

fn ratio(r: &ScoreReport, task: BenchTask, cat: CaseCategory, judge: &str) -> String {
    r.cell(task, cat, judge).unwrap().ratio.clone()
}

#[test]
fn generation_fixture_ratios() {
    let r = fixture_report("gen");
    use CaseCategory::*;
    assert_eq!(ratio(&r, BenchTask::Gen, Concrete, "vlm-a"), "0.5833");
    assert_eq!(ratio(&r, BenchTask::Gen, Concrete, "vlm-b"), "0.6667");
    assert_eq!(ratio(&r, BenchTask::Gen, Abstract, "vlm-a"), "0.5778");
    assert_eq!(ratio(&r, BenchTask::Gen, Abstract, "vlm-b"), "0.6333");
    assert!(r.unscored.is_empty());
}

#[test]
fn editing_fixture_ratios() {
    let r = fixture_report("edit");
    use CaseCategory::*;
    let t = BenchTask::Edit;
    assert_eq!(ratio(&r, t, Concrete, "vlm-a"), "0.5854");
    assert_eq!(ratio(&r, t, Concrete, "vlm-b"), "0.6585");
    assert_eq!(ratio(&r, t, Concrete, HUMAN_JUDGE), "0.6098");
    assert_eq!(ratio(&r, t, Abstract, "vlm-a"), "0.5854");
    assert_eq!(ratio(&r, t, Abstract, "vlm-b"), "0.6280");
    assert_eq!(ratio(&r, t, Abstract, HUMAN_JUDGE), "0.6829");
    assert_eq!(r.judges(), vec!["vlm-a", "vlm-b", "human"]);
}

fn numbers(s: &str) -> Vec<String> {
    s.split(|c: char| c == ',' || c == '|' || c.is_whitespace())
        .filter(|t| t.starts_with("0.") || t.starts_with("1."))
        .map(str::to_string)
        .collect()
}

#[test]
fn report_layout_and_formats_agree() {
    let reports = [fixture_report("edit"), fixture_report("gen")];
    let csv = emit_report(&reports, ReportFormat::Csv);
    let md = emit_report(&reports, ReportFormat::Markdown);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,task,concrete/vlm-a,concrete/vlm-b,concrete/human,abstract/vlm-a,abstract/vlm-b,abstract/human");
    assert_eq!(lines[1], "model-x,edit,0.5854,0.6585,0.6098,0.5854,0.6280,0.6829");
    assert_eq!(lines[2], "model-x,gen,0.5833,0.6667,-,0.5778,0.6333,-");
    assert_eq!(lines.len(), 3);
    assert_eq!(numbers(&csv), numbers(&md));
    let re = |t: &str| t.len() == 6 && (t.starts_with("0.") || t.starts_with("1.")) && t[2..].bytes().all(|b| b.is_ascii_digit());
    assert!(numbers(&csv).iter().all(|t| re(t)));
    assert!(md.lines().nth(1).unwrap().starts_with("| --- |"));

    // no verdicts at all: header only
    let empty = aggregate(&[], &[], meta("m")).unwrap();
    for f in [ReportFormat::Csv, ReportFormat::Markdown] {
        let out = emit_report(std::slice::from_ref(&empty), f);
        assert!(numbers(&out).is_empty(), "{out}");
    }
    assert_eq!(emit_report(&[empty], ReportFormat::Csv).lines().count(), 1);
}

#[test]
fn aggregation_rejects_bad_verdict_sets() {
    let dir = fixtures();
    let cases = load_cases(&dir.join("gen_cases.jsonl")).unwrap();
    let mut verdicts = read_verdicts(&dir.join("gen_verdicts.jsonl")).unwrap();
    let dup = verdicts[0].clone();
    verdicts.push(dup);
    assert!(matches!(aggregate(&verdicts, &cases, meta("m")), Err(PipelineError::Integrity(_))));
    verdicts.pop();
    verdicts[0].case_id = "nope".into();
    assert!(matches!(aggregate(&verdicts, &cases, meta("m")), Err(PipelineError::Integrity(_))));
}

#[test]
fn unscored_cases_leave_the_denominator() {
    let dir = fixtures();
    let cases = load_cases(&dir.join("gen_cases.jsonl")).unwrap();
    let verdicts: Vec<_> = read_verdicts(&dir.join("gen_verdicts.jsonl"))
        .unwrap()
        .into_iter()
        .filter(|v| !(v.judge_id == "vlm-a" && v.case_id == "gen-c-000"))
        .collect();
    let r = aggregate(&verdicts, &cases, meta("m")).unwrap();
    let c = r.cell(BenchTask::Gen, CaseCategory::Concrete, "vlm-a").unwrap();
    assert_eq!(c.total, 23);
    assert_eq!(r.unscored.len(), 1);
}

fn oracle(s: u64, t: u64) -> String {
    // truncate to five decimals, then round the fifth away
    let d = BigUint::from(s) * BigUint::from(100_000u32) / BigUint::from(t);
    let q = (d + 5u32) / 10u32;
    let whole = &q / 10_000u32;
    let frac = &q % 10_000u32;
    format!("{whole}.{frac:0>4}")
}

proptest! {
    #[test]
    fn ratio_matches_big_integer_oracle(t in 1u64..100_000, s_frac in 0.0f64..=1.0) {
        let s = ((t as f64) * s_frac).floor() as u64;
        prop_assert_eq!(ratio_string(s, t), oracle(s, t));
    }
}

#[test]
fn ratio_boundaries() {
    assert_eq!(ratio_string(1, 8), "0.1250");
    assert_eq!(ratio_string(1, 3), "0.3333");
    assert_eq!(ratio_string(2, 3), "0.6667");
    assert_eq!(ratio_string(0, 7), "0.0000");
    assert_eq!(ratio_string(7, 7), "1.0000");
    // exact half at the fifth decimal rounds up
    assert_eq!(ratio_string(1, 32), "0.0313");
    assert_eq!(oracle(1, 32), "0.0313");
}

#[test]
fn toy_model_benchmark_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cases_dir = tmp.path().join("cases");
    let mut cases = common::bench_cases(&cases_dir, 5);
    for c in &cases {
        c.check().unwrap();
    }
    let model = ToyDitBackend::new(3).unwrap();
    let vlm = StubBackend::new(4);
    let out_a = tmp.path().join("a");
    let s = run_benchmark(&model, &vlm, &cases, &cases_dir, &out_a, RunControl::default(), 2).unwrap();
    assert_eq!((s.succeeded, s.failed), (5, 0));
    let outputs = read_outputs(&s.manifest).unwrap();
    assert_eq!(outputs.len(), 5);
    for o in &outputs {
        assert!(out_a.join(&o.output_image).is_file());
        let case = cases.iter().find(|c| c.id == o.case_id).unwrap();
        check_normalized(&case.instruction, &o.normalized_instruction, case.task).unwrap();
    }
    let out_b = tmp.path().join("b");
    run_benchmark(&model, &vlm, &cases, &cases_dir, &out_b, RunControl::default(), 1).unwrap();
    for o in &outputs {
        assert_eq!(std::fs::read(out_a.join(&o.output_image)).unwrap(), std::fs::read(out_b.join(&o.output_image)).unwrap());
    }

    // one case loses a reference image
    cases[3].reference_images.push("images/missing.png".into());
    let out_c = tmp.path().join("c");
    let s = run_benchmark(&model, &vlm, &cases, &cases_dir, &out_c, RunControl::default(), 2).unwrap();
    assert_eq!((s.succeeded, s.failed), (4, 1));
    let failures = std::fs::read_to_string(out_c.join("outputs.failures.jsonl")).unwrap();
    assert!(failures.contains("case-03") && failures.contains("missing.png"));
}

/// Replies with a fixed script, then repeats its last entry.
struct Scripted {
    replies: Vec<&'static str>,
    calls: AtomicUsize,
}

impl Backend for Scripted {
    fn id(&self) -> &str {
        "scripted"
    }

    fn call(&self, _req: &BackendRequest) -> refmix_pipeline::Result<BackendResponse> {
        let k = self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(BackendResponse::text(*self.replies.get(k).unwrap_or(self.replies.last().unwrap())))
    }
}

fn judged_setup(dir: &Path) -> (Vec<TestCase>, Vec<BenchOutput>, PathBuf) {
    let cases_dir = dir.join("cases");
    let cases = common::bench_cases(&cases_dir, 4);
    let out = dir.join("run");
    let s = run_benchmark(&StubBackend::new(1), &StubBackend::new(2), &cases, &cases_dir, &out, RunControl::default(), 2).unwrap();
    (cases, read_outputs(&s.manifest).unwrap(), cases_dir)
}

#[test]
fn judge_retries_then_marks_unscored() {
    let tmp = tempfile::tempdir().unwrap();
    let (cases, outputs, cases_dir) = judged_setup(tmp.path());
    let out = tmp.path().join("run");
    let maybe = Scripted {
        replies: vec!["maybe"],
        calls: AtomicUsize::new(0),
    };
    let o = judge(&cases[0], &outputs[0], &cases_dir, &out, "j", &maybe, "r1").unwrap();
    assert!(matches!(o, JudgeOutcome::Unscored { .. }));
    assert_eq!(maybe.calls.load(Ordering::SeqCst), MAX_ATTEMPTS);

    let late = Scripted {
        replies: vec!["yes and no", "Yes."],
        calls: AtomicUsize::new(0),
    };
    match judge(&cases[0], &outputs[0], &cases_dir, &out, "j", &late, "r1").unwrap() {
        JudgeOutcome::Scored(v) => assert!(v.success && v.raw_response == "Yes."),
        other => panic!("{other:?}"),
    }
}

#[test]
fn verdict_log_is_append_only() {
    let tmp = tempfile::tempdir().unwrap();
    let (cases, outputs, cases_dir) = judged_setup(tmp.path());
    let out = tmp.path().join("run");
    let log = tmp.path().join("verdicts.jsonl");
    let judges: Vec<(String, Arc<dyn Backend>)> = vec![("vlm-a".into(), Arc::new(StubBackend::new(5)))];
    let s = judge_all(&cases, &outputs, &cases_dir, &out, &judges, &log, "r1", 3).unwrap();
    assert_eq!(s.scored, 4);
    let first = std::fs::read(&log).unwrap();

    // same run again: everything skipped, log untouched
    let s = judge_all(&cases, &outputs, &cases_dir, &out, &judges, &log, "r1", 3).unwrap();
    assert_eq!((s.scored, s.skipped), (0, 4));
    assert_eq!(std::fs::read(&log).unwrap(), first);

    // a second judge that never answers appends nothing to the log
    let judges: Vec<(String, Arc<dyn Backend>)> = vec![(
        "vlm-b".into(),
        Arc::new(Scripted {
            replies: vec!["unsure"],
            calls: AtomicUsize::new(0),
        }),
    )];
    let s = judge_all(&cases, &outputs, &cases_dir, &out, &judges, &log, "r1", 2).unwrap();
    assert_eq!(s.unscored, 4);
    assert_eq!(std::fs::read(&log).unwrap(), first);
    let unscored = std::fs::read_to_string(tmp.path().join("unscored.jsonl")).unwrap();
    assert_eq!(unscored.lines().count(), 4);

    // a new run appends after the existing bytes
    let judges: Vec<(String, Arc<dyn Backend>)> = vec![("vlm-a".into(), Arc::new(StubBackend::new(5)))];
    judge_all(&cases, &outputs, &cases_dir, &out, &judges, &log, "r2", 1).unwrap();
    let now = std::fs::read(&log).unwrap();
    assert!(now.starts_with(&first) && now.len() > first.len());
    let verdicts = read_verdicts(&log).unwrap();
    let r1: Vec<_> = verdicts.iter().filter(|v| v.run == "r1").map(|v| v.success).collect();
    let r2: Vec<_> = verdicts.iter().filter(|v| v.run == "r2").map(|v| v.success).collect();
    assert_eq!(r1, r2);
}
