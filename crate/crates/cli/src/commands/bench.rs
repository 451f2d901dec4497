use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use refmix_pipeline::backend::{parse_backend, Backend, HttpJudge};
use refmix_pipeline::bench::{
    aggregate, cases_hash, emit_report, judge_all, load_cases, load_human_verdicts, read_outputs, read_verdicts,
    run_benchmark, ReportFormat, ReportMeta, TestCase,
};
use refmix_pipeline::image_io::write_atomic;
use refmix_pipeline::RunControl;

use crate::commands::pipeline::report as report_summary;
use crate::config::CliConfig;
use crate::error::{CliError, Result, EXIT_BACKEND, EXIT_OK};

/// Judge spec selecting the environment-configured HTTP judge.
pub const HTTP_JUDGE: &str = "http-judge";

fn cases(config: &CliConfig) -> Result<(Vec<TestCase>, PathBuf)> {
    let path = config.path("bench.cases");
    let cases = load_cases(&path).map_err(CliError::in_context("loading cases"))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cases, dir))
}

fn verdict_log(config: &CliConfig) -> PathBuf {
    config
        .opt_str("bench.verdicts")
        .map(PathBuf::from)
        .unwrap_or_else(|| config.path("bench.output_dir").join("verdicts.jsonl"))
}

pub fn run(config: &CliConfig, control: RunControl, json: bool) -> Result<u8> {
    config.require(&["bench.cases", "bench.model", "bench.normalizer"])?;
    let (cases, dir) = cases(config)?;
    let setup = CliError::in_context("bench setup");
    let model = parse_backend(config.str("bench.model")).map_err(setup)?;
    let vlm = parse_backend(config.str("bench.normalizer")).map_err(CliError::in_context("bench setup"))?;
    let out = config.path("bench.output_dir");
    let summary = run_benchmark(model.as_ref(), vlm.as_ref(), &cases, &dir, &out, control, config.usize("bench.workers"))
        .map_err(CliError::in_context("bench run"))?;
    Ok(report_summary(&summary, json))
}

/// `id=spec` entries; every judge is constructed before any request is made.
pub fn parse_judges(entries: &[String]) -> Result<Vec<(String, Arc<dyn Backend>)>> {
    let mut errors = Vec::new();
    let mut judges = Vec::new();
    for e in entries {
        let Some((id, spec)) = e.split_once('=') else {
            errors.push(format!("judge `{e}` is not of the form id=spec"));
            continue;
        };
        let built: refmix_pipeline::Result<Arc<dyn Backend>> = if spec == HTTP_JUDGE {
            HttpJudge::from_env(id).map(|j| Arc::new(j) as Arc<dyn Backend>)
        } else {
            parse_backend(spec)
        };
        match built {
            Ok(b) => judges.push((id.to_string(), b)),
            Err(err) => errors.push(err.to_string()),
        }
    }
    if errors.is_empty() {
        Ok(judges)
    } else {
        Err(crate::config::ConfigErrors(errors).into())
    }
}

pub fn judge(config: &CliConfig, json: bool) -> Result<u8> {
    config.require(&["bench.cases", "bench.judges"])?;
    let judges = parse_judges(&config.str_list("bench.judges"))?;
    let (cases, dir) = cases(config)?;
    let out = config.path("bench.output_dir");
    let outputs = read_outputs(&out.join("outputs.jsonl")).map_err(CliError::in_context("reading bench outputs"))?;
    let log = verdict_log(config);
    let run = config.str("bench.run");
    let s = judge_all(&cases, &outputs, &dir, &out, &judges, &log, run, config.usize("bench.parallelism"))
        .map_err(CliError::in_context("judging"))?;
    if json {
        println!("{}", serde_json::json!({"scored": s.scored, "unscored": s.unscored, "skipped": s.skipped, "log": log}));
    } else {
        println!("{}: {} scored, {} unscored, {} already judged", log.display(), s.scored, s.unscored, s.skipped);
    }
    Ok(if s.scored == 0 && s.skipped == 0 && s.unscored > 0 {
        eprintln!("no judge produced a verdict");
        EXIT_BACKEND
    } else {
        EXIT_OK
    })
}

pub fn report(config: &CliConfig, format: ReportFormat) -> Result<u8> {
    config.require(&["bench.cases"])?;
    let cases_path = config.path("bench.cases");
    let (cases, _) = cases(config)?;
    let run = config.str("bench.run");
    let mut verdicts: Vec<_> = read_verdicts(&verdict_log(config))
        .map_err(CliError::in_context("reading verdicts"))?
        .into_iter()
        .filter(|v| v.run == run)
        .collect();
    if let Some(human) = config.opt_str("bench.human") {
        verdicts.extend(load_human_verdicts(Path::new(human), run).map_err(CliError::in_context("reading human verdicts"))?);
    }
    let meta = ReportMeta {
        model_id: config.opt_str("bench.model").unwrap_or("model").to_string(),
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0).to_string(),
        manifest_hash: cases_hash(&cases_path).map_err(CliError::in_context("hashing cases"))?,
    };
    let scores = aggregate(&verdicts, &cases, meta).map_err(CliError::in_context("aggregating"))?;
    for u in &scores.unscored {
        log::info!("unscored: {} by {}", u.case_id, u.judge);
    }
    let text = emit_report(std::slice::from_ref(&scores), format);
    let out = config.path("bench.output_dir");
    let ext = if format == ReportFormat::Csv { "csv" } else { "md" };
    let report_path = out.join(format!("report.{ext}"));
    let write = CliError::in_context("writing report");
    write_atomic(&report_path, text.as_bytes()).map_err(write)?;
    let scores_json = serde_json::to_vec_pretty(&scores).expect("scores serialize");
    write_atomic(&out.join("scores.json"), &scores_json).map_err(CliError::in_context("writing scores"))?;
    print!("{text}");
    eprintln!("report written to {}", report_path.display());
    Ok(EXIT_OK)
}
