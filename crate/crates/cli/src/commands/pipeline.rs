use std::path::PathBuf;

use refmix_pipeline::{validate_manifest, Pipeline, RunControl, Stage, StageSummary};

use crate::config::CliConfig;
use crate::error::{CliError, Result, EXIT_BACKEND, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};

pub fn build(config: &CliConfig) -> Result<Pipeline> {
    Pipeline::new(config.pipeline_config(), config.registry_spec()).map_err(CliError::in_context("pipeline setup"))
}

pub fn summary_json(s: &StageSummary) -> serde_json::Value {
    serde_json::json!({
        "job": s.job,
        "manifest": s.manifest,
        "total": s.total,
        "succeeded": s.succeeded,
        "failed": s.failed,
        "produced_now": s.produced_now,
        "interrupted": s.interrupted,
    })
}

/// Prints a stage summary and picks the exit code: 3 when every item failed.
pub fn report(s: &StageSummary, json: bool) -> u8 {
    if json {
        println!("{}", summary_json(s));
    } else {
        println!(
            "{}: {} ({} total, {} succeeded, {} failed{})",
            s.job,
            s.manifest.display(),
            s.total,
            s.succeeded,
            s.failed,
            if s.interrupted { ", interrupted" } else { "" }
        );
    }
    if s.all_failed() && !s.interrupted {
        eprintln!("{}: every item failed", s.job);
        EXIT_BACKEND
    } else {
        EXIT_OK
    }
}

pub fn run_stage(config: &CliConfig, stage: Stage, control: RunControl, json: bool) -> Result<u8> {
    let pipeline = build(config)?;
    let summary = pipeline.run(stage, control).map_err(CliError::in_context(stage.to_string()))?;
    Ok(report(&summary, json))
}

pub fn resume(config: &CliConfig, json: bool) -> Result<u8> {
    match build(config)?.resume().map_err(CliError::in_context("resume"))? {
        Some(summary) => Ok(report(&summary, json)),
        None => {
            eprintln!("nothing to resume: every stage is finished");
            Ok(EXIT_OK)
        }
    }
}

/// Validates the given manifests, or every stage manifest present in the
/// output directory. Exit 1 on any violation.
pub fn validate(config: &CliConfig, manifests: &[PathBuf], json: bool) -> Result<u8> {
    let out = config.path("paths.output_dir");
    let paths: Vec<PathBuf> = if manifests.is_empty() {
        Stage::ALL.iter().map(|s| out.join(s.manifest_name())).filter(|p| p.is_file()).collect()
    } else {
        manifests.to_vec()
    };
    if paths.is_empty() {
        eprintln!("no manifests found under {}", out.display());
        return Ok(EXIT_USAGE);
    }
    let mut total = 0;
    let mut docs = Vec::new();
    for path in &paths {
        let report = validate_manifest(path).map_err(CliError::in_context(format!("validating {}", path.display())))?;
        total += report.total();
        if json {
            docs.push(serde_json::to_value(&report).expect("report serializes"));
        } else {
            println!("{}: {} records, {}", path.display(), report.records, report.summary_line());
            for v in &report.violations {
                eprintln!("  line {}: {}: {}", v.line, v.kind, v.detail);
            }
        }
    }
    if json {
        println!("{}", serde_json::Value::Array(docs));
    }
    Ok(if total == 0 { EXIT_OK } else { EXIT_FAILURE })
}
