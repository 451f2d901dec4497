use std::fmt;
use std::str::FromStr;

use super::aggregate::{order_judges, ScoreReport};
use super::cases::{BenchTask, CaseCategory};
use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(PipelineError::Input(format!("unknown report format `{other}` (expected markdown|csv)"))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Markdown => "markdown",
            ReportFormat::Csv => "csv",
        })
    }
}

/// One row per (model, task); columns are category × judge with human
/// verdicts last. Cells without verdicts print `-`.
pub fn emit_report(reports: &[ScoreReport], format: ReportFormat) -> String {
    let judges = order_judges(reports.iter().flat_map(|r| r.judges()));
    let mut header = vec!["model".to_string(), "task".to_string()];
    for cat in CaseCategory::ALL {
        for j in &judges {
            header.push(format!("{cat}/{j}"));
        }
    }
    let mut rows = Vec::new();
    for r in reports {
        for task in [BenchTask::Edit, BenchTask::Gen] {
            if !r.cells.iter().any(|c| c.task == task) {
                continue;
            }
            let mut row = vec![r.meta.model_id.clone(), task.to_string()];
            for cat in CaseCategory::ALL {
                for j in &judges {
                    row.push(r.cell(task, cat, j).map_or("-".to_string(), |c| c.ratio.clone()));
                }
            }
            rows.push(row);
        }
    }
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&header).expect("in-memory write");
            for row in &rows {
                w.write_record(row).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
        }
        ReportFormat::Markdown => {
            let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
            let mut out = line(&header);
            out.push_str(&line(&vec!["---".to_string(); header.len()]));
            for row in &rows {
                out.push_str(&line(row));
            }
            out
        }
    }
}
