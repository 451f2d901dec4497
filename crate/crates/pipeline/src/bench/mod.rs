//! Benchmark harness: test cases, instruction normalization, model runs,
//! judge verdicts, and success-ratio reports.

mod aggregate;
mod cases;
mod judge;
mod normalize;
mod report;
mod run;

pub use aggregate::{aggregate, ratio_string, Cell, ReportMeta, ScoreReport, UnscoredEntry};
pub use cases::{cases_hash, load_cases, BenchTask, CaseCategory, TestCase};
pub use judge::{
    judge, judge_all, judge_prompt, load_human_verdicts, parse_verdict, read_verdicts, JudgeOutcome, JudgeSummary,
    Verdict, HUMAN_JUDGE,
};
pub use normalize::{check_normalized, normalize_instruction, NormalizedInstruction, IMPERATIVE_VERBS};
pub use report::{emit_report, ReportFormat};
pub use run::{read_outputs, run_benchmark, BenchOutput, OUTPUTS_JOB};

/// Attempts per external call before giving up on a case.
pub const MAX_ATTEMPTS: usize = 3;
