use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::cases::{BenchTask, CaseCategory, TestCase};
use super::judge::{Verdict, HUMAN_JUDGE};
use crate::error::{PipelineError, Result};

/// `successes / total` rounded half-up to four decimals, computed exactly
/// in integers: `⌊(2·10⁴·s + t) / 2t⌋`.
pub fn ratio_string(successes: u64, total: u64) -> String {
    assert!(total > 0 && successes <= total, "ratio needs 0 ≤ successes ≤ total, total > 0");
    let (s, t) = (successes as u128, total as u128);
    let q = (2 * 10_000 * s + t) / (2 * t);
    format!("{}.{:04}", q / 10_000, q % 10_000)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub task: BenchTask,
    pub category: CaseCategory,
    pub judge: String,
    pub successes: u64,
    pub total: u64,
    pub ratio: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnscoredEntry {
    pub judge: String,
    pub case_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub model_id: String,
    pub timestamp: String,
    pub manifest_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub meta: ReportMeta,
    pub cells: Vec<Cell>,
    pub unscored: Vec<UnscoredEntry>,
}

impl ScoreReport {
    /// Judges in column order: alphabetical, human last.
    pub fn judges(&self) -> Vec<String> {
        order_judges(self.cells.iter().map(|c| c.judge.clone()))
    }

    pub fn cell(&self, task: BenchTask, category: CaseCategory, judge: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.task == task && c.category == category && c.judge == judge)
    }
}

pub(super) fn order_judges(ids: impl Iterator<Item = String>) -> Vec<String> {
    let set: BTreeSet<String> = ids.collect();
    let mut out: Vec<String> = set.iter().filter(|j| *j != HUMAN_JUDGE).cloned().collect();
    if set.contains(HUMAN_JUDGE) {
        out.push(HUMAN_JUDGE.to_string());
    }
    out
}

/// Groups verdicts by (task, category, judge). Cases a judge never scored
/// are listed as unscored and excluded from that judge's totals.
pub fn aggregate(verdicts: &[Verdict], cases: &[TestCase], meta: ReportMeta) -> Result<ScoreReport> {
    let by_id: HashMap<&str, &TestCase> = cases.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut seen = HashMap::new();
    let mut groups: BTreeMap<(BenchTask, CaseCategory, String), (u64, u64)> = BTreeMap::new();
    for v in verdicts {
        let case = by_id
            .get(v.case_id.as_str())
            .ok_or_else(|| PipelineError::Integrity(format!("verdict for unknown case `{}`", v.case_id)))?;
        if let Some(prev) = seen.insert((v.case_id.as_str(), v.judge_id.as_str()), v.run.as_str()) {
            return Err(PipelineError::Integrity(format!(
                "case `{}` has more than one verdict from judge `{}` (runs `{prev}` and `{}`)",
                v.case_id, v.judge_id, v.run
            )));
        }
        let g = groups.entry((case.task, case.category, v.judge_id.clone())).or_default();
        g.0 += v.success as u64;
        g.1 += 1;
    }
    let judges = order_judges(verdicts.iter().map(|v| v.judge_id.clone()));
    let rank: HashMap<&str, usize> = judges.iter().enumerate().map(|(i, j)| (j.as_str(), i)).collect();
    let mut cells: Vec<Cell> = groups
        .into_iter()
        .map(|((task, category, judge), (s, t))| Cell {
            task,
            category,
            ratio: ratio_string(s, t),
            judge,
            successes: s,
            total: t,
        })
        .collect();
    cells.sort_by_key(|c| (c.task, c.category, rank[c.judge.as_str()]));

    let mut sorted_cases: Vec<&TestCase> = cases.iter().collect();
    sorted_cases.sort_by(|a, b| a.id.cmp(&b.id));
    let mut unscored = Vec::new();
    for judge in &judges {
        for case in &sorted_cases {
            if !seen.contains_key(&(case.id.as_str(), judge.as_str())) {
                unscored.push(UnscoredEntry {
                    judge: judge.clone(),
                    case_id: case.id.clone(),
                });
            }
        }
    }
    Ok(ScoreReport { meta, cells, unscored })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_examples() {
        assert_eq!(ratio_string(14, 24), "0.5833");
        assert_eq!(ratio_string(16, 24), "0.6667");
        assert_eq!(ratio_string(52, 90), "0.5778");
        assert_eq!(ratio_string(57, 90), "0.6333");
        assert_eq!(ratio_string(5, 5), "1.0000");
        assert_eq!(ratio_string(0, 5), "0.0000");
        // exact half rounds up
        assert_eq!(ratio_string(1, 20000), "0.0001");
        assert_eq!(ratio_string(1, 164), "0.0061");
    }
}
