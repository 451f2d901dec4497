use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};
use crate::manifest::{read_lines, MAX_REFERENCES, MIN_REFERENCES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchTask {
    Edit,
    Gen,
}

impl BenchTask {
    pub fn as_str(&self) -> &'static str {
        match self {
            BenchTask::Edit => "edit",
            BenchTask::Gen => "gen",
        }
    }
}

impl fmt::Display for BenchTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseCategory {
    Concrete,
    Abstract,
}

impl CaseCategory {
    pub const ALL: [CaseCategory; 2] = [CaseCategory::Concrete, CaseCategory::Abstract];

    pub fn as_str(&self) -> &'static str {
        match self {
            CaseCategory::Concrete => "concrete",
            CaseCategory::Abstract => "abstract",
        }
    }
}

impl fmt::Display for CaseCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub task: BenchTask,
    pub category: CaseCategory,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_image: Option<String>,
    pub reference_images: Vec<String>,
    pub expected_element: String,
}

impl TestCase {
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        match (self.task, &self.source_image) {
            (BenchTask::Edit, None) => return Err(format!("edit case {} has no source image", self.id)),
            (BenchTask::Gen, Some(_)) => return Err(format!("generation case {} has a source image", self.id)),
            _ => {}
        }
        if !(MIN_REFERENCES..=MAX_REFERENCES).contains(&self.reference_images.len()) {
            return Err(format!("case {} has {} reference images", self.id, self.reference_images.len()));
        }
        Ok(())
    }

    /// Source image (edit only) followed by the references.
    pub fn input_images(&self) -> impl Iterator<Item = &String> {
        self.source_image.iter().chain(&self.reference_images)
    }
}

/// Reads a JSON-Lines case file, rejecting malformed or duplicate cases.
pub fn load_cases(path: &Path) -> Result<Vec<TestCase>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, text) in read_lines(path)? {
        let err = |message: String| PipelineError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let case: TestCase = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        case.check().map_err(err)?;
        if !seen.insert(case.id.clone()) {
            return Err(err(format!("duplicate case id {}", case.id)));
        }
        out.push(case);
    }
    Ok(out)
}

pub fn cases_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(format!("reading {}", path.display()), e))?;
    Ok(Sha256::digest(&bytes).iter().take(16).map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(task: BenchTask, source: Option<&str>, refs: usize) -> TestCase {
        TestCase {
            id: "c1".into(),
            task,
            category: CaseCategory::Concrete,
            instruction: "x".into(),
            source_image: source.map(str::to_string),
            reference_images: vec!["r.png".into(); refs],
            expected_element: "hat".into(),
        }
    }

    #[test]
    fn source_image_rules() {
        assert!(case(BenchTask::Edit, Some("s.png"), 1).check().is_ok());
        assert!(case(BenchTask::Edit, None, 1).check().is_err());
        assert!(case(BenchTask::Gen, Some("s.png"), 1).check().is_err());
        assert!(case(BenchTask::Gen, None, 6).check().is_err());
        assert!(case(BenchTask::Gen, None, 0).check().is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cases.jsonl");
        let line = serde_json::to_string(&case(BenchTask::Gen, None, 1)).unwrap();
        std::fs::write(&p, format!("{line}\n{line}\n")).unwrap();
        let msg = load_cases(&p).unwrap_err().to_string();
        assert!(msg.contains(":2:") && msg.contains("duplicate"), "{msg}");
    }
}
