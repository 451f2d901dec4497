//! JSON-Lines manifests: a header record, then one record per tuple.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::keywords::Keyword;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Stage1,
    Stage2,
    Stage3,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Stage1, Stage::Stage2, Stage::Stage3];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
            Stage::Stage3 => "stage3",
        }
    }

    pub fn number(&self) -> u64 {
        *self as u64 + 1
    }

    pub fn manifest_name(&self) -> String {
        format!("{}.jsonl", self.as_str())
    }

    pub fn failures_name(&self) -> String {
        format!("{}.failures.jsonl", self.as_str())
    }

    pub fn item_id(&self, index: usize) -> String {
        format!("s{}-{index:06}", self.number())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| PipelineError::Input(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema_version: u32,
    pub stage: Stage,
    pub config_hash: String,
    pub parent_manifest: Option<String>,
    pub vocabulary_version: String,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: Stage,
    pub backends: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub origin: String,
}

/// Two images sharing one element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub image_a: String,
    pub image_b: String,
    pub keyword: Keyword,
    pub prompt_a: String,
    pub prompt_b: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditTuple {
    pub id: String,
    pub source_image: String,
    pub instruction: String,
    pub reference_images: Vec<String>,
    pub target_image: String,
    pub keyword: Keyword,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenTuple {
    pub id: String,
    pub reference_images: Vec<String>,
    pub instruction: String,
    pub target_image: String,
    pub parent_edit_tuple: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub id: String,
    pub job: String,
    pub reason: String,
}

pub const MIN_REFERENCES: usize = 1;
pub const MAX_REFERENCES: usize = 5;

/// Reads every non-empty line of a JSON-Lines file.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let f = std::fs::File::open(path).map_err(|e| PipelineError::io(format!("opening {}", path.display()), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(format!("reading {}", path.display()), e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Parses a manifest into its header and typed records.
pub fn read_manifest<T: DeserializeOwned>(path: &Path) -> Result<(ManifestHeader, Vec<T>)> {
    let lines = read_lines(path)?;
    let parse_err = |line: usize, e: serde_json::Error| PipelineError::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    };
    let (first, rest) = lines.split_first().ok_or_else(|| PipelineError::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "manifest has no header record".into(),
    })?;
    let header: ManifestHeader = serde_json::from_str(&first.1).map_err(|e| parse_err(first.0, e))?;
    let records = rest
        .iter()
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| parse_err(*n, e)))
        .collect::<Result<Vec<T>>>()?;
    Ok((header, records))
}

pub fn to_line(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string(value).expect("manifest records serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_serializes_schema_version_first() {
        let h = ManifestHeader {
            schema_version: SCHEMA_VERSION,
            stage: Stage::Stage2,
            config_hash: "abc".into(),
            parent_manifest: None,
            vocabulary_version: "v1".into(),
            records: 0,
        };
        let line = to_line(&h);
        assert!(line.starts_with("{\"schema_version\":1,\"stage\":\"stage2\""), "{line}");
    }

    #[test]
    fn stage_ids_sort_numerically() {
        assert_eq!(Stage::Stage3.item_id(42), "s3-000042");
        assert!(Stage::Stage1.item_id(9) < Stage::Stage1.item_id(10));
        assert_eq!("stage2".parse::<Stage>().unwrap(), Stage::Stage2);
    }
}
