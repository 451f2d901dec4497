//! Manifest checks: schema, files, reference bounds, parent links, categories.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::Result;
use crate::keywords::Category;
use crate::manifest::{read_lines, EditTuple, GenTuple, ManifestHeader, PairRecord, Stage, MAX_REFERENCES, MIN_REFERENCES, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Header,
    Schema,
    DuplicateId,
    MissingFile,
    ReferenceBounds,
    UnresolvedParent,
    Category,
    KeywordMissing,
}

impl ViolationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ViolationKind::Header => "header",
            ViolationKind::Schema => "schema",
            ViolationKind::DuplicateId => "duplicate-id",
            ViolationKind::MissingFile => "missing-file",
            ViolationKind::ReferenceBounds => "reference-bounds",
            ViolationKind::UnresolvedParent => "unresolved-parent",
            ViolationKind::Category => "category",
            ViolationKind::KeywordMissing => "keyword-missing",
        }
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub line: usize,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationReport {
    pub manifest: PathBuf,
    pub stage: Option<Stage>,
    pub records: usize,
    pub counts: BTreeMap<ViolationKind, usize>,
    pub violations: Vec<Violation>,
}

impl ViolationReport {
    pub fn total(&self) -> usize {
        self.violations.len()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.counts.get(&kind).copied().unwrap_or(0)
    }

    pub fn summary_line(&self) -> String {
        if self.counts.is_empty() {
            return "no violations".into();
        }
        self.counts.iter().map(|(k, n)| format!("{k}={n}")).collect::<Vec<_>>().join(", ")
    }

    fn push(&mut self, line: usize, kind: ViolationKind, detail: impl Into<String>) {
        *self.counts.entry(kind).or_default() += 1;
        self.violations.push(Violation {
            line,
            kind,
            detail: detail.into(),
        });
    }
}

struct Checker<'a> {
    base: &'a Path,
    report: ViolationReport,
}

impl Checker<'_> {
    fn file(&mut self, line: usize, rel: &str) {
        if !self.base.join(rel).is_file() {
            self.report.push(line, ViolationKind::MissingFile, format!("{rel} does not exist"));
        }
    }

    fn refs(&mut self, line: usize, refs: &[String]) {
        if !(MIN_REFERENCES..=MAX_REFERENCES).contains(&refs.len()) {
            self.report.push(
                line,
                ViolationKind::ReferenceBounds,
                format!("{} reference images (allowed {MIN_REFERENCES}..={MAX_REFERENCES})", refs.len()),
            );
        }
        for r in refs {
            self.file(line, r);
        }
    }

    /// Flags an unknown category and substitutes a valid one so the typed
    /// checks can proceed.
    fn category(&mut self, line: usize, value: &mut Value) {
        let Some(cat) = value.pointer_mut("/keyword/category") else { return };
        if let Some(s) = cat.as_str() {
            if s.parse::<Category>().is_err() {
                self.report.push(line, ViolationKind::Category, format!("unknown category `{s}`"));
                *cat = Value::String(Category::ConcreteObject.as_str().into());
            }
        }
    }
}

fn parent_ids(base: &Path, parent: &str) -> Option<HashSet<String>> {
    let lines = read_lines(&base.join(parent)).ok()?;
    Some(
        lines
            .iter()
            .skip(1)
            .filter_map(|(_, l)| serde_json::from_str::<Value>(l).ok())
            .filter_map(|v| v.get("id").and_then(Value::as_str).map(str::to_string))
            .collect(),
    )
}

/// Checks a manifest; paths inside it resolve against its directory.
pub fn validate_manifest(path: &Path) -> Result<ViolationReport> {
    let lines = read_lines(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut c = Checker {
        base,
        report: ViolationReport {
            manifest: path.to_path_buf(),
            stage: None,
            records: lines.len().saturating_sub(1),
            counts: BTreeMap::new(),
            violations: Vec::new(),
        },
    };
    let Some(((first_no, first), rest)) = lines.split_first().map(|(f, r)| ((f.0, &f.1), r)) else {
        c.report.push(1, ViolationKind::Header, "empty manifest");
        return Ok(c.report);
    };
    let header: ManifestHeader = match serde_json::from_str(first) {
        Ok(h) => h,
        Err(e) => {
            c.report.push(first_no, ViolationKind::Header, format!("unreadable header: {e}"));
            return Ok(c.report);
        }
    };
    if header.schema_version != SCHEMA_VERSION {
        c.report.push(first_no, ViolationKind::Header, format!("schema_version {} (expected {SCHEMA_VERSION})", header.schema_version));
    }
    if header.records != rest.len() {
        c.report.push(first_no, ViolationKind::Header, format!("header declares {} records, found {}", header.records, rest.len()));
    }
    c.report.stage = Some(header.stage);
    let parents = match (header.stage, header.parent_manifest.as_deref()) {
        (Stage::Stage3, Some(p)) => parent_ids(base, p),
        _ => None,
    };
    if header.stage == Stage::Stage3 && parents.is_none() {
        c.report.push(first_no, ViolationKind::UnresolvedParent, "parent manifest missing or unreadable");
    }

    let mut seen = HashSet::new();
    for (line, text) in rest {
        let line = *line;
        let mut value: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => {
                c.report.push(line, ViolationKind::Schema, format!("not JSON: {e}"));
                continue;
            }
        };
        if let Some(id) = value.get("id").and_then(Value::as_str) {
            if !seen.insert(id.to_string()) {
                c.report.push(line, ViolationKind::DuplicateId, format!("id {id} repeats"));
            }
        }
        c.category(line, &mut value);
        let schema_err = |e: serde_json::Error| format!("{} record: {e}", header.stage);
        match header.stage {
            Stage::Stage1 => match serde_json::from_value::<PairRecord>(value) {
                Ok(r) => {
                    c.file(line, &r.image_a);
                    c.file(line, &r.image_b);
                }
                Err(e) => c.report.push(line, ViolationKind::Schema, schema_err(e)),
            },
            Stage::Stage2 => match serde_json::from_value::<EditTuple>(value) {
                Ok(r) => {
                    c.file(line, &r.source_image);
                    c.file(line, &r.target_image);
                    c.refs(line, &r.reference_images);
                    if !r.instruction.to_lowercase().contains(&r.keyword.text.to_lowercase()) {
                        c.report.push(line, ViolationKind::KeywordMissing, format!("instruction lacks `{}`", r.keyword.text));
                    }
                }
                Err(e) => c.report.push(line, ViolationKind::Schema, schema_err(e)),
            },
            Stage::Stage3 => match serde_json::from_value::<GenTuple>(value) {
                Ok(r) => {
                    c.file(line, &r.target_image);
                    c.refs(line, &r.reference_images);
                    if let Some(ids) = &parents {
                        if !ids.contains(&r.parent_edit_tuple) {
                            c.report.push(line, ViolationKind::UnresolvedParent, format!("parent {} not found", r.parent_edit_tuple));
                        }
                    }
                }
                Err(e) => c.report.push(line, ViolationKind::Schema, schema_err(e)),
            },
        }
    }
    Ok(c.report)
}
