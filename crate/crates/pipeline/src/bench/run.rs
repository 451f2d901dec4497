use std::path::Path;

use refmix_core::dit::text::stable_hash;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cases::TestCase;
use super::normalize::normalize_instruction;
use crate::backend::{Backend, BackendRequest, Task};
use crate::error::{PipelineError, Result};
use crate::image_io::{read_png, write_atomic};
use crate::job::{run_stage, RunControl, StagePlan, StageSummary};
use crate::manifest::{read_lines, SCHEMA_VERSION};

pub const OUTPUTS_JOB: &str = "outputs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOutput {
    pub case_id: String,
    /// Relative to the run's output directory.
    pub output_image: String,
    pub normalized_instruction: String,
    pub model: String,
}

#[derive(Serialize)]
struct OutputsHeader<'a> {
    schema_version: u32,
    kind: &'a str,
    model: &'a str,
    normalizer: &'a str,
    records: usize,
}

/// Generates one output per case. Case images resolve against `cases_dir`;
/// a case with a missing input is recorded as failed and the run continues.
pub fn run_benchmark(
    model: &dyn Backend,
    vlm: &dyn Backend,
    cases: &[TestCase],
    cases_dir: &Path,
    out_dir: &Path,
    control: RunControl,
    workers: usize,
) -> Result<StageSummary> {
    let mut sorted: Vec<&TestCase> = cases.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let fingerprint = {
        let mut h = Sha256::new();
        h.update(model.id().as_bytes());
        h.update([0]);
        h.update(vlm.id().as_bytes());
        for c in &sorted {
            h.update(serde_json::to_vec(c).expect("case serializes"));
        }
        h.finalize().iter().take(16).map(|b| format!("{b:02x}")).collect::<String>()
    };
    let header = |records| {
        serde_json::to_string(&OutputsHeader {
            schema_version: SCHEMA_VERSION,
            kind: "bench-outputs",
            model: model.id(),
            normalizer: vlm.id(),
            records,
        })
        .expect("header serializes")
    };
    let plan = StagePlan {
        name: OUTPUTS_JOB,
        out_dir,
        config_hash: &fingerprint,
        ids: sorted.iter().map(|c| c.id.clone()).collect(),
        workers,
        header: &header,
    };
    run_stage(&plan, control, |i| {
        let case = sorted[i];
        let images = case
            .input_images()
            .map(|p| {
                let full = cases_dir.join(p);
                if !full.is_file() {
                    return Err(PipelineError::Input(format!("case {} is missing {p}", case.id)));
                }
                read_png(&full)
            })
            .collect::<Result<Vec<_>>>()?;
        let normalized = normalize_instruction(&case.instruction, case.task, &images, vlm)?;
        let req = BackendRequest::new(Task::Generate, normalized.normalized.clone(), stable_hash(&case.id)).images(images);
        let mut out = model.call(&req)?.expect_images(model.id(), 1)?;
        let rel = format!("outputs/{}.png", case.id);
        write_atomic(&out_dir.join(&rel), &out.remove(0))?;
        Ok(BenchOutput {
            case_id: case.id.clone(),
            output_image: rel,
            normalized_instruction: normalized.normalized,
            model: model.id().to_string(),
        })
    })
}

/// Records of a finished outputs manifest.
pub fn read_outputs(path: &Path) -> Result<Vec<BenchOutput>> {
    read_lines(path)?
        .into_iter()
        .skip(1)
        .map(|(line, text)| {
            serde_json::from_str(&text).map_err(|e| PipelineError::Parse {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })
        })
        .collect()
}
