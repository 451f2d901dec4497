//! The three data-creation stages.
//!
//! Stage 1 renders image pairs that share one element. Stage 2 builds edit
//! tuples: a target image, a reference isolating one keyword, a source where
//! that keyword was altered, and an instruction. Stage 3 extracts further
//! references from each stage-2 source image and pairs all references with the
//! stage-2 target as a generation tuple.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use refmix_core::SeededRng;

use crate::backend::{Backend, BackendRegistry, BackendRequest, RegistrySpec, Task};
use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::image_io::{read_png, write_atomic};
use crate::job::{run_stage, JobState, RunControl, StagePlan, StageSummary};
use crate::keywords::{Category, Keyword, VOCABULARY_VERSION};
use crate::manifest::{
    read_manifest, to_line, EditTuple, GenTuple, ManifestHeader, PairRecord, Provenance, Stage, MAX_REFERENCES, SCHEMA_VERSION,
};
use crate::validate::validate_manifest;

const SCENES: &[&str] = &[
    "a sunny park", "a cozy kitchen", "a city street at dusk", "a mountain trail", "a minimalist studio",
    "a beach boardwalk", "a quiet library", "a flower market",
];

const SUBJECTS: &[&str] = &["a young woman", "an old man", "a ceramic vase", "a sports car", "a wooden chair", "a dress"];

pub struct Pipeline {
    config: PipelineConfig,
    spec: RegistrySpec,
    registry: BackendRegistry,
    hash: String,
}

fn pick<'a>(rng: &mut SeededRng, items: &[&'a str]) -> &'a str {
    items[rng.below(items.len())]
}

fn sample_keyword(rng: &mut SeededRng, config: &PipelineConfig) -> Result<Keyword> {
    let c = rng
        .weighted_index(&config.category_weights.as_array())
        .ok_or_else(|| PipelineError::Config("category weights are all zero".into()))?;
    let category = Category::ALL[c];
    Keyword::new(pick(rng, category.vocabulary()), category)
}

fn scene_prompt(rng: &mut SeededRng, kw: &Keyword) -> String {
    let scene = pick(rng, SCENES);
    match kw.category {
        Category::ConcreteObject => format!("A photo of a {} in {scene}", kw.text),
        Category::AbstractLocal => format!("{} with a distinctive {}, in {scene}", capitalize(pick(rng, SUBJECTS)), kw.text),
        Category::AbstractGlobal => format!("A view of {scene} with a striking {}", kw.text),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

fn edit_instruction(kw: &Keyword) -> String {
    match kw.category {
        Category::ConcreteObject => format!("Replace the {0} in image 1 with the {0} shown in image 2.", kw.text),
        Category::AbstractLocal => format!("Make the subject in image 1 have the same {} as image 2.", kw.text),
        Category::AbstractGlobal => format!("Give image 1 the same {} as image 2.", kw.text),
    }
}

fn gen_instruction(keywords: &[&Keyword]) -> String {
    let parts: Vec<String> = keywords
        .iter()
        .enumerate()
        .map(|(i, k)| format!("the {} of image {}", k.text, i + 1))
        .collect();
    let joined = match parts.as_slice() {
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
        [] => String::new(),
    };
    format!("Create an image that combines {joined}.")
}

/// Image paths inside manifests are relative to the output directory.
fn rel(stage: Stage, id: &str, suffix: &str) -> String {
    format!("{}/{id}_{suffix}.png", stage.as_str())
}

struct ItemCtx<'a> {
    out: &'a Path,
    rng: SeededRng,
    seeds: Vec<u64>,
}

impl ItemCtx<'_> {
    fn call(&mut self, backend: &dyn Backend, req: BackendRequest) -> Result<crate::backend::BackendResponse> {
        let seed = self.rng.next_u64();
        self.seeds.push(seed);
        backend.call(&BackendRequest { seed, ..req })
    }

    fn text(&mut self, backend: &dyn Backend, req: BackendRequest) -> Result<String> {
        Ok(self.call(backend, req)?.expect_text(backend.id())?.trim().to_string())
    }

    fn image(&mut self, backend: &dyn Backend, req: BackendRequest) -> Result<Vec<u8>> {
        let mut imgs = self.call(backend, req)?.expect_images(backend.id(), 1)?;
        Ok(imgs.remove(0))
    }

    fn save(&self, path: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.out.join(path), bytes)
    }
}

/// Real images available for stage 2, with caption sidecars (`name.txt`).
fn real_images(store: Option<&Path>) -> Result<Vec<PathBuf>> {
    let Some(dir) = store else { return Ok(Vec::new()) };
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(PipelineError::io(format!("listing {}", dir.display()), e)),
    };
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

impl Pipeline {
    pub fn new(config: PipelineConfig, spec: RegistrySpec) -> Result<Self> {
        config.validate()?;
        let registry = BackendRegistry::build(&spec)?;
        let hash = config.hash(&spec);
        Ok(Self {
            config,
            spec,
            registry,
            hash,
        })
    }

    /// Uses an already-built registry (for custom backends).
    pub fn with_registry(config: PipelineConfig, spec: RegistrySpec, registry: BackendRegistry) -> Result<Self> {
        config.validate()?;
        let hash = config.hash(&spec);
        Ok(Self {
            config,
            spec,
            registry,
            hash,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.output_dir
    }

    pub fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.out_dir().join(stage.manifest_name())
    }

    fn item_rng(&self, stage: Stage, index: usize) -> SeededRng {
        SeededRng::derive(self.config.seed, &[stage.number(), index as u64])
    }

    fn backends(&self, roles: &[&str]) -> BTreeMap<String, String> {
        self.registry
            .ids()
            .into_iter()
            .filter(|(r, _)| roles.contains(r))
            .map(|(r, id)| (r.to_string(), id.to_string()))
            .collect()
    }

    fn header(&self, stage: Stage, parent: Option<String>) -> impl Fn(usize) -> String + Sync + '_ {
        move |records| {
            let h = ManifestHeader {
                schema_version: SCHEMA_VERSION,
                stage,
                config_hash: self.hash.clone(),
                parent_manifest: parent.clone(),
                vocabulary_version: VOCABULARY_VERSION.to_string(),
                records,
            };
            to_line(&h).trim_end().to_string()
        }
    }

    fn plan<'a>(&'a self, stage: Stage, count: usize, header: &'a (dyn Fn(usize) -> String + Sync)) -> StagePlan<'a> {
        StagePlan {
            name: stage.as_str(),
            out_dir: self.out_dir(),
            config_hash: &self.hash,
            ids: (0..count).map(|i| stage.item_id(i)).collect(),
            workers: self.config.workers,
            header,
        }
    }

    pub fn run(&self, stage: Stage, control: RunControl) -> Result<StageSummary> {
        let summary = match stage {
            Stage::Stage1 => self.stage1(control),
            Stage::Stage2 => self.stage2(control),
            Stage::Stage3 => self.stage3(control),
        }?;
        if self.config.strict && !summary.interrupted {
            let report = validate_manifest(&summary.manifest)?;
            if report.total() > 0 {
                return Err(PipelineError::Integrity(format!(
                    "{stage} manifest has {} violation(s): {}",
                    report.total(),
                    report.summary_line()
                )));
            }
        }
        Ok(summary)
    }

    /// Continues the first unfinished stage. `Ok(None)` when every started
    /// stage is already complete.
    pub fn resume(&self) -> Result<Option<StageSummary>> {
        let mut any = false;
        for stage in Stage::ALL {
            if let Some(state) = JobState::load(self.out_dir(), stage.as_str())? {
                any = true;
                if !state.finished {
                    return self.run(stage, RunControl { resume: true, limit: None }).map(Some);
                }
            }
        }
        if any {
            Ok(None)
        } else {
            Err(PipelineError::Dependency(format!("no pipeline job found under {}", self.out_dir().display())))
        }
    }

    pub fn stage1(&self, control: RunControl) -> Result<StageSummary> {
        let stage = Stage::Stage1;
        let backends = (&*self.registry.llm, &*self.registry.t2i);
        let header = self.header(stage, None);
        run_stage(&self.plan(stage, self.config.counts.stage1, &header), control, |i| {
            let id = stage.item_id(i);
            let mut ctx = ItemCtx {
                out: self.out_dir(),
                rng: self.item_rng(stage, i),
                seeds: Vec::new(),
            };
            let keyword = sample_keyword(&mut ctx.rng, &self.config)?;
            let draft_a = scene_prompt(&mut ctx.rng, &keyword);
            let draft_b = scene_prompt(&mut ctx.rng, &keyword);
            let prompt_a = ctx.text(backends.0, BackendRequest::new(Task::ComposePrompt, draft_a, 0))?;
            let prompt_b = ctx.text(backends.0, BackendRequest::new(Task::ComposePrompt, draft_b, 0))?;
            let req = BackendRequest::new(Task::T2iPair, prompt_a.clone(), 0)
                .instruction(prompt_b.clone())
                .element(keyword.text.clone());
            let images = ctx.call(backends.1, req)?.expect_images(backends.1.id(), 2)?;
            let (image_a, image_b) = (rel(stage, &id, "a"), rel(stage, &id, "b"));
            ctx.save(&image_a, &images[0])?;
            ctx.save(&image_b, &images[1])?;
            Ok(PairRecord {
                id,
                image_a,
                image_b,
                keyword,
                prompt_a,
                prompt_b,
                seed: *ctx.seeds.last().expect("t2i was called"),
            })
        })
    }

    pub fn stage2(&self, control: RunControl) -> Result<StageSummary> {
        let stage = Stage::Stage2;
        let store = real_images(self.registry.real_image_store.as_deref())?;
        if self.config.real_image_ratio > 0.0 && store.is_empty() && self.config.counts.stage2 > 0 {
            return Err(PipelineError::Config(format!(
                "real_image_ratio is {} but the real-image store {} holds no PNG images",
                self.config.real_image_ratio,
                self.registry
                    .real_image_store
                    .as_deref()
                    .map_or("(unset)".to_string(), |p| p.display().to_string())
            )));
        }
        let reg = &self.registry;
        let backends = self.backends(&["t2i", "extractor", "editor", "llm", "vlm"]);
        let header = self.header(stage, None);
        run_stage(&self.plan(stage, self.config.counts.stage2, &header), control, |i| {
            let id = stage.item_id(i);
            let mut ctx = ItemCtx {
                out: self.out_dir(),
                rng: self.item_rng(stage, i),
                seeds: Vec::new(),
            };
            let use_real = ctx.rng.uniform() < self.config.real_image_ratio;
            let (target, keyword, origin) = if use_real {
                let path = &store[ctx.rng.below(store.len())];
                let bytes = read_png(path)?;
                let caption = std::fs::read_to_string(path.with_extension("txt")).unwrap_or_default();
                let c = ctx
                    .rng
                    .weighted_index(&self.config.category_weights.as_array())
                    .ok_or_else(|| PipelineError::Config("category weights are all zero".into()))?;
                let category = Category::ALL[c];
                let req = BackendRequest::new(Task::DescribeKeyword, caption.trim(), 0)
                    .element(category.as_str())
                    .images(vec![bytes.clone()]);
                let text = ctx.text(&*reg.vlm, req)?.to_lowercase();
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                (bytes, Keyword::new(text, category)?, format!("real:{name}"))
            } else {
                let keyword = sample_keyword(&mut ctx.rng, &self.config)?;
                let draft = scene_prompt(&mut ctx.rng, &keyword);
                let prompt = ctx.text(&*reg.llm, BackendRequest::new(Task::ComposePrompt, draft, 0))?;
                let req = BackendRequest::new(Task::T2i, prompt, 0).element(keyword.text.clone());
                (ctx.image(&*reg.t2i, req)?, keyword, "t2i".to_string())
            };
            let reference = ctx.image(
                &*reg.extractor,
                BackendRequest::new(Task::Extract, format!("isolate the {}", keyword.text), 0)
                    .element(keyword.text.clone())
                    .images(vec![target.clone()]),
            )?;
            let source = ctx.image(
                &*reg.editor,
                BackendRequest::new(Task::Edit, format!("change the {} to something different", keyword.text), 0)
                    .element(keyword.text.clone())
                    .images(vec![target.clone()]),
            )?;
            let instruction = ctx.text(
                &*reg.llm,
                BackendRequest::new(Task::WriteInstruction, edit_instruction(&keyword), 0).element(keyword.text.clone()),
            )?;
            if !instruction.to_lowercase().contains(&keyword.text.to_lowercase()) {
                return Err(PipelineError::backend(
                    reg.llm.id(),
                    format!("instruction `{instruction}` does not mention keyword `{}`", keyword.text),
                ));
            }
            let (t, s, r) = (rel(stage, &id, "target"), rel(stage, &id, "source"), rel(stage, &id, "ref1"));
            ctx.save(&t, &target)?;
            ctx.save(&s, &source)?;
            ctx.save(&r, &reference)?;
            Ok(EditTuple {
                id,
                source_image: s,
                instruction,
                reference_images: vec![r],
                target_image: t,
                keyword,
                provenance: Provenance {
                    stage,
                    backends: backends.clone(),
                    seeds: ctx.seeds,
                    origin,
                },
            })
        })
    }

    pub fn stage3(&self, control: RunControl) -> Result<StageSummary> {
        let stage = Stage::Stage3;
        let parent_path = self.manifest_path(Stage::Stage2);
        let finished = JobState::load(self.out_dir(), Stage::Stage2.as_str())?.is_some_and(|s| s.finished);
        if !parent_path.exists() || !finished {
            return Err(PipelineError::Dependency(format!(
                "stage3 needs a complete stage-2 manifest at {}; run stage2 first",
                parent_path.display()
            )));
        }
        let (header, parents) = read_manifest::<EditTuple>(&parent_path)?;
        if header.stage != Stage::Stage2 {
            return Err(PipelineError::Dependency(format!(
                "{} is a {} manifest, not stage2",
                parent_path.display(),
                header.stage
            )));
        }
        let count = self.config.counts.stage3.min(parents.len());
        if count < self.config.counts.stage3 {
            log::warn!("stage3: only {} edit tuple(s) available; producing {count}", parents.len());
        }
        let reg = &self.registry;
        let backends = self.backends(&["extractor", "llm"]);
        let header = self.header(stage, Some(Stage::Stage2.manifest_name()));
        let plan = self.plan(stage, count, &header);
        run_stage(&plan, control, |i| {
            let id = stage.item_id(i);
            let parent = &parents[i];
            let mut ctx = ItemCtx {
                out: self.out_dir(),
                rng: self.item_rng(stage, i),
                seeds: Vec::new(),
            };
            for f in std::iter::once(&parent.source_image)
                .chain(&parent.reference_images)
                .chain(std::iter::once(&parent.target_image))
            {
                if !self.out_dir().join(f).is_file() {
                    return Err(PipelineError::Input(format!("parent {} is missing file {f}", parent.id)));
                }
            }
            let source = read_png(&self.out_dir().join(&parent.source_image))?;
            let existing = parent.reference_images.len();
            let total = 1 + ctx
                .rng
                .weighted_index(&self.config.reference_count_weights)
                .ok_or_else(|| PipelineError::Config("reference count weights are all zero".into()))?;
            let new = total.saturating_sub(existing).min(MAX_REFERENCES.saturating_sub(existing));
            let mut keywords = vec![parent.keyword.clone()];
            while keywords.len() < new + 1 {
                let k = sample_keyword(&mut ctx.rng, &self.config)?;
                if !keywords.iter().any(|e| e.text == k.text) {
                    keywords.push(k);
                }
            }
            let mut references = parent.reference_images.clone();
            for (j, kw) in keywords.iter().skip(1).enumerate() {
                let img = ctx.image(
                    &*reg.extractor,
                    BackendRequest::new(Task::Extract, format!("isolate the {}", kw.text), 0)
                        .element(kw.text.clone())
                        .images(vec![source.clone()]),
                )?;
                let path = rel(stage, &id, &format!("ref{}", existing + j + 1));
                ctx.save(&path, &img)?;
                references.push(path);
            }
            // the stage-2 references all depict the parent keyword
            let mut mentions: Vec<&Keyword> = vec![&parent.keyword; existing];
            mentions.extend(keywords.iter().skip(1));
            let instruction = ctx.text(&*reg.llm, BackendRequest::new(Task::WriteInstruction, gen_instruction(&mentions), 0))?;
            Ok(GenTuple {
                id,
                reference_images: references,
                instruction,
                target_image: parent.target_image.clone(),
                parent_edit_tuple: parent.id.clone(),
                provenance: Provenance {
                    stage,
                    backends: backends.clone(),
                    seeds: ctx.seeds,
                    origin: format!("from:{}", parent.id),
                },
            })
        })
    }

    pub fn spec(&self) -> &RegistrySpec {
        &self.spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instruction_templates_mention_keyword() {
        for c in Category::ALL {
            let k = Keyword::new("lighting", c).unwrap();
            assert!(edit_instruction(&k).contains("lighting"));
        }
        let a = Keyword::new("hat", Category::ConcreteObject).unwrap();
        let b = Keyword::new("texture", Category::AbstractLocal).unwrap();
        assert_eq!(
            gen_instruction(&[&a, &b, &a]),
            "Create an image that combines the hat of image 1, the texture of image 2 and the hat of image 3."
        );
    }
}
