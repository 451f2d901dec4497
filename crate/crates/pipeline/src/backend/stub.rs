use refmix_core::dit::text::stable_hash;

use super::{Backend, BackendRequest, BackendResponse, Task};
use crate::error::{PipelineError, Result};
use crate::image_io::{blend, decode_png, encode_png, extract_region, recolor_quadrant, render_scene};
use crate::bench::IMPERATIVE_VERBS;
use crate::keywords::Category;

/// Deterministic procedural stand-in for every service role.
#[derive(Debug, Clone)]
pub struct StubBackend {
    id: String,
    seed: u64,
    fail_rate: f64,
}


const STOP_WORDS: &[&str] = &[
    "the", "a", "an", "of", "in", "on", "to", "as", "with", "and", "from", "image", "same", "have", "has", "it",
    "its", "that", "this", "like", "match", "matches", "into", "please", "be",
];

impl StubBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            id: format!("stub:{seed}"),
            seed,
            fail_rate: 0.0,
        }
    }

    pub(super) fn parse(spec: &str, rest: &str) -> Result<Self> {
        let (seed, query) = match rest.split_once('?') {
            Some((s, q)) => (s, Some(q)),
            None => (rest, None),
        };
        let seed = seed
            .parse()
            .map_err(|_| PipelineError::Config(format!("stub seed in `{spec}` is not an integer")))?;
        let mut fail_rate = 0.0;
        if let Some(q) = query {
            for pair in q.split('&') {
                match pair.split_once('=') {
                    Some(("fail", v)) => {
                        fail_rate = v
                            .parse::<f64>()
                            .ok()
                            .filter(|r| (0.0..=1.0).contains(r))
                            .ok_or_else(|| PipelineError::Config(format!("fail rate in `{spec}` must lie in [0, 1]")))?;
                    }
                    _ => return Err(PipelineError::Config(format!("unknown stub option `{pair}` in `{spec}`"))),
                }
            }
        }
        Ok(Self {
            id: spec.to_string(),
            seed,
            fail_rate,
        })
    }

    fn hash(&self, parts: &[&str]) -> u64 {
        stable_hash(&format!("{}\u{1f}{}", self.seed, parts.join("\u{1f}")))
    }

    fn injected_failure(&self, req: &BackendRequest) -> bool {
        if self.fail_rate <= 0.0 {
            return false;
        }
        let h = self.hash(&["fail", req.task.as_str(), &req.prompt, &req.seed.to_string(), req.element.as_deref().unwrap_or("")]);
        ((h >> 11) as f64 / (1u64 << 53) as f64) < self.fail_rate
    }

    fn first_image(&self, req: &BackendRequest) -> Result<image::RgbImage> {
        let bytes = req
            .images
            .first()
            .ok_or_else(|| PipelineError::backend(&self.id, format!("{} needs an input image", req.task.as_str())))?;
        decode_png(bytes)
    }

    fn element<'a>(&self, req: &'a BackendRequest) -> Result<&'a str> {
        req.element
            .as_deref()
            .ok_or_else(|| PipelineError::backend(&self.id, format!("{} needs an element", req.task.as_str())))
    }
}

impl Backend for StubBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, req: &BackendRequest) -> Result<BackendResponse> {
        if self.injected_failure(req) {
            return Err(PipelineError::backend(&self.id, "injected failure"));
        }
        let seed = req.seed.to_string();
        match req.task {
            Task::T2i => {
                let layout = self.hash(&["layout", &req.prompt, &seed]);
                let motif = self.hash(&["motif", req.element.as_deref().unwrap_or(&req.prompt)]);
                Ok(BackendResponse::images(vec![encode_png(&render_scene(layout, Some(motif)))?]))
            }
            Task::T2iPair => {
                let motif = self.hash(&["motif", self.element(req)?]);
                let a = render_scene(self.hash(&["layout", &req.prompt, &seed]), Some(motif));
                let b = render_scene(self.hash(&["layout", &req.instruction, &seed]), Some(motif));
                Ok(BackendResponse::images(vec![encode_png(&a)?, encode_png(&b)?]))
            }
            Task::Extract => {
                let img = self.first_image(req)?;
                let out = extract_region(&img, self.hash(&["extract", self.element(req)?]));
                Ok(BackendResponse::images(vec![encode_png(&out)?]))
            }
            Task::Edit => {
                let img = self.first_image(req)?;
                let sel = self.hash(&["edit", req.element.as_deref().unwrap_or(&req.prompt), &seed]);
                Ok(BackendResponse::images(vec![encode_png(&recolor_quadrant(&img, sel))?]))
            }
            Task::ComposePrompt => {
                const CLAUSES: [&str; 4] = ["", ", soft daylight", ", plain background", ", natural colors"];
                let clause = CLAUSES[(self.hash(&["compose", &req.prompt, &seed]) % 4) as usize];
                Ok(BackendResponse::text(format!("{}{clause}.", req.prompt.trim_end_matches('.'))))
            }
            Task::WriteInstruction => Ok(BackendResponse::text(req.prompt.clone())),
            Task::DescribeKeyword => {
                let category: Category = self.element(req)?.parse()?;
                let img = req.images.first().map(|b| stable_hash(&format!("{b:?}"))).unwrap_or(0);
                let vocab = category.vocabulary();
                let pick = self.hash(&["describe", &img.to_string(), &req.prompt, &seed]) as usize % vocab.len();
                Ok(BackendResponse::text(vocab[pick]))
            }
            Task::Normalize => normalize(self, req),
            Task::Judge => {
                let case = self.element(req)?;
                let yes = self.hash(&["judge", case]) % 1000 < 600;
                Ok(BackendResponse::text(if yes {
                    "YES, the output follows the instruction."
                } else {
                    "NO, the requested element does not carry over."
                }))
            }
            Task::Generate => {
                let tint = self.hash(&["generate", &req.prompt, &seed]);
                let out = if req.images.is_empty() {
                    render_scene(tint, Some(self.hash(&["motif", &req.prompt])))
                } else {
                    let imgs = req.images.iter().map(|b| decode_png(b)).collect::<Result<Vec<_>>>()?;
                    blend(&imgs, tint)
                };
                Ok(BackendResponse::images(vec![encode_png(&out)?]))
            }
        }
    }
}

fn color_name(img: &image::RgbImage) -> &'static str {
    let n = (img.width() * img.height()).max(1) as u64;
    let mut acc = [0u64; 3];
    for p in img.pixels() {
        for c in 0..3 {
            acc[c] += p[c] as u64;
        }
    }
    let [r, g, b] = acc.map(|a| a / n);
    const NAMES: [(&str, [u64; 3]); 8] = [
        ("black", [0, 0, 0]),
        ("white", [255, 255, 255]),
        ("red", [200, 40, 40]),
        ("green", [40, 170, 60]),
        ("blue", [40, 60, 200]),
        ("yellow", [220, 210, 50]),
        ("purple", [140, 50, 160]),
        ("grey", [128, 128, 128]),
    ];
    NAMES
        .iter()
        .min_by_key(|(_, c)| {
            let d = |a: u64, b: u64| a.abs_diff(b).pow(2);
            d(r, c[0]) + d(g, c[1]) + d(b, c[2])
        })
        .map(|(n, _)| *n)
        .expect("palette is nonempty")
}

fn normalize(stub: &StubBackend, req: &BackendRequest) -> Result<BackendResponse> {
    let descriptions = req
        .images
        .iter()
        .enumerate()
        .map(|(i, b)| Ok(format!("image {}: a mostly {} scene", i + 1, color_name(&decode_png(b)?))))
        .collect::<Result<Vec<_>>>()?;
    match stub.element(req)? {
        "edit" => {
            let mut out = req.prompt.clone();
            for d in &descriptions {
                out.push_str(&format!(" [{d}]"));
            }
            Ok(BackendResponse::text(out))
        }
        "gen" => {
            let words: Vec<String> = req
                .prompt
                .split(|c: char| !c.is_alphanumeric())
                .map(str::to_lowercase)
                .filter(|w| !w.is_empty() && !STOP_WORDS.contains(&w.as_str()) && !IMPERATIVE_VERBS.contains(&w.as_str()))
                .collect();
            let subject = if words.is_empty() { "the described elements".to_string() } else { words.join(" ") };
            Ok(BackendResponse::text(format!("A detailed picture featuring {subject}.")))
        }
        other => Err(PipelineError::backend(stub.id(), format!("unknown normalization mode `{other}`"))),
    }
}
