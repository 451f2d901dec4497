use std::path::{Path, PathBuf};

use refmix_core::dit::checkpoint::{load_adapter, load_params, save_adapter, save_params};
use refmix_core::dit::text::{embed_prompt, DEFAULT_TEXT_TOKENS};
use refmix_core::dit::toy::{desk_setup, train_loop};
use refmix_core::dit::{
    euler_sample, lora_gate, pack_sequence, DitConfig, DitModel, DitParams, LatentGrid, LoraMode, SamplerConfig,
    MAX_REFERENCES,
};
use refmix_core::render::{latent_to_rgb, rgb_to_latent};
use refmix_core::{SeededRng, Tensor};
use refmix_pipeline::image_io::{decode_rgb, encode_rgb, read_png, write_atomic};

use crate::config::CliConfig;
use crate::error::{CliError, Result, EXIT_OK};

/// Pixels per latent cell in sampled images.
pub const SAMPLE_CELL: usize = 8;

pub fn base_path(dir: &Path) -> PathBuf {
    dir.join("base.ckpt")
}

pub fn adapter_path(dir: &Path, mode: LoraMode) -> PathBuf {
    dir.join(format!("{mode}.ckpt"))
}

pub struct TrainSummary {
    pub mode: LoraMode,
    pub losses: Vec<f64>,
    pub final_loss: f64,
    pub checkpoint: PathBuf,
}

impl TrainSummary {
    pub fn initial_loss(&self) -> f64 {
        self.losses.first().copied().unwrap_or(self.final_loss)
    }
}

/// Trains one adapter per mode on the fixed desk batch. Base weights and each
/// adapter go to separate checkpoint files.
pub fn train_toy(config: &CliConfig, modes: &[LoraMode]) -> Result<Vec<TrainSummary>> {
    let seed = config.u64("training.seed");
    let steps = config.usize("training.steps");
    let lr = config.f64("training.learning_rate");
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(CliError::Usage(format!("training.learning_rate must be a finite non-negative number, got {lr}")));
    }
    let dir = config.path("paths.checkpoints");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Usage(format!("creating {}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for &mode in modes {
        let setup = desk_setup(seed, mode)?;
        let run = train_loop(&setup.params, setup.adapter, &setup.batch, lr, steps)?;
        save_params(&setup.params, &base_path(&dir))?;
        let checkpoint = adapter_path(&dir, mode);
        save_adapter(&run.adapter, &checkpoint)?;
        out.push(TrainSummary {
            mode,
            losses: run.losses,
            final_loss: run.final_loss,
            checkpoint,
        });
    }
    Ok(out)
}

pub fn print_train(summaries: &[TrainSummary], json: bool) {
    if json {
        let doc: Vec<_> = summaries
            .iter()
            .map(|s| {
                serde_json::json!({
                    "mode": s.mode.as_str(),
                    "steps": s.losses.len(),
                    "initial_loss": s.initial_loss(),
                    "final_loss": s.final_loss,
                    "checkpoint": s.checkpoint,
                })
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&doc).expect("json serializes"));
        return;
    }
    for s in summaries {
        let n = s.losses.len();
        let marks: Vec<String> = (0..n)
            .step_by((n / 4).max(1))
            .map(|k| format!("step {k}: {:.6}", s.losses[k]))
            .collect();
        println!("[{}] {}", s.mode, marks.join(", "));
        println!(
            "[{}] initial loss {:.6}, final loss {:.6} after {n} steps (ratio {:.4})",
            s.mode,
            s.initial_loss(),
            s.final_loss,
            s.final_loss / s.initial_loss()
        );
        println!("[{}] adapter written to {}", s.mode, s.checkpoint.display());
    }
}

pub struct SampleRequest<'a> {
    pub prompt: &'a str,
    pub references: &'a [PathBuf],
    pub lora: Option<LoraMode>,
    pub seed: u64,
    pub out: &'a Path,
}

fn base_params(config: &CliConfig) -> Result<DitParams> {
    let path = base_path(&config.path("paths.checkpoints"));
    if path.is_file() {
        Ok(load_params(&path)?)
    } else {
        log::info!("no base checkpoint at {}, using seeded weights", path.display());
        Ok(DitParams::init(DitConfig::default(), &mut SeededRng::derive(config.u64("model.seed"), &[0]))?)
    }
}

/// Samples one image and writes it as PNG. Returns whether an adapter was
/// applied.
pub fn sample(config: &CliConfig, req: &SampleRequest<'_>) -> Result<bool> {
    if req.references.len() > MAX_REFERENCES {
        return Err(CliError::Usage(format!(
            "{} reference images given, at most {MAX_REFERENCES} are supported",
            req.references.len()
        )));
    }
    let params = base_params(config)?;
    let grid = config.usize("sampler.grid");
    if grid == 0 {
        return Err(CliError::Usage("sampler.grid must be at least 1".into()));
    }
    let c = params.config.channels;
    let refs = req
        .references
        .iter()
        .map(|p| {
            let (w, h, rgb) = decode_rgb(&read_png(p).map_err(CliError::in_context("reading reference"))?)
                .map_err(CliError::in_context(format!("decoding {}", p.display())))?;
            Ok(LatentGrid::new(grid, grid, rgb_to_latent(&rgb, w, h, grid, grid, c)?)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let text = embed_prompt(req.prompt, DEFAULT_TEXT_TOKENS, c);
    let noise = LatentGrid::new(grid, grid, Tensor::zeros(&[grid * grid, c]))?;
    let cond = pack_sequence(&text, &noise, &refs, config.scheme())?;

    let adapter = match req.lora {
        Some(mode) if !lora_gate(&cond) => {
            log::warn!("LoRA gate is off: no reference images, sampling with the base model ({mode} adapter not applied)");
            None
        }
        Some(mode) => {
            let path = adapter_path(&config.path("paths.checkpoints"), mode);
            if !path.is_file() {
                return Err(CliError::Usage(format!("no {mode} adapter at {}; run train-toy first", path.display())));
            }
            Some(load_adapter(&path, mode)?)
        }
        None => None,
    };
    let sampler = SamplerConfig::uniform(config.usize("sampler.steps"), req.seed)?;
    let model = DitModel {
        params: &params,
        adapter: adapter.as_ref(),
    };
    let latent = euler_sample(&sampler, &model, &cond)?;
    let side = (grid * SAMPLE_CELL) as u32;
    let png = encode_rgb(side, side, latent_to_rgb(&latent, grid, grid, SAMPLE_CELL)?).map_err(CliError::in_context("encoding"))?;
    write_atomic(req.out, &png).map_err(CliError::in_context("writing sample"))?;
    Ok(adapter.is_some())
}

pub fn print_sample(out: &Path, adapted: bool) -> u8 {
    println!("{} ({})", out.display(), if adapted { "adapter applied" } else { "base model" });
    EXIT_OK
}
