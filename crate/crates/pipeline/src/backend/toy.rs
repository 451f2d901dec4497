use refmix_core::dit::text::{embed_prompt, DEFAULT_TEXT_TOKENS};
use refmix_core::dit::{
    dual_branch_generate, euler_sample, pack_sequence_capped, prompt_condition, DitConfig, DitModel, DitParams,
    DualBranchRequest, LatentGrid, SamplerConfig,
};
use refmix_core::encoding::EncodingScheme;
use refmix_core::render::{latent_to_rgb, rgb_to_latent};
use refmix_core::{SeededRng, Tensor};

use super::{Backend, BackendRequest, BackendResponse, Task};
use crate::error::{PipelineError, Result};
use crate::image_io::{decode_rgb, encode_rgb};

pub const TOY_GRID: usize = 8;
pub const TOY_CELL: usize = 8;
pub const TOY_STEPS: usize = 8;

/// The in-process toy transformer with freshly seeded weights.
pub struct ToyDitBackend {
    id: String,
    params: DitParams,
}

impl ToyDitBackend {
    pub fn new(seed: u64) -> Result<Self> {
        let params = DitParams::init(DitConfig::default(), &mut SeededRng::derive(seed, &[0]))?;
        Ok(Self {
            id: format!("toy-dit:{seed}"),
            params,
        })
    }

    pub(super) fn parse(spec: &str, rest: &str) -> Result<Self> {
        let seed = rest
            .parse()
            .map_err(|_| PipelineError::Config(format!("toy-dit seed in `{spec}` is not an integer")))?;
        let mut b = Self::new(seed)?;
        b.id = spec.to_string();
        Ok(b)
    }

    fn png(&self, tokens: &Tensor) -> Result<Vec<u8>> {
        let side = (TOY_GRID * TOY_CELL) as u32;
        encode_rgb(side, side, latent_to_rgb(tokens, TOY_GRID, TOY_GRID, TOY_CELL)?)
    }

    fn generate(&self, req: &BackendRequest) -> Result<Vec<u8>> {
        let c = self.params.config.channels;
        let refs = req
            .images
            .iter()
            .map(|b| {
                let (w, h, rgb) = decode_rgb(b)?;
                let t = rgb_to_latent(&rgb, w, h, TOY_GRID, TOY_GRID, c)?;
                Ok(LatentGrid::new(TOY_GRID, TOY_GRID, t)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let noise = LatentGrid::new(TOY_GRID, TOY_GRID, Tensor::zeros(&[TOY_GRID * TOY_GRID, c]))?;
        let text = embed_prompt(&req.prompt, DEFAULT_TEXT_TOKENS, c);
        let cond = pack_sequence_capped(&text, &noise, &refs, EncodingScheme::default(), refs.len().max(1))?;
        let model = DitModel {
            params: &self.params,
            adapter: None,
        };
        let out = euler_sample(&SamplerConfig::uniform(TOY_STEPS, req.seed)?, &model, &cond)?;
        self.png(&out)
    }
}

impl Backend for ToyDitBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, req: &BackendRequest) -> Result<BackendResponse> {
        let sampler = SamplerConfig::uniform(TOY_STEPS, req.seed)?;
        match req.task {
            Task::T2i => {
                let cond = prompt_condition(&req.prompt, &self.params, TOY_GRID, TOY_GRID, EncodingScheme::default())?;
                let model = DitModel {
                    params: &self.params,
                    adapter: None,
                };
                let out = euler_sample(&sampler, &model, &cond)?;
                Ok(BackendResponse::images(vec![self.png(&out)?]))
            }
            Task::T2iPair => {
                let request = DualBranchRequest {
                    target_prompt: req.prompt.clone(),
                    source_prompt: req.instruction.clone(),
                    mixing: true,
                    height: TOY_GRID,
                    width: TOY_GRID,
                };
                let out = dual_branch_generate(&request, &sampler, &self.params)?;
                Ok(BackendResponse::images(vec![self.png(out.target.tokens())?, self.png(out.source.tokens())?]))
            }
            Task::Generate => Ok(BackendResponse::images(vec![self.generate(req)?])),
            other => Err(PipelineError::backend(
                &self.id,
                format!("toy-dit serves t2i, t2i_pair and generate, not `{}`", other.as_str()),
            )),
        }
    }
}
