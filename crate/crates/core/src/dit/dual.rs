//! Two generations run side by side; the target branch attends to the
//! source branch's noise keys/values at every layer and every step.

use crate::attention::SourceKv;
use crate::encoding::EncodingScheme;
use crate::error::Result;
use crate::tensor::Tensor;

use super::model::{dit_forward_with, DitParams, ForwardOptions};
use super::packing::{pack_sequence, LatentGrid, PackedSequence};
use super::sampler::{euler_integrate, SamplerConfig};
use super::text::{embed_prompt, DEFAULT_TEXT_TOKENS};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct DualBranchRequest {
    pub target_prompt: String,
    pub source_prompt: String,
    pub mixing: bool,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualBranchOutput {
    pub target: LatentGrid,
    pub source: LatentGrid,
}

/// Text-only condition for a prompt on an `height × width` latent.
pub fn prompt_condition(prompt: &str, params: &DitParams, height: usize, width: usize, scheme: EncodingScheme) -> Result<PackedSequence> {
    let c = params.config.channels;
    let text = embed_prompt(prompt, DEFAULT_TEXT_TOKENS, c);
    let noise = LatentGrid::new(height, width, Tensor::zeros(&[height * width, c]))?;
    pack_sequence(&text, &noise, &[], scheme)
}

/// Target noise comes from the seed's first split (the same draw
/// [`super::sampler::euler_sample`] uses), source noise from the second.
pub fn dual_branch_generate(request: &DualBranchRequest, config: &SamplerConfig, params: &DitParams) -> Result<DualBranchOutput> {
    config.validate()?;
    let scheme = EncodingScheme::default();
    let (h, w) = (request.height, request.width);
    let tar_cond = prompt_condition(&request.target_prompt, params, h, w, scheme)?;
    let src_cond = prompt_condition(&request.source_prompt, params, h, w, scheme)?;
    let shape = [h * w, params.config.channels];
    let mut root = SeededRng::new(config.seed);
    let mut x_tar = root.split().normal(&shape);
    let mut x_src = root.split().normal(&shape);

    for step in config.schedule.windows(2) {
        let (t, t_next) = (step[0], step[1]);
        // source layers complete before the target consumes them
        let src_opts = ForwardOptions {
            capture_kv: request.mixing,
            ..Default::default()
        };
        let src_out = dit_forward_with(&src_cond.with_noise(&x_src)?, params, 1.0 - t, &src_opts)?;
        let captured: Vec<SourceKv> = src_out.captured;
        let tar_opts = ForwardOptions {
            mixing: request.mixing.then_some(captured.as_slice()),
            ..Default::default()
        };
        let tar_v = dit_forward_with(&tar_cond.with_noise(&x_tar)?, params, 1.0 - t, &tar_opts)?.velocity;

        x_src = euler_integrate(x_src, &[t, t_next], |_, _| Ok(src_out.velocity.scale(-1.0)))?;
        x_tar = euler_integrate(x_tar, &[t, t_next], |_, _| Ok(tar_v.scale(-1.0)))?;
    }
    Ok(DualBranchOutput {
        target: LatentGrid::new(h, w, x_tar)?,
        source: LatentGrid::new(h, w, x_src)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dit::flow::DitModel;
    use crate::dit::model::DitConfig;
    use crate::dit::sampler::euler_sample;

    fn setup() -> (DitParams, SamplerConfig, DualBranchRequest) {
        let params = DitParams::init(DitConfig::default(), &mut SeededRng::new(10)).unwrap();
        let cfg = SamplerConfig::uniform(4, 21).unwrap();
        let req = DualBranchRequest {
            target_prompt: "a leather bag on a table".into(),
            source_prompt: "a leather bag worn by a person".into(),
            mixing: false,
            height: 4,
            width: 4,
        };
        (params, cfg, req)
    }

    #[test]
    fn mixing_off_matches_independent_sampling() {
        let (params, cfg, req) = setup();
        let out = dual_branch_generate(&req, &cfg, &params).unwrap();
        let cond = prompt_condition(&req.target_prompt, &params, 4, 4, EncodingScheme::default()).unwrap();
        let model = DitModel { params: &params, adapter: None };
        let solo = euler_sample(&cfg, &model, &cond).unwrap();
        assert_eq!(out.target.tokens(), &solo);
    }

    #[test]
    fn mixing_changes_target_only() {
        let (params, cfg, mut req) = setup();
        let off = dual_branch_generate(&req, &cfg, &params).unwrap();
        req.mixing = true;
        let on = dual_branch_generate(&req, &cfg, &params).unwrap();
        assert!(on.target.tokens().max_abs_diff(off.target.tokens()).unwrap() > 0.0);
        assert_eq!(on.source, off.source);
    }
}
