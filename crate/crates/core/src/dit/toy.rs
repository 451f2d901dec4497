//! Fixed toy data and the desk-scale training loop.

use crate::encoding::EncodingScheme;
use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::flow::{train_step, FlowSample};
use super::lora::LoraAdapter;
use super::model::DitParams;
use super::packing::{pack_sequence, LatentGrid};
use super::text::{embed_prompt, DEFAULT_TEXT_TOKENS};

/// Smooth `height × width × channels` pattern; `phase` varies it per sample.
pub fn pattern_latent(height: usize, width: usize, channels: usize, phase: f64) -> Tensor {
    let mut t = Tensor::zeros(&[height * width, channels]);
    for r in 0..height {
        for c in 0..width {
            for ch in 0..channels {
                let v = (0.9 * r as f64 + 0.7 * c as f64 + 1.3 * ch as f64 + phase).sin();
                t.set(r * width + c, ch, v);
            }
        }
    }
    t
}

/// `n` samples, each conditioned on a prompt and one reference latent that
/// shares the target's pattern. Noise and times are fixed by `seed`.
pub fn toy_batch(params: &DitParams, seed: u64, n: usize, height: usize, width: usize, scheme: EncodingScheme) -> Result<Vec<FlowSample>> {
    let c = params.config.channels;
    let mut rng = SeededRng::new(seed);
    (0..n)
        .map(|i| {
            let phase = 0.8 * i as f64;
            let x1 = pattern_latent(height, width, c, phase);
            let reference = LatentGrid::new(height, width, pattern_latent(height, width, c, phase + 0.1))?;
            let text = embed_prompt(&format!("toy sample {i}"), DEFAULT_TEXT_TOKENS, c);
            let noise = LatentGrid::new(height, width, Tensor::zeros(&[height * width, c]))?;
            Ok(FlowSample {
                x0: rng.normal(&[height * width, c]),
                x1,
                condition: pack_sequence(&text, &noise, &[reference], scheme)?,
                t: (i as f64 + 0.5) / n as f64,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub adapter: LoraAdapter,
    /// Loss before each step.
    pub losses: Vec<f64>,
    pub final_loss: f64,
}

/// `steps` gradient-descent updates followed by one final loss evaluation.
pub fn train_loop(params: &DitParams, adapter: LoraAdapter, batch: &[FlowSample], lr: f64, steps: usize) -> Result<TrainRun> {
    let mut adapter = adapter;
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let (next, loss) = train_step(params, &adapter, batch, lr).map_err(|e| match e {
            crate::Error::NonFinite(msg) => crate::Error::NonFinite(format!("step {step}: {msg}")),
            other => other,
        })?;
        losses.push(loss);
        adapter = next;
    }
    let (_, final_loss) = train_step(params, &adapter, batch, 0.0)?;
    Ok(TrainRun {
        adapter,
        losses,
        final_loss,
    })
}

/// Everything a desk-scale run needs, derived from one seed.
#[derive(Debug, Clone)]
pub struct DeskSetup {
    pub params: DitParams,
    pub adapter: LoraAdapter,
    pub batch: Vec<FlowSample>,
}

pub const DESK_GRID: usize = 4;
pub const DESK_RANK: usize = 4;
pub const DESK_ALPHA: f64 = 4.0;

/// Base weights, a zero-init adapter and a fixed four-sample batch.
pub fn desk_setup(seed: u64, mode: super::lora::LoraMode) -> Result<DeskSetup> {
    let mut rng = SeededRng::derive(seed, &[0]);
    let config = super::model::DitConfig::default();
    let params = DitParams::init(config.clone(), &mut rng)?;
    let adapter = LoraAdapter::zero_init(&mut rng, mode, config.num_blocks, config.d_model, DESK_RANK, DESK_ALPHA)?;
    let batch = toy_batch(&params, seed, 4, DESK_GRID, DESK_GRID, EncodingScheme::default())?;
    Ok(DeskSetup { params, adapter, batch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dit::lora::LoraMode;

    #[test]
    fn pattern_is_bounded_and_phase_sensitive() {
        let a = pattern_latent(3, 2, 4, 0.0);
        assert_eq!(a.shape(), &[6, 4]);
        assert!(a.max_abs() <= 1.0);
        assert_ne!(a, pattern_latent(3, 2, 4, 0.1));
        assert_eq!(a.at(0, 0), 0.0);
    }

    #[test]
    fn batch_has_one_reference_and_spread_times() {
        let s = desk_setup(3, LoraMode::Edit).unwrap();
        assert_eq!(s.batch.len(), 4);
        let ts: Vec<f64> = s.batch.iter().map(|b| b.t).collect();
        assert_eq!(ts, vec![0.125, 0.375, 0.625, 0.875]);
        assert!(s.batch.iter().all(|b| b.condition.reference_count() == 1));
    }

    #[test]
    fn zero_steps_reports_initial_loss() {
        let s = desk_setup(1, LoraMode::Gen).unwrap();
        let run = train_loop(&s.params, s.adapter.clone(), &s.batch, 1e-3, 0).unwrap();
        assert!(run.losses.is_empty());
        assert_eq!(run.adapter, s.adapter);
        assert!(run.final_loss > 0.0);
    }
}
