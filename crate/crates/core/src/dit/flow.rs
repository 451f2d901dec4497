//! Rectified-flow objective and the adapter-only training step.
//!
//! `x_t = (1 − t)·x₀ + t·x₁` with `x₀` noise and `x₁` data; the model regresses
//! the velocity `x₁ − x₀`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::lora::LoraAdapter;
use super::model::{dit_backward, dit_forward, dit_forward_cached, DitParams, ForwardOptions};
use super::packing::PackedSequence;

/// Anything that predicts a velocity for the noise span of `packed` at time
/// `t` (0 = noise, 1 = data).
pub trait VelocityModel {
    fn velocity(&self, packed: &PackedSequence, t: f64) -> Result<Tensor>;
}

impl<F> VelocityModel for F
where
    F: Fn(&PackedSequence, f64) -> Result<Tensor>,
{
    fn velocity(&self, packed: &PackedSequence, t: f64) -> Result<Tensor> {
        self(packed, t)
    }
}

/// The transformer with an optional adapter (applied only when gated on).
#[derive(Debug, Clone, Copy)]
pub struct DitModel<'a> {
    pub params: &'a DitParams,
    pub adapter: Option<&'a LoraAdapter>,
}

impl VelocityModel for DitModel<'_> {
    fn velocity(&self, packed: &PackedSequence, t: f64) -> Result<Tensor> {
        dit_forward(packed, self.params, self.adapter, t)
    }
}

/// One supervised example. `condition` supplies text and reference spans;
/// its noise span is overwritten with `x_t`.
#[derive(Debug, Clone)]
pub struct FlowSample {
    pub x0: Tensor,
    pub x1: Tensor,
    pub condition: PackedSequence,
    pub t: f64,
}

impl FlowSample {
    pub fn interpolated(&self) -> Result<Tensor> {
        self.x0.scale(1.0 - self.t).add(&self.x1.scale(self.t))
    }

    pub fn target(&self) -> Result<Tensor> {
        self.x1.sub(&self.x0)
    }
}

/// Batch mean of `‖v_pred(x_t, t) − (x₁ − x₀)‖²`.
pub fn flow_matching_loss(model: &impl VelocityModel, batch: &[FlowSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Contract("flow-matching loss over an empty batch".into()));
    }
    let mut total = 0.0;
    for sample in batch {
        let packed = sample.condition.with_noise(&sample.interpolated()?)?;
        let diff = model.velocity(&packed, sample.t)?.sub(&sample.target()?)?;
        total += diff.data().iter().map(|d| d * d).sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingHyperparams {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
}

impl TrainingHyperparams {
    /// Adapter training at the original model scale.
    pub fn paper_scale() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 5e-6,
            steps: 0,
        }
    }

    /// Settings for the toy model: four fixed samples, 200 steps.
    pub fn desk_scale() -> Self {
        Self {
            batch_size: 4,
            learning_rate: DESK_LEARNING_RATE,
            steps: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "batch_size and learning_rate must be positive (got {} and {})",
                self.batch_size, self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Desk-scale step size. The sum-of-squares loss is O(100) on 4×4×4 latents,
/// so steps are much smaller than the per-element convention would suggest.
pub const DESK_LEARNING_RATE: f64 = 2e-3;

/// One plain gradient-descent update of the adapter; the base stays frozen.
/// Returns the updated adapter and the loss before the update.
pub fn train_step(params: &DitParams, adapter: &LoraAdapter, batch: &[FlowSample], lr: f64) -> Result<(LoraAdapter, f64)> {
    if batch.is_empty() {
        return Err(Error::Contract("train_step over an empty batch".into()));
    }
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grads: Vec<Tensor> = adapter.tensors().map(|(_, t)| Tensor::zeros(t.shape())).collect();
    let opts = ForwardOptions {
        adapter: Some(adapter),
        ..Default::default()
    };
    for sample in batch {
        let packed = sample.condition.with_noise(&sample.interpolated()?)?;
        let (out, cache) = dit_forward_cached(&packed, params, sample.t, &opts)?;
        let diff = out.velocity.sub(&sample.target()?)?;
        loss += diff.data().iter().map(|d| d * d).sum::<f64>() / n;
        let g = dit_backward(&cache, params, Some(adapter), &diff.scale(2.0 / n))?;
        if let Some(blocks) = g.adapter {
            let flat = blocks.iter().flat_map(|b| b.iter().flat_map(|p| [&p.a, &p.b]));
            for (acc, g) in grads.iter_mut().zip(flat) {
                acc.add_assign(g)?;
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {loss}")));
    }
    let mut updated = adapter.clone();
    for (w, g) in updated.tensors_mut().zip(&grads) {
        for (v, d) in w.data_mut().iter_mut().zip(g.data()) {
            *v -= lr * d;
        }
    }
    Ok((updated, loss))
}
