//! Euler integration of the flow from noise (schedule time 1) to data (0).
//!
//! The schedule runs `1 = t₀ > … > t_n = 0` and the update is
//! `x ← x + (t_{k+1} − t_k)·v(x, t_k)`, with `v` the velocity in schedule time.
//! A model trained on `x_s = (1 − s)·noise + s·data` maps to schedule time by
//! `v(x, t) = −model(x, 1 − t)`.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::flow::VelocityModel;
use super::packing::PackedSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub schedule: Vec<f64>,
    pub seed: u64,
}

impl SamplerConfig {
    /// Evenly spaced schedule with `steps` updates.
    pub fn uniform(steps: usize, seed: u64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("sampler needs at least one step".into()));
        }
        let schedule = (0..=steps).map(|k| 1.0 - k as f64 / steps as f64).collect();
        let c = Self { steps, schedule, seed };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.schedule.len() != self.steps + 1 {
            return Err(Error::Config(format!(
                "schedule must have steps + 1 = {} entries, got {}",
                self.steps + 1,
                self.schedule.len()
            )));
        }
        if self.schedule[0] != 1.0 || *self.schedule.last().expect("nonempty") != 0.0 {
            return Err(Error::Config("schedule must start at 1 and end at 0".into()));
        }
        if self.schedule.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Config("schedule must be strictly decreasing".into()));
        }
        Ok(())
    }

    /// Initial noise for a `[tokens, channels]` latent. Drawn from the first
    /// split of the seed so that other branches can take later splits.
    pub fn initial_noise(&self, shape: &[usize]) -> Tensor {
        SeededRng::new(self.seed).split().normal(shape)
    }
}

/// Runs the Euler updates from `x0` with a schedule-time velocity.
pub fn euler_integrate(
    x0: Tensor,
    schedule: &[f64],
    mut velocity: impl FnMut(&Tensor, f64) -> Result<Tensor>,
) -> Result<Tensor> {
    let mut x = x0;
    for w in schedule.windows(2) {
        let v = velocity(&x, w[0])?;
        x = x.add(&v.scale(w[1] - w[0]))?;
    }
    Ok(x)
}

/// Samples the noise span of `condition` from seeded noise.
pub fn euler_sample(config: &SamplerConfig, model: &impl VelocityModel, condition: &PackedSequence) -> Result<Tensor> {
    config.validate()?;
    let shape = [condition.noise_span().len(), condition.channels()];
    let x0 = config.initial_noise(&shape);
    euler_integrate(x0, &config.schedule, |x, t| {
        let packed = condition.with_noise(x)?;
        Ok(model.velocity(&packed, 1.0 - t)?.scale(-1.0))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dit::packing::{pack_sequence, LatentGrid};
    use crate::encoding::EncodingScheme;

    fn condition() -> PackedSequence {
        let mut rng = SeededRng::new(99);
        let noise = LatentGrid::new(2, 2, Tensor::zeros(&[4, 3])).unwrap();
        pack_sequence(&rng.normal(&[1, 3]), &noise, &[], EncodingScheme::default()).unwrap()
    }

    #[test]
    fn single_step_is_one_euler_update() {
        let mut rng = SeededRng::new(1);
        let x0 = rng.normal(&[4, 3]);
        let v = |x: &Tensor, t: f64| Ok(x.map(|a| a * a + t));
        let out = euler_integrate(x0.clone(), &[1.0, 0.0], v).unwrap();
        let want = x0.add(&x0.map(|a| a * a + 1.0).scale(-1.0)).unwrap();
        assert_eq!(out, want);
    }

    #[test]
    fn zero_velocity_returns_initial_noise() {
        let cfg = SamplerConfig::uniform(6, 17).unwrap();
        let zero = |p: &PackedSequence, _t: f64| Ok(Tensor::zeros(&[p.noise_span().len(), p.channels()]));
        let out = euler_sample(&cfg, &zero, &condition()).unwrap();
        assert_eq!(out, cfg.initial_noise(&[4, 3]));
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SamplerConfig::uniform(4, 5).unwrap();
        let model = |p: &PackedSequence, t: f64| Ok(p.noise_tokens().map(|v| (v * t).sin()));
        let a = euler_sample(&cfg, &model, &condition()).unwrap();
        let b = euler_sample(&cfg, &model, &condition()).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn schedule_validation() {
        assert!(SamplerConfig::uniform(0, 1).is_err());
        let bad = SamplerConfig {
            steps: 2,
            schedule: vec![1.0, 1.0, 0.0],
            seed: 0,
        };
        assert!(bad.validate().is_err());
        let bad_end = SamplerConfig {
            steps: 1,
            schedule: vec![1.0, 0.1],
            seed: 0,
        };
        assert!(bad_end.validate().is_err());
        assert_eq!(SamplerConfig::uniform(4, 0).unwrap().schedule, vec![1.0, 0.75, 0.5, 0.25, 0.0]);
    }
}
