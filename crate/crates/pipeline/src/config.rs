use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::RegistrySpec;
use crate::error::{PipelineError, Result};
use crate::keywords::{Category, VOCABULARY_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub stage1: usize,
    pub stage2: usize,
    pub stage3: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryWeights {
    pub concrete_object: f64,
    pub abstract_local: f64,
    pub abstract_global: f64,
}

impl CategoryWeights {
    pub fn as_array(&self) -> [f64; 3] {
        [self.concrete_object, self.abstract_local, self.abstract_global]
    }

    pub fn weight(&self, c: Category) -> f64 {
        self.as_array()[c as usize]
    }
}

impl Default for CategoryWeights {
    fn default() -> Self {
        Self {
            concrete_object: 0.4,
            abstract_local: 0.35,
            abstract_global: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub counts: StageCounts,
    pub category_weights: CategoryWeights,
    /// Weights over the total reference count (1 to 5) of generation tuples.
    pub reference_count_weights: [f64; 5],
    /// Fraction of edit tuples whose target comes from the real-image store.
    pub real_image_ratio: f64,
    pub output_dir: PathBuf,
    pub workers: usize,
    /// Treat validation violations after a stage as errors.
    pub strict: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            counts: StageCounts {
                stage1: 10,
                stage2: 10,
                stage3: 10,
            },
            category_weights: CategoryWeights::default(),
            reference_count_weights: [0.1, 0.35, 0.3, 0.15, 0.1],
            real_image_ratio: 0.5,
            output_dir: PathBuf::from("out"),
            workers: 4,
            strict: false,
        }
    }
}

const WEIGHT_TOL: f64 = 1e-9;

fn check_weights(name: &str, w: &[f64], errors: &mut Vec<String>) {
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        errors.push(format!("{name} must be finite and non-negative"));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_TOL {
        errors.push(format!("{name} must sum to 1 (got {sum})"));
    }
}

impl PipelineConfig {
    /// Reports every problem at once.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        check_weights("category_weights", &self.category_weights.as_array(), &mut errors);
        check_weights("reference_count_weights", &self.reference_count_weights, &mut errors);
        if !(0.0..=1.0).contains(&self.real_image_ratio) {
            errors.push(format!("real_image_ratio must lie in [0, 1] (got {})", self.real_image_ratio));
        }
        if self.workers == 0 {
            errors.push("workers must be at least 1".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Config(errors.join("; ")))
        }
    }

    /// Identifies everything that influences manifest contents. The output
    /// directory and worker count are excluded.
    pub fn hash(&self, registry: &RegistrySpec) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            seed: u64,
            counts: StageCounts,
            category_weights: CategoryWeights,
            reference_count_weights: [f64; 5],
            real_image_ratio: f64,
            strict: bool,
            registry: &'a RegistrySpec,
            vocabulary: &'a str,
        }
        let h = Hashed {
            seed: self.seed,
            counts: self.counts,
            category_weights: self.category_weights,
            reference_count_weights: self.reference_count_weights,
            real_image_ratio: self.real_image_ratio,
            strict: self.strict,
            registry,
            vocabulary: VOCABULARY_VERSION,
        };
        let digest = Sha256::digest(serde_json::to_vec(&h).expect("config serializes"));
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn all_errors_reported_together() {
        let c = PipelineConfig {
            category_weights: CategoryWeights {
                concrete_object: 0.5,
                abstract_local: 0.5,
                abstract_global: 0.5,
            },
            real_image_ratio: 2.0,
            workers: 0,
            ..Default::default()
        };
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("category_weights") && msg.contains("real_image_ratio") && msg.contains("workers"));
    }

    #[test]
    fn hash_tracks_seed_not_output_dir() {
        let spec = RegistrySpec::default();
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            output_dir: "elsewhere".into(),
            workers: 1,
            ..a.clone()
        };
        let c = PipelineConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(&spec), b.hash(&spec));
        assert_ne!(a.hash(&spec), c.hash(&spec));
    }
}
