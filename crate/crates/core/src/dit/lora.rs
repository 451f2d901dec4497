//! Low-rank adapters on the attention projections, gated on reference images.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::packing::PackedSequence;

/// Which task an adapter was trained for. Edit and gen adapters are separate
/// artifacts and are never merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoraMode {
    Edit,
    Gen,
}

impl LoraMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LoraMode::Edit => "edit",
            LoraMode::Gen => "gen",
        }
    }
}

impl fmt::Display for LoraMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LoraMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edit" => Ok(LoraMode::Edit),
            "gen" => Ok(LoraMode::Gen),
            other => Err(Error::Config(format!("unknown LoRA mode `{other}` (expected edit|gen)"))),
        }
    }
}

/// Attention projection an adapter entry modifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoraTarget {
    Query,
    Key,
    Value,
    Output,
}

impl LoraTarget {
    pub const ALL: [LoraTarget; 4] = [LoraTarget::Query, LoraTarget::Key, LoraTarget::Value, LoraTarget::Output];

    pub fn name(&self) -> &'static str {
        match self {
            LoraTarget::Query => "w_q",
            LoraTarget::Key => "w_k",
            LoraTarget::Value => "w_v",
            LoraTarget::Output => "w_o",
        }
    }
}

/// `A: [r, d_in]`, `B: [d_out, r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair {
    pub a: Tensor,
    pub b: Tensor,
}

impl LoraPair {
    pub fn rank(&self) -> usize {
        self.a.rows()
    }
}

/// `base + (alpha / r) · B · A`.
pub fn apply_lora(base: &Tensor, pair: &LoraPair, alpha: f64) -> Result<Tensor> {
    let r = pair.rank();
    if r == 0 || pair.b.cols() != r {
        return Err(Error::dim("apply_lora", pair.a.shape(), pair.b.shape()));
    }
    if base.shape() != [pair.b.rows(), pair.a.cols()] {
        return Err(Error::dim("apply_lora", base.shape(), &[pair.b.rows(), pair.a.cols()]));
    }
    base.add(&pair.b.matmul(&pair.a)?.scale(alpha / r as f64))
}

/// Adapter pairs for every block's four attention projections.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    mode: LoraMode,
    rank: usize,
    alpha: f64,
    /// `blocks[i][target as usize]`, targets in [`LoraTarget::ALL`] order.
    blocks: Vec<[LoraPair; 4]>,
}

impl LoraAdapter {
    pub fn new(mode: LoraMode, rank: usize, alpha: f64, blocks: Vec<[LoraPair; 4]>) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Config("LoRA rank must be at least 1".into()));
        }
        if !(alpha > 0.0) {
            return Err(Error::Config(format!("LoRA alpha must be positive, got {alpha}")));
        }
        for block in &blocks {
            for pair in block {
                if pair.a.rows() != rank || pair.b.cols() != rank {
                    return Err(Error::dim("LoraAdapter", pair.a.shape(), pair.b.shape()));
                }
            }
        }
        Ok(Self {
            mode,
            rank,
            alpha,
            blocks,
        })
    }

    /// Standard initialization: `A` Gaussian with std `1/√d_model`, `B` zero,
    /// so the adapter starts as an exact no-op.
    pub fn zero_init(rng: &mut SeededRng, mode: LoraMode, num_blocks: usize, d_model: usize, rank: usize, alpha: f64) -> Result<Self> {
        let std = 1.0 / (d_model as f64).sqrt();
        let blocks = (0..num_blocks)
            .map(|_| {
                std::array::from_fn(|_| LoraPair {
                    a: rng.normal(&[rank, d_model]).scale(std),
                    b: Tensor::zeros(&[d_model, rank]),
                })
            })
            .collect();
        Self::new(mode, rank, alpha, blocks)
    }

    /// Both factors Gaussian; used to exercise gradients away from zero.
    pub fn random(rng: &mut SeededRng, mode: LoraMode, num_blocks: usize, d_model: usize, rank: usize, alpha: f64, std: f64) -> Result<Self> {
        let blocks = (0..num_blocks)
            .map(|_| {
                std::array::from_fn(|_| LoraPair {
                    a: rng.normal(&[rank, d_model]).scale(std),
                    b: rng.normal(&[d_model, rank]).scale(std),
                })
            })
            .collect();
        Self::new(mode, rank, alpha, blocks)
    }

    pub fn mode(&self) -> LoraMode {
        self.mode
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn pair(&self, block: usize, target: LoraTarget) -> &LoraPair {
        &self.blocks[block][target as usize]
    }

    pub fn pair_mut(&mut self, block: usize, target: LoraTarget) -> &mut LoraPair {
        &mut self.blocks[block][target as usize]
    }

    pub fn blocks(&self) -> &[[LoraPair; 4]] {
        &self.blocks
    }

    /// Every factor, in a fixed order: block, target, then A before B.
    pub fn tensors(&self) -> impl Iterator<Item = (String, &Tensor)> {
        self.blocks.iter().enumerate().flat_map(|(i, block)| {
            LoraTarget::ALL.iter().zip(block.iter()).flat_map(move |(t, p)| {
                [
                    (format!("blocks.{i}.{}.lora_a", t.name()), &p.a),
                    (format!("blocks.{i}.{}.lora_b", t.name()), &p.b),
                ]
            })
        })
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.blocks
            .iter_mut()
            .flat_map(|block| block.iter_mut().flat_map(|p| [&mut p.a, &mut p.b]))
    }
}

/// Adapters are active exactly when the sequence carries at least one
/// reference image.
pub fn lora_gate(packed: &PackedSequence) -> bool {
    packed.reference_count() >= 1
}
