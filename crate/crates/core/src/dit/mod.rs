//! Toy diffusion transformer: packing, gated LoRA, rectified-flow training,
//! Euler sampling and dual-branch generation.

pub mod checkpoint;
pub mod dual;
pub mod flow;
pub mod lora;
pub mod model;
pub mod packing;
pub mod sampler;
pub mod text;
pub mod toy;

pub use dual::{dual_branch_generate, prompt_condition, DualBranchOutput, DualBranchRequest};
pub use flow::{flow_matching_loss, train_step, DitModel, FlowSample, TrainingHyperparams, VelocityModel};
pub use lora::{apply_lora, lora_gate, LoraAdapter, LoraMode, LoraPair, LoraTarget};
pub use model::{dit_backward, dit_forward, dit_forward_cached, dit_forward_with, DitConfig, DitGrads, DitParams, ForwardOptions};
pub use packing::{pack_sequence, pack_sequence_capped, LatentGrid, PackedSequence, Span, SpanKind, MAX_REFERENCES};
pub use sampler::{euler_integrate, euler_sample, SamplerConfig};
