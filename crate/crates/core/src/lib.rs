//! Deterministic building blocks for multi-reference image generation
//! experiments at desk scale: dense `f64` kernels, feature-mixing attention,
//! multi-image positional encoding, and a toy diffusion transformer with
//! gated LoRA adapters.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod attention;
pub mod dit;
pub mod encoding;
pub mod error;
pub mod render;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use tensor::Tensor;
