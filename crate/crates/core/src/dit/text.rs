//! Stand-in text encoder: prompts map to fixed pseudo-random embeddings.

use sha2::{Digest, Sha256};

use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Text tokens per prompt used by the toy pipeline.
pub const DEFAULT_TEXT_TOKENS: usize = 4;

/// Stable 64-bit hash of a string (first eight bytes of its SHA-256).
pub fn stable_hash(s: &str) -> u64 {
    let digest = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// `[tokens, channels]` Gaussian embedding seeded by the prompt text.
pub fn embed_prompt(prompt: &str, tokens: usize, channels: usize) -> Tensor {
    SeededRng::new(stable_hash(prompt)).normal(&[tokens, channels])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_prompt_same_embedding() {
        assert_eq!(embed_prompt("a red bag", 4, 3), embed_prompt("a red bag", 4, 3));
        assert_ne!(embed_prompt("a red bag", 4, 3), embed_prompt("a blue bag", 4, 3));
    }

    #[test]
    fn hash_is_pinned() {
        // sha256("") = e3b0c442 98fc1c14 ...
        assert_eq!(stable_hash(""), u64::from_le_bytes([0xe3, 0xb0, 0xc4, 0x42, 0x98, 0xfc, 0x1c, 0x14]));
    }
}
