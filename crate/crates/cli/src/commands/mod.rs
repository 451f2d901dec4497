pub mod attn;
pub mod bench;
pub mod encode;
pub mod model;
pub mod pipeline;
