//! Miniature dual-stream MM-DiT.

mod attention;
mod config;
mod layers;
mod mmdit;

pub use attention::{joint_attention, multi_head_attention, StreamAttention};
pub use config::ModelConfig;
pub use layers::{
    adaln_modulate, gated_residual, patch_index, patchify, timestep_embedding, unpatch_index, unpatchify,
    Modulation, MAX_FREQUENCY,
};
pub use mmdit::{FeatureTap, ForwardOutput, MmDit};
