//! Toy attention stacks: patch embedding, the coarse global branch with
//! query/key tracing and key gating, the windowed refiner with depth and
//! pose heads, and exact attention multiply-add accounting.

mod attention;
mod checkpoint;
mod config;
mod flops;
mod params;
mod stack;

pub use attention::{attention_layer, AttentionScope, LayerOutput};
pub use checkpoint::{load_checkpoint, save_checkpoint, MANIFEST};
pub use config::StackConfig;
pub use flops::{count_attention_flops, FlopCount, FlopCounter};
pub use params::{Head, LayerParams, StackParams, DEPTH_PRIOR_LOG};
pub use stack::{
    extract_patches, patchify, patchify_with_code, pose_head, positional_code, run_coarse,
    run_refiner, CoarseOptions, CoarseOutput, KeyGate, Pose, QKTrace, RefinerOutput, POS_AMPLITUDE,
};

/// Convenience for a global attention layer over all tokens.
pub fn global_attention_layer(
    tokens: &crate::tensor::Tensor,
    params: &LayerParams,
    heads: usize,
    key_gate: Option<&[bool]>,
    counter: &mut FlopCounter,
) -> crate::Result<LayerOutput> {
    attention_layer(
        tokens,
        params,
        heads,
        &AttentionScope::Global,
        key_gate,
        false,
        counter,
    )
}
