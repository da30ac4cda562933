//! Hybrid local/global Mamba blocks, modality alignment, unified-space fusion
//! and effective-receptive-field probing.

mod block;
mod config;
mod erf;
mod fusion;
mod pos;

pub use block::{
    block_backward, block_forward, global_backward, global_forward, global_mamba, hybrid_block_forward, local_backward, local_forward,
    local_mamba, token_pos_embedding, BlockParams, BlockTrace, GlobalTrace, HybridStack, LocalTrace, ScanPair,
};
pub use config::{HybridBlockConfig, PipelineConfig};
pub use erf::{erf_coverage, erf_probe, IdentityPipeline, Pipeline};
pub use fusion::{
    fuse_bev_space, fuse_bev_space_with, fuse_image_space, image_plane_merge, modality_align, voxel_tokens, voxels_to_bev, ImageFusion,
};
pub use pos::pos_embedding;
