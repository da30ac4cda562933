//! Voxelization, height-fidelity downsampling, voxel generation with the
//! conflict test, and camera geometry used for fusion.

mod bev;
mod camera;
mod grid;
mod pointcloud;
mod voxel;

pub use bev::lift_to_bev;
pub use camera::{project_to_image, CameraModel, Projection};
pub use grid::GridSpec;
pub use pointcloud::{PointCloud, POINTCLOUD_MAGIC};
pub use voxel::{
    append_generated, downsample_voxels, downsample_voxels_with, feature_saliency, generate_salient_voxels, scatter_mean, voxelize,
    CentroidMode, MergeWeighting, SparseVoxelSet, CANDIDATE_OFFSETS,
};
