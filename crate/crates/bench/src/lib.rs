//! Shared fixtures for the criterion benches.

use fusescan_core::geometry::PointCloud;
use fusescan_core::harness::{synth_scene, SceneSpec};
use fusescan_core::{Result, SeededRng, Tensor};

/// An `n x c` input with entries uniform in `[-1, 1]`.
pub fn uniform_input(n: usize, c: usize, seed: u64) -> Result<Tensor> {
    Tensor::new(vec![n, c], SeededRng::new(seed).uniform_vec(n * c, -1.0, 1.0))
}

/// The synthetic scene point cloud for `seed` together with its spec.
pub fn scene_cloud(seed: u64) -> Result<(SceneSpec, PointCloud)> {
    let spec = SceneSpec { seed, ..SceneSpec::default() };
    let scene = synth_scene(&spec)?;
    Ok((spec, scene.cloud))
}
