use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::geometry::{downsample_voxels, lift_to_bev, voxelize, CentroidMode, GridSpec};
use crate::harness::{lift_features, scene_config_text, synth_scene, MetricsReport, SceneSpec};
use crate::hybrid::{fuse_bev_space, fuse_image_space, modality_align, voxels_to_bev, HybridStack, PipelineConfig};
use crate::numerics::{SeededRng, Tensor};
use crate::tokens::{Modality, TokenSequence};

/// Knobs of the end-to-end fusion run beyond the pipeline configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FuseOptions {
    /// Continuous-mode merges by 2 along every axis before fusion.
    pub stages: u32,
    /// Pixel stride between image tokens.
    pub image_stride: u32,
    /// Camera depths (metres) of the lift-to-BEV bins; mass is spread uniformly.
    pub depth_bins: Vec<f64>,
    /// BEV cell size in metres.
    pub bev_cell: f64,
}

impl Default for FuseOptions {
    fn default() -> Self {
        FuseOptions { stages: 1, image_stride: 8, depth_bins: vec![6.0, 12.0, 24.0, 48.0], bev_cell: 1.6 }
    }
}

#[derive(Debug, Clone)]
pub struct FuseOutput {
    /// One fused token per LiDAR-occupied BEV cell, in lexicographic cell order.
    pub bev: TokenSequence,
    pub report: MetricsReport,
}

fn to_cells(coords: &[[f64; 3]], grid: &GridSpec, scale: f64) -> Vec<[f64; 3]> {
    coords.iter().map(|c| std::array::from_fn(|a| ((c[a] - grid.range_min[a]) / (grid.voxel_size[a] * scale)).max(0.0))).collect()
}

/// Image tokens on a strided pixel lattice of the first camera; raw features
/// are `[object mask, normalized row, 1]`.
fn image_tokens(spec: &SceneSpec, scene: &crate::harness::Scene, stride: u32, channels: usize) -> Result<TokenSequence> {
    let mask = scene.masks.first().ok_or_else(|| Error::invalid("scene has no camera"))?;
    let stride = stride.max(1);
    let mut coords = Vec::new();
    let mut raw = Vec::new();
    for row in (0..mask.height).step_by(stride as usize) {
        for col in (0..mask.width).step_by(stride as usize) {
            coords.push([col as f64, row as f64, 0.0]);
            raw.push(vec![mask.at(col, row).map_or(0.0, |_| 1.0), row as f64 / mask.height as f64, 1.0]);
        }
    }
    let features = lift_features(&Tensor::from_rows(&raw)?, channels, spec.seed ^ 0x5eed)?;
    TokenSequence::uniform(features, coords, Modality::Camera)
}

/// Runs the full pipeline on a synthetic scene: modality alignment, image-plane
/// fusion, lift-to-BEV and BEV fusion.
pub fn run_fuse(config: &PipelineConfig, spec: &SceneSpec, opts: &FuseOptions) -> Result<FuseOutput> {
    config.block.validate()?;
    let c = config.block.channels;
    let scene = synth_scene(spec)?;
    let cam = spec.cameras.first().ok_or_else(|| Error::invalid("scene has no camera"))?;
    let mut vs = voxelize(&scene.cloud, &spec.grid)?;
    for _ in 0..opts.stages {
        vs = downsample_voxels(&vs, [2, 2, 2], CentroidMode::Continuous)?;
    }
    let raw: Vec<Vec<f64>> = (0..vs.len()).map(|j| vec![vs.features().at(j, 0), vs.centroids()[j][2], 1.0]).collect();
    let lidar = TokenSequence::uniform(
        lift_features(&Tensor::from_rows(&raw)?, c, spec.seed)?,
        to_cells(vs.centroids(), &spec.grid, 2f64.powi(opts.stages as i32)),
        Modality::Lidar,
    )?;
    let camera = image_tokens(spec, &scene, opts.image_stride, c)?;

    let rng = SeededRng::new(config.seed);
    let aligner = HybridStack::init(config.block, config.align_depth, &mut rng.fork(1))?;
    let image_stack = HybridStack::init(config.block, config.image_depth, &mut rng.fork(2))?;
    let bev_stack = HybridStack::init(config.block, config.bev_depth, &mut rng.fork(3))?;

    let (lidar, camera) = modality_align(&lidar, &camera, &aligner)?;
    let metric = lidar.with_coords(vs.centroids().to_vec())?;
    let image = fuse_image_space(&metric, &camera, cam, &image_stack)?;
    let mut lidar_features = lidar.features().clone().into_data();
    for (k, &src) in image.lidar_source.iter().enumerate() {
        lidar_features[src * c..(src + 1) * c].copy_from_slice(image.lidar.features().row(k));
    }

    let bev_grid = GridSpec::new(
        spec.grid.range_min,
        spec.grid.range_max,
        [opts.bev_cell, opts.bev_cell, spec.grid.range_max[2] - spec.grid.range_min[2]],
    )?;
    let lidar_bev = voxels_to_bev(&vs.with_features(Tensor::new(vec![vs.len(), c], lidar_features)?)?, &bev_grid)?;
    let n = image.camera.len();
    let weights = Tensor::new(vec![n, opts.depth_bins.len()], vec![1.0 / opts.depth_bins.len() as f64; n * opts.depth_bins.len()])?;
    let camera_bev = lift_to_bev(&image.camera, &weights, &opts.depth_bins, cam, &bev_grid)?;
    let fused = fuse_bev_space(&lidar_bev, &camera_bev, &bev_stack)?;

    let occupied: BTreeSet<(i64, i64)> = vs
        .centroids()
        .iter()
        .filter(|p| (0..2).all(|a| p[a] >= bev_grid.range_min[a] && p[a] < bev_grid.range_max[a]))
        .map(|p| (bev_grid.axis_cell(0, p[0], opts.bev_cell), bev_grid.axis_cell(1, p[1], opts.bev_cell)))
        .collect();
    let out_cells: Vec<(i64, i64)> = fused.coords().iter().map(|c| (c[0] as i64, c[1] as i64)).collect();
    let one_per_cell = out_cells.len() == occupied.len() && out_cells.iter().copied().eq(occupied.iter().copied());

    let text = format!("{config}{}{opts:?}\n", scene_config_text(spec, opts.stages));
    let mut report = MetricsReport::new("fuse", config.seed, &text);
    report.set("points", scene.cloud.len() as f64)?;
    report.set("voxels", vs.len() as f64)?;
    report.set("image_tokens", camera.len() as f64)?;
    report.set("projected_voxels", image.lidar_source.len() as f64)?;
    report.set("camera_bev_cells", camera_bev.len() as f64)?;
    report.set("lidar_bev_cells", occupied.len() as f64)?;
    report.set("fused_tokens", fused.len() as f64)?;
    report.set("fused_rms", fused.features().norm() / (fused.features().len().max(1) as f64).sqrt())?;
    report.check("one_output_per_lidar_bev_cell", one_per_cell);
    Ok(FuseOutput { bev: fused, report })
}
