use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{downsample_voxels, voxelize, CentroidMode, SparseVoxelSet};
use crate::harness::{synth_scene, MetricsReport, Scene, SceneSpec};
use crate::hybrid::{erf_coverage, erf_probe, HybridBlockConfig, HybridStack, PipelineConfig};
use crate::numerics::{SeededRng, Tensor};
use crate::tokens::{Modality, TokenSequence};

/// Tokens built from a scene's merged voxels, with the per-token source voxel.
#[derive(Debug, Clone)]
pub struct SceneTokens {
    pub tokens: TokenSequence,
    pub voxels: Vec<usize>,
    pub set: SparseVoxelSet,
}

/// Linear lift of per-voxel raw features `[intensity, height, 1]` to
/// `channels` channels with seeded weights in `[-1, 1]`.
pub fn lift_features(raw: &Tensor, channels: usize, seed: u64) -> Result<Tensor> {
    let k = raw.cols();
    let w = Tensor::new(vec![k, channels], SeededRng::new(seed).fork(7).uniform_vec(k * channels, -1.0, 1.0))?;
    crate::numerics::affine_apply(raw, &w, &Tensor::zeros(&[channels]))
}

/// Voxelizes the scene, merges `stages` times by 2 along every axis and keeps
/// at most `max_tokens` voxels (a seeded subset, in storage order). Token
/// coordinates are merged-cell units: integer cells in discrete mode, the
/// continuous centroid expressed in cells in continuous mode.
pub fn scene_tokens(
    scene: &Scene,
    spec: &SceneSpec,
    mode: CentroidMode,
    stages: u32,
    max_tokens: usize,
    channels: usize,
) -> Result<SceneTokens> {
    let mut vs = voxelize(&scene.cloud, &spec.grid)?;
    for _ in 0..stages {
        vs = downsample_voxels(&vs, [2, 2, 2], mode)?;
    }
    let mut keep: Vec<usize> = (0..vs.len()).collect();
    if keep.len() > max_tokens {
        SeededRng::new(spec.seed).fork(5).shuffle(&mut keep);
        keep.truncate(max_tokens);
        keep.sort_unstable();
    }
    let size = vs.cell_size();
    let origin = spec.grid.range_min;
    let coords: Vec<[f64; 3]> = keep
        .iter()
        .map(|&j| match mode {
            CentroidMode::Discrete => vs.discrete_coords()[j].map(|v| v as f64),
            CentroidMode::Continuous => {
                let c = vs.centroids()[j];
                std::array::from_fn(|a| ((c[a] - origin[a]) / size[a]).max(0.0))
            }
        })
        .collect();
    let raw: Vec<Vec<f64>> = keep.iter().map(|&j| vec![vs.features().at(j, 0), vs.centroids()[j][2], 1.0]).collect();
    let features = lift_features(&Tensor::from_rows(&raw)?, channels, spec.seed)?;
    Ok(SceneTokens { tokens: TokenSequence::uniform(features, coords, Modality::Lidar)?, voxels: keep, set: vs })
}

/// One pipeline variant of the receptive-field comparison.
#[derive(Debug, Clone)]
pub struct ErfVariant {
    pub name: &'static str,
    pub map: Vec<f64>,
    pub coverage: f64,
    pub tokens: TokenSequence,
}

#[derive(Debug, Clone)]
pub struct ErfEval {
    pub queries: Vec<usize>,
    pub variants: Vec<ErfVariant>,
    pub report: MetricsReport,
}

/// ERF options beyond the pipeline configuration.
#[derive(Debug, Clone, Copy)]
pub struct ErfOptions {
    pub queries: usize,
    pub stages: u32,
    pub max_tokens: usize,
}

impl Default for ErfOptions {
    fn default() -> Self {
        ErfOptions { queries: 8, stages: 2, max_tokens: 512 }
    }
}

/// Compares local-only, global-only, hybrid and hybrid with height-fidelity
/// coordinates. Queries are drawn (seeded) from tokens inside ground-truth boxes.
pub fn run_erf_eval(config: &PipelineConfig, spec: &SceneSpec, opts: ErfOptions) -> Result<ErfEval> {
    let scene = synth_scene(spec)?;
    let c = config.block.channels;
    let discrete = scene_tokens(&scene, spec, CentroidMode::Discrete, opts.stages, opts.max_tokens, c)?;
    let continuous = scene_tokens(&scene, spec, CentroidMode::Continuous, opts.stages, opts.max_tokens, c)?;
    let margin = discrete.set.cell_size()[0] * 0.5;
    let inside: Vec<usize> = (0..discrete.voxels.len())
        .filter(|&i| {
            let p = discrete.set.centroids()[discrete.voxels[i]];
            let q = continuous.set.centroids()[continuous.voxels[i]];
            scene.boxes.iter().any(|b| b.contains(p, margin) || b.contains(q, margin))
        })
        .collect();
    if inside.is_empty() {
        return Err(Error::Empty("no tokens inside ground-truth boxes".into()));
    }
    let mut pool = inside;
    SeededRng::new(config.seed).fork(9).shuffle(&mut pool);
    pool.truncate(opts.queries.max(1));
    pool.sort_unstable();

    let block = config.block;
    let variants_cfg: [(&'static str, HybridBlockConfig, &SceneTokens); 4] = [
        ("local_only", HybridBlockConfig { global: false, ..block }, &discrete),
        ("global_only", HybridBlockConfig { local: false, ..block }, &discrete),
        ("hybrid", block, &discrete),
        ("hybrid_height_fidelity", block, &continuous),
    ];
    let text = format!("{config}{}", crate::harness::scene_config_text(spec, opts.stages));
    let mut report = MetricsReport::new("erf", config.seed, &text);
    report.set("tokens", discrete.tokens.len() as f64)?;
    report.set("queries", pool.len() as f64)?;
    let mut variants = Vec::new();
    for (name, cfg, src) in variants_cfg {
        let stack = HybridStack::init(cfg, config.align_depth, &mut SeededRng::new(config.seed))?;
        let map = erf_probe(&stack, &src.tokens, &pool)?;
        let coverage = erf_coverage(&map);
        report.set(&format!("{name}.coverage"), coverage)?;
        variants.push(ErfVariant { name, map, coverage, tokens: src.tokens.clone() });
    }
    let cov = |n: &str| variants.iter().find(|v| v.name == n).map_or(0.0, |v| v.coverage);
    if block.bidirectional {
        report.check("global_coverage_at_least_0.99", cov("global_only") >= 0.99);
    }
    report.check("hybrid_coverage_at_least_global", cov("hybrid") >= cov("global_only"));
    Ok(ErfEval { queries: pool, variants, report })
}

/// CSV rows `index,x,y,z,magnitude`.
pub fn erf_csv(tokens: &TokenSequence, map: &[f64]) -> String {
    let mut s = String::from("index,x,y,z,magnitude\n");
    for (i, (c, m)) in tokens.coords().iter().zip(map).enumerate() {
        let _ = writeln!(s, "{i},{},{},{},{m}", c[0], c[1], c[2]);
    }
    s
}

/// Binary PGM over the x-y cells of the token coordinates; each pixel holds
/// the largest value in its column, scaled to 0..=255. Row `r` is `y = r`.
pub fn erf_pgm(tokens: &TokenSequence, map: &[f64]) -> Vec<u8> {
    let cells: Vec<(usize, usize)> =
        tokens.coords().iter().map(|c| (c[0].max(0.0).floor() as usize, c[1].max(0.0).floor() as usize)).collect();
    let w = cells.iter().map(|c| c.0 + 1).max().unwrap_or(1);
    let h = cells.iter().map(|c| c.1 + 1).max().unwrap_or(1);
    let mut img = vec![0.0f64; w * h];
    for (&(x, y), &m) in cells.iter().zip(map) {
        let px = &mut img[y * w + x];
        *px = px.max(m);
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::serialization::{region_partition, CurveOrder, Paradigm};

    #[test]
    fn variants_and_outputs() {
        let mut config = PipelineConfig::default();
        config.block.curve = CurveOrder::new(Paradigm::Hilbert, 7).unwrap();
        config.align_depth = 1;
        let spec = SceneSpec { seed: 4, ..SceneSpec::default() };
        let opts = ErfOptions { queries: 4, stages: 2, max_tokens: 256 };
        let eval = run_erf_eval(&config, &spec, opts).unwrap();
        assert_eq!(eval.variants.len(), 4);
        assert!(eval.report.all_passed(), "{:?}", eval.report);
        let local = &eval.variants[0];
        let regions = region_partition(&local.tokens, config.block.window, config.block.side()).unwrap();
        for (i, &v) in local.map.iter().enumerate() {
            if !eval.queries.iter().any(|&q| regions.region()[q] == regions.region()[i]) {
                assert_eq!(v, 0.0);
            }
        }
        let pgm = erf_pgm(&local.tokens, &local.map);
        assert!(pgm.starts_with(b"P5\n"));
        assert_eq!(erf_csv(&local.tokens, &local.map).lines().count(), local.tokens.len() + 1);
        let again = run_erf_eval(&config, &spec, opts).unwrap();
        assert_eq!(erf_pgm(&again.variants[3].tokens, &again.variants[3].map), erf_pgm(&eval.variants[3].tokens, &eval.variants[3].map));
    }
}
