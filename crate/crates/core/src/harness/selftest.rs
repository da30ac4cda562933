use crate::error::Result;
use crate::harness::{centroid_drift, conflict_trial, curve_walk, MetricsReport, SceneSpec};
use crate::hybrid::{
    block_backward, block_forward, global_backward, global_forward, global_mamba, local_mamba, BlockParams, HybridBlockConfig, ScanPair,
};
use crate::numerics::{finite_diff_grad, max_rel_error, SeededRng, Tensor};
use crate::serialization::{mean_adjacent_index_distance, CurveOrder, Paradigm};
use crate::ssm::{hippo_init, scan_backward_cached, scan_forward_cached, selective_scan_parallel_with, selective_scan_seq};
use crate::tokens::{Modality, TokenSequence};

/// `n` tokens on distinct random cells of a `side^3` grid with features in `[-1, 1]`.
pub fn random_tokens(n: usize, channels: usize, side: usize, seed: u64) -> Result<TokenSequence> {
    let mut rng = SeededRng::new(seed);
    let mut cells: Vec<[f64; 3]> =
        (0..side * side * side).map(|i| [(i % side) as f64, (i / side % side) as f64, (i / (side * side)) as f64]).collect();
    rng.shuffle(&mut cells);
    cells.truncate(n);
    let f = Tensor::new(vec![cells.len(), channels], rng.uniform_vec(cells.len() * channels, -1.0, 1.0))?;
    TokenSequence::uniform(f, cells, Modality::Lidar)
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Largest relative error of the parallel scan against the sequential scan,
/// in double and in single precision, on an `n x c` input with state `s`.
pub fn scan_oracle_errors(n: usize, c: usize, s: usize, chunks: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = SeededRng::new(seed);
    let p = hippo_init(c, s, &mut rng.fork(1))?;
    let x = Tensor::new(vec![n, c], rng.uniform_vec(n * c, -1.0, 1.0))?;
    let double = max_rel_error(selective_scan_parallel_with(&p, &x, chunks)?.data(), selective_scan_seq(&p, &x)?.data(), 1e-300);
    let (p32, x32) = (p.cast::<f32>(), x.cast::<f32>());
    let single = max_rel_error(
        selective_scan_parallel_with(&p32, &x32, chunks)?.cast::<f64>().data(),
        selective_scan_seq(&p32, &x32)?.cast::<f64>().data(),
        1e-30,
    );
    Ok((double, single))
}

/// Relative error of the scan's input gradient against central differences.
pub fn scan_gradient_error(n: usize, c: usize, s: usize, seed: u64) -> Result<f64> {
    let mut rng = SeededRng::new(seed);
    let p = hippo_init(c, s, &mut rng.fork(1))?;
    let x = Tensor::new(vec![n, c], rng.uniform_vec(n * c, -2.0, 2.0))?;
    let g = Tensor::new(vec![n, c], rng.uniform_vec(n * c, -1.0, 1.0))?;
    let (_, cache) = scan_forward_cached(&p, &x)?;
    let dx = scan_backward_cached(&p, &cache, &g)?;
    let fd = finite_diff_grad(|v| selective_scan_seq(&p, v).map_or(f64::NAN, |y| dot(&y, &g)), &x, 1e-6)?;
    Ok(max_rel_error(dx.data(), fd.data(), 1e-12))
}

/// Relative error of the hybrid block's input gradient against central differences.
pub fn block_gradient_error(tokens: &TokenSequence, config: &HybridBlockConfig, seed: u64) -> Result<f64> {
    let mut rng = SeededRng::new(seed);
    let params = BlockParams::init(config, &mut rng.fork(1))?;
    let g = Tensor::new(vec![tokens.len(), config.channels], rng.uniform_vec(tokens.len() * config.channels, -1.0, 1.0))?;
    let (_, trace) = block_forward(tokens, &params, config)?;
    let dx = block_backward(&params, &trace, &g)?;
    let loss = |x: &Tensor| {
        tokens.with_features(x.clone()).and_then(|t| block_forward(&t, &params, config)).map_or(f64::NAN, |(y, _)| dot(&y, &g))
    };
    let fd = finite_diff_grad(loss, tokens.features(), 1e-6)?;
    Ok(max_rel_error(dx.data(), fd.data(), 1e-12))
}

/// Gradient entries of a unidirectional global sub-block that are nonzero at
/// curve positions after the probed query, summed over `queries` probes
/// spread along the curve. Zero means exactly causal.
pub fn causal_leaks(tokens: &TokenSequence, config: &HybridBlockConfig, queries: usize, seed: u64) -> Result<usize> {
    let config = HybridBlockConfig { bidirectional: false, ..*config };
    let pair = ScanPair::init(config.channels, config.state, &mut SeededRng::new(seed))?;
    let (_, trace) = global_forward(tokens, &pair, &config)?;
    let order = trace.order().to_vec();
    let (n, c) = (tokens.len(), config.channels);
    let mut leaks = 0;
    for k in 0..queries.max(1) {
        let q = k * (n - 1) / queries.max(2).saturating_sub(1).max(1);
        let mut g = vec![0.0; n * c];
        g[order[q] * c..(order[q] + 1) * c].fill(1.0);
        let dx = global_backward(&pair, &trace, &Tensor::new(vec![n, c], g)?)?;
        leaks += order[q + 1..].iter().map(|&i| dx.row(i).iter().filter(|&&v| v != 0.0).count()).sum::<usize>();
    }
    Ok(leaks)
}

/// Tokens outside the perturbed token's region whose local sub-block output changed.
pub fn local_leaks(tokens: &TokenSequence, config: &HybridBlockConfig, seed: u64) -> Result<usize> {
    let pair = ScanPair::init(config.channels, config.state, &mut SeededRng::new(seed))?;
    let out = local_mamba(tokens, &pair, config)?;
    let region = out.regions().map(|r| r.region().to_vec()).unwrap_or_default();
    let mut x = tokens.features().clone().into_data();
    x[0] += 0.5;
    let bumped = local_mamba(&tokens.with_features(Tensor::new(tokens.features().shape().to_vec(), x)?)?, &pair, config)?;
    Ok((0..tokens.len()).filter(|&i| region[i] != region[0] && out.features().row(i) != bumped.features().row(i)).count())
}

/// Relative deviation of the global sub-block from storage-order equivariance.
pub fn equivariance_error(tokens: &TokenSequence, config: &HybridBlockConfig, seed: u64) -> Result<f64> {
    let mut rng = SeededRng::new(seed);
    let pair = ScanPair::init(config.channels, config.state, &mut rng.fork(1))?;
    let out = global_mamba(tokens, &pair, config)?;
    let mut perm: Vec<usize> = (0..tokens.len()).collect();
    rng.shuffle(&mut perm);
    let shuffled = global_mamba(&tokens.select(&perm), &pair, config)?;
    Ok(max_rel_error(shuffled.features().data(), out.features().gather_rows(&perm).data(), 1e-300))
}

fn tensor_round_trip(seed: u64) -> Result<bool> {
    let mut rng = SeededRng::new(seed);
    let t = Tensor::new(vec![3, 5, 2], rng.uniform_vec(30, -1e3, 1e3))?;
    let back = Tensor::<f64>::read_from(t.to_bytes().as_slice())?;
    let t32 = t.cast::<f32>();
    let back32 = Tensor::<f32>::read_from(t32.to_bytes().as_slice())?;
    Ok(back == t && back32 == t32)
}

/// The invariant suite. Every value is deterministic in `seed`.
pub fn selftest(seed: u64) -> Result<MetricsReport> {
    let mut r = MetricsReport::new("selftest", seed, &format!("selftest seed = {seed}\n"));
    let mut rng = SeededRng::new(seed);

    let (double, single) = scan_oracle_errors(1024, 8, 8, 4, rng.next_u64())?;
    r.set("scan.parallel_rel_error.double", double)?;
    r.set("scan.parallel_rel_error.single", single)?;
    r.check("scan.parallel_matches_sequential.double", double <= 1e-10);
    r.check("scan.parallel_matches_sequential.single", single <= 1e-5);

    let scan_grad = scan_gradient_error(8, 2, 4, rng.next_u64())?;
    r.set("scan.gradient_rel_error", scan_grad)?;
    r.check("scan.gradient_matches_finite_differences", scan_grad <= 1e-5);

    let small = HybridBlockConfig {
        window: 2,
        curve: CurveOrder::new(Paradigm::Hilbert, 3)?,
        channels: 2,
        state: 4,
        ..HybridBlockConfig::default()
    };
    let tokens = random_tokens(8, 2, 8, rng.next_u64())?;
    let block_grad = block_gradient_error(&tokens, &small, rng.next_u64())?;
    r.set("block.gradient_rel_error", block_grad)?;
    r.check("block.gradient_matches_finite_differences", block_grad <= 1e-5);

    for b in 1..=3 {
        let h = curve_walk(CurveOrder::new(Paradigm::Hilbert, b)?)?;
        let z = curve_walk(CurveOrder::new(Paradigm::Zorder, b)?)?;
        r.check(&format!("curve.hilbert.b{b}.bijective"), h.bijective);
        r.check(&format!("curve.hilbert.b{b}.face_adjacent"), h.face_adjacent);
        r.check(&format!("curve.zorder.b{b}.bijective"), z.bijective);
    }
    for p in [Paradigm::Hilbert, Paradigm::Zorder, Paradigm::Coordinate] {
        r.set(&format!("curve.{}.b3.mean_adjacent_index_distance", p.as_str()), mean_adjacent_index_distance(CurveOrder::new(p, 3)?))?;
    }

    let spec = SceneSpec { seed: rng.next_u64(), ..SceneSpec::default() };
    let drift = centroid_drift(&spec, 3)?;
    r.set("voxel.centroid_drift", drift)?;
    r.check("voxel.continuous_centroid_conserved", drift <= 1e-12);

    let (mut collisions, mut generated) = (0, 0);
    for _ in 0..50 {
        let (c, g) = conflict_trial(rng.next_u64())?;
        collisions += c;
        generated += g;
    }
    r.set("voxel.generated", generated as f64)?;
    r.check("voxel.generation_conflict_free", collisions == 0);

    let mid = HybridBlockConfig { channels: 4, state: 4, ..small };
    let tokens = random_tokens(120, 4, 8, rng.next_u64())?;
    let local = local_leaks(&tokens, &mid, rng.next_u64())?;
    r.check("block.local_regions_isolated", local == 0);
    let causal = causal_leaks(&tokens, &mid, 4, rng.next_u64())?;
    r.check("block.unidirectional_global_causal", causal == 0);
    let equi = equivariance_error(&tokens, &mid, rng.next_u64())?;
    r.set("block.equivariance_rel_error", equi)?;
    r.check("block.global_storage_order_equivariant", equi <= 1e-10);

    r.check("tensor.round_trip", tensor_round_trip(rng.next_u64())?);
    Ok(r)
}
