use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hybrid::{pos_embedding, HybridBlockConfig};
use crate::numerics::{rms_norm, rms_norm_backward, SeededRng, Tensor};
use crate::serialization::{region_partition, sort_tokens, Quantizer, RegionAssignment};
use crate::ssm::{
    hippo_init, merge_directions, scan_backward_cached, scan_forward_cached, split_merge_grad, BidirMerge, ScanCache, SsmParams,
};
use crate::tokens::TokenSequence;

/// Forward and backward scan parameters of one sub-block. `bwd` is ignored
/// by unidirectional configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPair {
    pub fwd: SsmParams,
    pub bwd: SsmParams,
}

impl ScanPair {
    pub fn init(channels: usize, state: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(ScanPair { fwd: hippo_init(channels, state, &mut rng.fork(0))?, bwd: hippo_init(channels, state, &mut rng.fork(1))? })
    }

    fn check(&self, channels: usize) -> Result<()> {
        if self.fwd.channels() != channels || self.bwd.channels() != channels {
            return Err(Error::shape(format!("scan parameters for {} channels, tokens have {channels}", self.fwd.channels())));
        }
        Ok(())
    }
}

/// Parameters of one hybrid block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub local: ScanPair,
    pub global: ScanPair,
}

impl BlockParams {
    pub fn init(config: &HybridBlockConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        Ok(BlockParams {
            local: ScanPair::init(config.channels, config.state, &mut rng.fork(10))?,
            global: ScanPair::init(config.channels, config.state, &mut rng.fork(11))?,
        })
    }
}

fn reversed(x: &Tensor) -> Tensor {
    let order: Vec<usize> = (0..x.rows()).rev().collect();
    x.gather_rows(&order)
}

/// Caches of one (possibly bidirectional) sequence scan.
#[derive(Debug, Clone)]
struct SeqTrace {
    fwd: ScanCache,
    bwd: Option<ScanCache>,
}

fn seq_forward(pair: &ScanPair, x: &Tensor, bidirectional: bool) -> Result<(Tensor, SeqTrace)> {
    let (yf, fwd) = scan_forward_cached(&pair.fwd, x)?;
    if !bidirectional {
        return Ok((yf, SeqTrace { fwd, bwd: None }));
    }
    let (yb, bwd) = scan_forward_cached(&pair.bwd, &reversed(x))?;
    let y = merge_directions(&yf, &reversed(&yb), &BidirMerge::Mean)?;
    Ok((y, SeqTrace { fwd, bwd: Some(bwd) }))
}

fn seq_backward(pair: &ScanPair, trace: &SeqTrace, g: &Tensor) -> Result<Tensor> {
    match &trace.bwd {
        None => scan_backward_cached(&pair.fwd, &trace.fwd, g),
        Some(bwd) => {
            let (gf, gb) = split_merge_grad(g, &BidirMerge::Mean)?;
            let dxf = scan_backward_cached(&pair.fwd, &trace.fwd, &gf)?;
            let dxb = reversed(&scan_backward_cached(&pair.bwd, bwd, &reversed(&gb))?);
            dxf.add(&dxb)
        }
    }
}

const NORM_EPS: f64 = 1e-6;

/// Sub-block input after the optional pre-scan normalization.
#[derive(Debug, Clone)]
struct Normed {
    y: Tensor,
    inv: Option<Vec<f64>>,
}

fn pre_norm(x: &Tensor, config: &HybridBlockConfig) -> Result<Normed> {
    if !config.norm {
        return Ok(Normed { y: x.clone(), inv: None });
    }
    let (y, inv) = rms_norm(x, NORM_EPS)?;
    Ok(Normed { y, inv: Some(inv) })
}

fn pre_norm_backward(n: &Normed, g: Tensor) -> Result<Tensor> {
    match &n.inv {
        None => Ok(g),
        Some(inv) => rms_norm_backward(&n.y, inv, &g),
    }
}

/// Scan orders of one region: x-direction visits `(y', x')` row by row, the
/// y-direction `(x', y')` column by column. Stacked tokens of one cell follow
/// their z coordinate.
fn region_orders(tokens: &TokenSequence, regions: &RegionAssignment, members: &[usize], xy: bool) -> Vec<Vec<usize>> {
    let pos = regions.in_region();
    let z = |i: usize| tokens.coords()[i][2];
    let by = |key: fn((u64, u64)) -> (u64, u64)| {
        let mut m = members.to_vec();
        m.sort_by(|&a, &b| key(pos[a]).cmp(&key(pos[b])).then(z(a).total_cmp(&z(b))).then(a.cmp(&b)));
        m
    };
    let mut orders = vec![by(|(x, y)| (y, x))];
    if xy {
        orders.push(by(|(x, y)| (x, y)));
    }
    orders
}

/// Per-region scan outputs and the token orders with their traces.
type RegionScans = (Vec<Tensor>, Vec<(Vec<usize>, SeqTrace)>);
type RegionGrad = (Vec<usize>, Tensor);

/// Trace of a local sub-block: per region, the scan orders and their caches.
#[derive(Debug, Clone)]
pub struct LocalTrace {
    regions: RegionAssignment,
    normed: Normed,
    groups: Vec<Vec<(Vec<usize>, SeqTrace)>>,
}

impl LocalTrace {
    pub fn regions(&self) -> &RegionAssignment {
        &self.regions
    }
}

/// Local sub-block with its residual: `x + mean over orders of scan(region tokens)`,
/// the scans reading the normalized features when the configuration asks for it.
pub fn local_forward(tokens: &TokenSequence, pair: &ScanPair, config: &HybridBlockConfig) -> Result<(Tensor, LocalTrace)> {
    config.validate()?;
    pair.check(tokens.channels())?;
    let x = tokens.features();
    let normed = pre_norm(x, config)?;
    let regions = region_partition(tokens, config.window, config.side())?;
    let groups = regions.groups();
    let results: Vec<Result<RegionScans>> = groups
        .par_iter()
        .map(|(_, members)| {
            let mut ys = Vec::new();
            let mut traces = Vec::new();
            for order in region_orders(tokens, &regions, members, config.xy_fusion) {
                let (y, tr) = seq_forward(pair, &normed.y.gather_rows(&order), config.bidirectional)?;
                ys.push(y);
                traces.push((order, tr));
            }
            Ok((ys, traces))
        })
        .collect();
    let c = tokens.channels();
    let mut out = x.data().to_vec();
    let mut all = Vec::with_capacity(results.len());
    for r in results {
        let (ys, traces) = r?;
        let w = 1.0 / ys.len() as f64;
        for (y, (order, _)) in ys.iter().zip(&traces) {
            for (k, &i) in order.iter().enumerate() {
                for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(y.row(k)) {
                    *o += w * v;
                }
            }
        }
        all.push(traces);
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, LocalTrace { regions, normed, groups: all }))
}

pub fn local_backward(pair: &ScanPair, trace: &LocalTrace, upstream: &Tensor) -> Result<Tensor> {
    let c = upstream.cols();
    let parts: Vec<Result<Vec<RegionGrad>>> = trace
        .groups
        .par_iter()
        .map(|orders| {
            let w = 1.0 / orders.len() as f64;
            orders.iter().map(|(order, tr)| Ok((order.clone(), seq_backward(pair, tr, &upstream.gather_rows(order).scale(w)?)?))).collect()
        })
        .collect();
    let mut dn = vec![0.0; upstream.len()];
    for part in parts {
        for (order, g) in part? {
            for (k, &i) in order.iter().enumerate() {
                for (d, v) in dn[i * c..(i + 1) * c].iter_mut().zip(g.row(k)) {
                    *d += v;
                }
            }
        }
    }
    upstream.add(&pre_norm_backward(&trace.normed, Tensor::new(upstream.shape().to_vec(), dn)?)?)
}

/// Trace of a global sub-block.
#[derive(Debug, Clone)]
pub struct GlobalTrace {
    order: Vec<usize>,
    normed: Normed,
    seq: SeqTrace,
}

impl GlobalTrace {
    /// `order[k]` is the token at curve position `k`.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

/// Positional embedding of tokens whose coordinates are curve cells.
pub fn token_pos_embedding(tokens: &TokenSequence, config: &HybridBlockConfig) -> Result<Tensor> {
    let side = config.side() as f64;
    let coords: Vec<[f64; 3]> = tokens.coords().iter().map(|c| c.map(|v| v / side)).collect();
    pos_embedding(&coords, tokens.channels(), config.frequencies)
}

/// Global sub-block with its residual: `x + unsort(scan(sort(norm(x) + pos)))`.
pub fn global_forward(tokens: &TokenSequence, pair: &ScanPair, config: &HybridBlockConfig) -> Result<(Tensor, GlobalTrace)> {
    config.validate()?;
    pair.check(tokens.channels())?;
    let x = tokens.features();
    let normed = pre_norm(x, config)?;
    let shifted = normed.y.add(&token_pos_embedding(tokens, config)?)?;
    let perm = sort_tokens(tokens, config.curve, &Quantizer::cells())?;
    let order = perm.order().to_vec();
    let (ys, seq) = seq_forward(pair, &shifted.gather_rows(&order), config.bidirectional)?;
    let out = x.add(&ys.scatter_rows(&order))?;
    Ok((out, GlobalTrace { order, normed, seq }))
}

pub fn global_backward(pair: &ScanPair, trace: &GlobalTrace, upstream: &Tensor) -> Result<Tensor> {
    let g = seq_backward(pair, &trace.seq, &upstream.gather_rows(&trace.order))?;
    upstream.add(&pre_norm_backward(&trace.normed, g.scatter_rows(&trace.order))?)
}

pub fn local_mamba(tokens: &TokenSequence, pair: &ScanPair, config: &HybridBlockConfig) -> Result<TokenSequence> {
    let (out, trace) = local_forward(tokens, pair, config)?;
    tokens.with_features(out)?.with_regions(trace.regions)
}

pub fn global_mamba(tokens: &TokenSequence, pair: &ScanPair, config: &HybridBlockConfig) -> Result<TokenSequence> {
    let (out, trace) = global_forward(tokens, pair, config)?;
    let mut serial = vec![0; trace.order.len()];
    for (k, &i) in trace.order.iter().enumerate() {
        serial[i] = k;
    }
    tokens.with_features(out)?.with_serial(serial)
}

/// Trace of one block; absent parts were disabled by the configuration.
#[derive(Debug, Clone)]
pub struct BlockTrace {
    local: Option<LocalTrace>,
    global: Option<GlobalTrace>,
}

pub fn block_forward(tokens: &TokenSequence, params: &BlockParams, config: &HybridBlockConfig) -> Result<(Tensor, BlockTrace)> {
    config.validate()?;
    let mut current = tokens.clone();
    let local = if config.local {
        let (out, tr) = local_forward(&current, &params.local, config)?;
        current = current.with_features(out)?;
        Some(tr)
    } else {
        None
    };
    let global = if config.global {
        let (out, tr) = global_forward(&current, &params.global, config)?;
        current = current.with_features(out)?;
        Some(tr)
    } else {
        None
    };
    Ok((current.features().clone(), BlockTrace { local, global }))
}

pub fn block_backward(params: &BlockParams, trace: &BlockTrace, upstream: &Tensor) -> Result<Tensor> {
    let mut g = upstream.clone();
    if let Some(tr) = &trace.global {
        g = global_backward(&params.global, tr, &g)?;
    }
    if let Some(tr) = &trace.local {
        g = local_backward(&params.local, tr, &g)?;
    }
    Ok(g)
}

/// Local sub-block followed by the global sub-block, each with a residual.
pub fn hybrid_block_forward(
    tokens: &TokenSequence,
    params_local: &ScanPair,
    params_global: &ScanPair,
    config: &HybridBlockConfig,
) -> Result<TokenSequence> {
    let params = BlockParams { local: params_local.clone(), global: params_global.clone() };
    let (out, _) = block_forward(tokens, &params, config)?;
    tokens.with_features(out)
}

/// A stack of hybrid blocks sharing one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridStack {
    pub config: HybridBlockConfig,
    pub blocks: Vec<BlockParams>,
}

impl HybridStack {
    pub fn init(config: HybridBlockConfig, depth: usize, rng: &mut SeededRng) -> Result<Self> {
        let blocks = (0..depth).map(|d| BlockParams::init(&config, &mut rng.fork(100 + d as u64))).collect::<Result<_>>()?;
        Ok(HybridStack { config, blocks })
    }

    pub fn forward_traced(&self, tokens: &TokenSequence) -> Result<(Tensor, Vec<BlockTrace>)> {
        if tokens.channels() != self.config.channels {
            return Err(Error::shape(format!("tokens have {} channels, stack expects {}", tokens.channels(), self.config.channels)));
        }
        let mut current = tokens.clone();
        let mut traces = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (out, tr) = block_forward(&current, block, &self.config)?;
            current = current.with_features(out)?;
            traces.push(tr);
        }
        Ok((current.features().clone(), traces))
    }

    pub fn forward(&self, tokens: &TokenSequence) -> Result<TokenSequence> {
        let (out, _) = self.forward_traced(tokens)?;
        tokens.with_features(out)
    }

    /// Gradient with respect to the input features.
    pub fn backward(&self, traces: &[BlockTrace], upstream: &Tensor) -> Result<Tensor> {
        if traces.len() != self.blocks.len() {
            return Err(Error::MissingCache);
        }
        let mut g = upstream.clone();
        for (block, tr) in self.blocks.iter().zip(traces).rev() {
            g = block_backward(block, tr, &g)?;
        }
        Ok(g)
    }
}
