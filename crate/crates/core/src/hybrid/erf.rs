use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hybrid::{BlockTrace, HybridStack};
use crate::numerics::Tensor;
use crate::tokens::TokenSequence;

/// A differentiable map from token features to per-token output features.
pub trait Pipeline: Sync {
    type Trace: Sync;

    fn forward_traced(&self, tokens: &TokenSequence) -> Result<(Tensor, Self::Trace)>;

    /// Gradient with respect to the input features, given the output gradient.
    fn backward(&self, trace: &Self::Trace, upstream: &Tensor) -> Result<Tensor>;
}

/// Returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPipeline;

impl Pipeline for IdentityPipeline {
    type Trace = ();

    fn forward_traced(&self, tokens: &TokenSequence) -> Result<(Tensor, ())> {
        Ok((tokens.features().clone(), ()))
    }

    fn backward(&self, _: &(), upstream: &Tensor) -> Result<Tensor> {
        Ok(upstream.clone())
    }
}

impl Pipeline for HybridStack {
    type Trace = Vec<BlockTrace>;

    fn forward_traced(&self, tokens: &TokenSequence) -> Result<(Tensor, Vec<BlockTrace>)> {
        HybridStack::forward_traced(self, tokens)
    }

    fn backward(&self, trace: &Vec<BlockTrace>, upstream: &Tensor) -> Result<Tensor> {
        HybridStack::backward(self, trace, upstream)
    }
}

/// Per-token gradient magnitude `|| d ||y_q|| / d x_i ||` for one query,
/// scaled so its maximum is 1 (an all-zero map stays zero).
fn query_map<P: Pipeline>(pipeline: &P, trace: &P::Trace, y: &Tensor, q: usize) -> Result<Vec<f64>> {
    let c = y.cols();
    let yq = y.row(q);
    let norm = yq.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut g = vec![0.0; y.len()];
    if norm > 0.0 {
        for (gv, &v) in g[q * c..(q + 1) * c].iter_mut().zip(yq) {
            *gv = v / norm;
        }
    }
    let dx = pipeline.backward(trace, &Tensor::new(y.shape().to_vec(), g)?)?;
    let mut map: Vec<f64> = (0..dx.rows()).map(|i| dx.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let peak = map.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        map.iter_mut().for_each(|m| *m /= peak);
    }
    Ok(map)
}

/// Effective receptive field of the query tokens: each query's normalized
/// gradient map, merged by elementwise maximum.
pub fn erf_probe<P: Pipeline>(pipeline: &P, tokens: &TokenSequence, queries: &[usize]) -> Result<Vec<f64>> {
    if let Some(&q) = queries.iter().find(|&&q| q >= tokens.len()) {
        return Err(Error::OutOfRange(format!("query {q} for {} tokens", tokens.len())));
    }
    let (y, trace) = pipeline.forward_traced(tokens)?;
    if y.rows() != tokens.len() {
        return Err(Error::shape("pipeline must keep one output row per token"));
    }
    let maps: Vec<Result<Vec<f64>>> = queries.par_iter().map(|&q| query_map(pipeline, &trace, &y, q)).collect();
    let mut merged = vec![0.0f64; tokens.len()];
    for map in maps {
        for (m, v) in merged.iter_mut().zip(map?) {
            *m = m.max(v);
        }
    }
    Ok(merged)
}

/// Fraction of tokens with a nonzero receptive-field value.
pub fn erf_coverage(map: &[f64]) -> f64 {
    if map.is_empty() {
        return 0.0;
    }
    map.iter().filter(|&&v| v > 0.0).count() as f64 / map.len() as f64
}
