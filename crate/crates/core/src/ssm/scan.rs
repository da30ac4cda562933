//! Selective scans over `N x C` token sequences.
//!
//! Each token `x_t` yields `delta_t`, `B_t`, `C_t` through the selectivity
//! projections, then per channel `c` and state `n`:
//!
//! ```text
//! h_t[c,n] = exp(delta_t[c] A[c,n]) h_{t-1}[c,n] + delta_t[c] B_t[n] x_t[c]
//! y_t[c]   = sum_n C_t[n] h_t[c,n] + D[c] x_t[c]
//! ```

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softplus, Real, Tensor};
use crate::ssm::SsmParams;

/// One element of the first-order linear recurrence `h -> a h + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine<T> {
    pub a: T,
    pub b: T,
}

impl<T: Real> Affine<T> {
    pub const fn new(a: T, b: T) -> Self {
        Affine { a, b }
    }

    pub fn identity() -> Self {
        Affine { a: T::one(), b: T::zero() }
    }

    /// Applies `self` first, then `next`: `(a2 a1, a2 b1 + b2)`.
    pub fn then(self, next: Affine<T>) -> Affine<T> {
        Affine { a: next.a * self.a, b: next.a * self.b + next.b }
    }

    pub fn apply(self, h: T) -> T {
        self.a * h + self.b
    }
}

/// Selectivity terms of one sequence.
struct Selective<T> {
    z: Vec<T>,
    delta: Vec<T>,
    bt: Vec<T>,
    ct: Vec<T>,
}

fn check_input<T: Real>(params: &SsmParams<T>, x: &Tensor<T>) -> Result<(usize, usize)> {
    let (n, c) = x.dims2()?;
    if c != params.channels() {
        return Err(Error::shape(format!("input has {c} channels, parameters expect {}", params.channels())));
    }
    Ok((n, c))
}

fn dot_col<T: Real>(x: &[T], w: &Tensor<T>, j: usize, bias: T) -> T {
    let cols = w.cols();
    let wd = w.data();
    x.iter().enumerate().fold(bias, |acc, (i, &xi)| acc + xi * wd[i * cols + j])
}

fn selective<T: Real>(params: &SsmParams<T>, x: &Tensor<T>) -> Selective<T> {
    let (n, c) = (x.rows(), params.channels());
    let s = params.state();
    let mut sel = Selective {
        z: Vec::with_capacity(n * c),
        delta: Vec::with_capacity(n * c),
        bt: Vec::with_capacity(n * s),
        ct: Vec::with_capacity(n * s),
    };
    for t in 0..n {
        let xt = x.row(t);
        for j in 0..c {
            let z = dot_col(xt, &params.w_delta, j, params.b_delta.data()[j]);
            sel.z.push(z);
            sel.delta.push(softplus(z));
        }
        for k in 0..s {
            sel.bt.push(dot_col(xt, &params.w_b, k, params.b_b.data()[k]));
            sel.ct.push(dot_col(xt, &params.w_c, k, params.b_c.data()[k]));
        }
    }
    sel
}

/// Discretized recurrence coefficients of token `t`, channel `ch`, state `k`.
#[inline]
fn coeffs<T: Real>(params: &SsmParams<T>, sel: &Selective<T>, x: &Tensor<T>, t: usize, ch: usize, k: usize) -> Affine<T> {
    let (c, s) = (params.channels(), params.state());
    let delta = sel.delta[t * c + ch];
    Affine::new((delta * params.a.data()[ch * s + k]).exp(), delta * sel.bt[t * s + k] * x.row(t)[ch])
}

#[inline]
fn readout<T: Real>(params: &SsmParams<T>, sel: &Selective<T>, x: &Tensor<T>, t: usize, ch: usize, h: &[T]) -> T {
    let s = params.state();
    let ct = &sel.ct[t * s..(t + 1) * s];
    let y = ct.iter().zip(h).fold(T::zero(), |acc, (&c, &hv)| acc + c * hv);
    y + params.d.data()[ch] * x.row(t)[ch]
}

/// Reference sequential scan from a zero state.
pub fn selective_scan_seq<T: Real>(params: &SsmParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    scan_seq_inner(params, x, None)
}

fn scan_seq_inner<T: Real>(params: &SsmParams<T>, x: &Tensor<T>, mut states: Option<&mut Vec<T>>) -> Result<Tensor<T>> {
    let (n, c) = check_input(params, x)?;
    let s = params.state();
    let sel = selective(params, x);
    let mut h = vec![T::zero(); c * s];
    let mut y = Vec::with_capacity(n * c);
    for t in 0..n {
        for ch in 0..c {
            let hc = &mut h[ch * s..(ch + 1) * s];
            for (k, hv) in hc.iter_mut().enumerate() {
                *hv = coeffs(params, &sel, x, t, ch, k).apply(*hv);
            }
            y.push(readout(params, &sel, x, t, ch, hc));
        }
        if let Some(st) = states.as_deref_mut() {
            st.extend_from_slice(&h);
        }
    }
    finite(vec![n, c], y)
}

fn finite<T: Real>(shape: Vec<usize>, data: Vec<T>) -> Result<Tensor<T>> {
    Tensor::new(shape, data)
}

/// Worker count used when none is given: the current rayon pool size.
pub fn default_workers() -> usize {
    rayon::current_num_threads().max(1)
}

pub fn selective_scan_parallel<T: Real>(params: &SsmParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    selective_scan_parallel_with(params, x, default_workers())
}

/// Blocked associative scan over `(Abar, Bbar x)` pairs.
///
/// The sequence is cut into `chunks` contiguous blocks. Each block is first
/// reduced to one affine element per `(channel, state)`, block aggregates are
/// combined left to right into carry-in states, and every block is then
/// rescanned from its carry. The reduction order depends only on `chunks`, so
/// output is bit-reproducible per chunk count; one chunk is the sequential scan.
pub fn selective_scan_parallel_with<T: Real>(params: &SsmParams<T>, x: &Tensor<T>, chunks: usize) -> Result<Tensor<T>> {
    let (n, c) = check_input(params, x)?;
    let s = params.state();
    let width = c * s;
    if n == 0 {
        return Ok(Tensor::zeros(&[0, c]));
    }
    let sel = selective(params, x);
    let chunks = chunks.clamp(1, n);
    let block = n.div_ceil(chunks);
    let starts: Vec<usize> = (0..n).step_by(block).collect();

    let carries: Vec<Vec<T>> = if starts.len() == 1 {
        vec![vec![T::zero(); width]]
    } else {
        let aggregates: Vec<Vec<Affine<T>>> = starts
            .par_iter()
            .map(|&t0| {
                let mut acc = vec![Affine::identity(); width];
                for t in t0..(t0 + block).min(n) {
                    for ch in 0..c {
                        for k in 0..s {
                            let i = ch * s + k;
                            acc[i] = acc[i].then(coeffs(params, &sel, x, t, ch, k));
                        }
                    }
                }
                acc
            })
            .collect();
        let mut carries = Vec::with_capacity(aggregates.len());
        let mut h = vec![T::zero(); width];
        for agg in &aggregates {
            carries.push(h.clone());
            for (hv, e) in h.iter_mut().zip(agg) {
                *hv = e.apply(*hv);
            }
        }
        carries
    };

    let mut y = vec![T::zero(); n * c];
    y.par_chunks_mut(block * c).zip(carries.into_par_iter()).enumerate().for_each(|(bi, (yb, mut h))| {
        let t0 = bi * block;
        for (dt, yt) in yb.chunks_mut(c).enumerate() {
            let t = t0 + dt;
            for (ch, yv) in yt.iter_mut().enumerate() {
                let hc = &mut h[ch * s..(ch + 1) * s];
                for (k, hv) in hc.iter_mut().enumerate() {
                    *hv = coeffs(params, &sel, x, t, ch, k).apply(*hv);
                }
                *yv = readout(params, &sel, x, t, ch, hc);
            }
        }
    });
    finite(vec![n, c], y)
}

/// How the two directions of a bidirectional scan are merged.
#[derive(Debug, Clone, PartialEq)]
pub enum BidirMerge<T: Real = f64> {
    Mean,
    Sum,
    /// `[y_fwd, y_bwd]` (N x 2C) times a `2C x C` projection.
    ConcatProject(Tensor<T>),
}

fn reversed<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let order: Vec<usize> = (0..x.rows()).rev().collect();
    x.gather_rows(&order)
}

pub fn bidirectional_scan<T: Real>(fwd: &SsmParams<T>, bwd: &SsmParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    bidirectional_scan_with(fwd, bwd, x, &BidirMerge::Mean)
}

/// Forward scan of `x` merged with the re-reversed forward scan of reversed `x`.
pub fn bidirectional_scan_with<T: Real>(fwd: &SsmParams<T>, bwd: &SsmParams<T>, x: &Tensor<T>, merge: &BidirMerge<T>) -> Result<Tensor<T>> {
    if (fwd.channels(), fwd.state()) != (bwd.channels(), bwd.state()) {
        return Err(Error::shape("forward and backward parameters differ in (C, S)"));
    }
    let yf = selective_scan_seq(fwd, x)?;
    let yb = reversed(&selective_scan_seq(bwd, &reversed(x))?);
    merge_directions(&yf, &yb, merge)
}

pub(crate) fn merge_directions<T: Real>(yf: &Tensor<T>, yb: &Tensor<T>, merge: &BidirMerge<T>) -> Result<Tensor<T>> {
    match merge {
        BidirMerge::Mean => yf.axpby(T::of(0.5), yb, T::of(0.5)),
        BidirMerge::Sum => yf.add(yb),
        BidirMerge::ConcatProject(w) => {
            let (n, c) = yf.dims2()?;
            if w.shape() != [2 * c, c] {
                return Err(Error::shape(format!("merge projection {:?}, expected [{}, {c}]", w.shape(), 2 * c)));
            }
            let mut cat = Vec::with_capacity(n * 2 * c);
            for t in 0..n {
                cat.extend_from_slice(yf.row(t));
                cat.extend_from_slice(yb.row(t));
            }
            let cat = Tensor::new(vec![n, 2 * c], cat)?;
            crate::numerics::affine_apply(&cat, w, &Tensor::zeros(&[c]))
        }
    }
}

/// Upstream gradient split into the two directions of a merge.
pub(crate) fn split_merge_grad<T: Real>(g: &Tensor<T>, merge: &BidirMerge<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    match merge {
        BidirMerge::Mean => {
            let half = g.scale(T::of(0.5))?;
            Ok((half.clone(), half))
        }
        BidirMerge::Sum => Ok((g.clone(), g.clone())),
        BidirMerge::ConcatProject(w) => {
            let (n, c) = g.dims2()?;
            let mut gf = Vec::with_capacity(n * c);
            let mut gb = Vec::with_capacity(n * c);
            for t in 0..n {
                let gt = g.row(t);
                for i in 0..2 * c {
                    let v = w.row(i).iter().zip(gt).fold(T::zero(), |a, (&wv, &gv)| a + wv * gv);
                    if i < c {
                        gf.push(v);
                    } else {
                        gb.push(v);
                    }
                }
            }
            Ok((Tensor::new(vec![n, c], gf)?, Tensor::new(vec![n, c], gb)?))
        }
    }
}

/// Everything the backward pass needs from one forward scan.
#[derive(Debug, Clone)]
pub struct ScanCache<T: Real = f64> {
    x: Tensor<T>,
    z: Vec<T>,
    delta: Vec<T>,
    bt: Vec<T>,
    ct: Vec<T>,
    states: Vec<T>,
}

impl<T: Real> ScanCache<T> {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    /// Hidden state `h_t` (C x S, row-major) after token `t`.
    pub fn state(&self, t: usize) -> &[T] {
        let w = self.delta.len() / self.len().max(1) * (self.bt.len() / self.len().max(1));
        &self.states[t * w..(t + 1) * w]
    }
}

/// Sequential scan that records a [`ScanCache`].
pub fn scan_forward_cached<T: Real>(params: &SsmParams<T>, x: &Tensor<T>) -> Result<(Tensor<T>, ScanCache<T>)> {
    let (n, c) = check_input(params, x)?;
    let mut states = Vec::with_capacity(n * c * params.state());
    let y = scan_seq_inner(params, x, Some(&mut states))?;
    let sel = selective(params, x);
    Ok((y, ScanCache { x: x.clone(), z: sel.z, delta: sel.delta, bt: sel.bt, ct: sel.ct, states }))
}

/// Exact reverse-mode gradient of the sequential scan with respect to its
/// input, through the recurrence, the residual path and all three
/// selectivity projections.
pub fn scan_backward_cached<T: Real>(params: &SsmParams<T>, cache: &ScanCache<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let x = &cache.x;
    let (n, c) = check_input(params, x)?;
    if upstream.shape() != x.shape() {
        return Err(Error::shape(format!("upstream {:?} vs input {:?}", upstream.shape(), x.shape())));
    }
    if cache.delta.len() != n * c || cache.bt.len() != n * params.state() {
        return Err(Error::shape("cache was recorded with different parameters"));
    }
    let s = params.state();
    let width = c * s;
    let a = params.a.data();
    let mut dx = vec![T::zero(); n * c];
    // dh carried from t+1, already multiplied by a_{t+1}
    let mut carry = vec![T::zero(); width];
    let mut d_delta = vec![T::zero(); c];
    let mut d_b = vec![T::zero(); s];
    let mut d_c = vec![T::zero(); s];
    for t in (0..n).rev() {
        let g = upstream.row(t);
        let xt = x.row(t);
        let ht = &cache.states[t * width..(t + 1) * width];
        let bt = &cache.bt[t * s..(t + 1) * s];
        let ct = &cache.ct[t * s..(t + 1) * s];
        d_delta.iter_mut().for_each(|v| *v = T::zero());
        d_b.iter_mut().for_each(|v| *v = T::zero());
        d_c.iter_mut().for_each(|v| *v = T::zero());
        let dxt = &mut dx[t * c..(t + 1) * c];
        for ch in 0..c {
            let delta = cache.delta[t * c + ch];
            dxt[ch] = params.d.data()[ch] * g[ch];
            for k in 0..s {
                let i = ch * s + k;
                d_c[k] = d_c[k] + g[ch] * ht[i];
                let dh = g[ch] * ct[k] + carry[i];
                let at = (delta * a[i]).exp();
                let h_prev = if t > 0 { cache.states[(t - 1) * width + i] } else { T::zero() };
                d_delta[ch] = d_delta[ch] + dh * (h_prev * at * a[i] + bt[k] * xt[ch]);
                d_b[k] = d_b[k] + dh * delta * xt[ch];
                dxt[ch] = dxt[ch] + dh * delta * bt[k];
                carry[i] = at * dh;
            }
        }
        // through the projections: dx_i += sum_j W[i, j] d(pre-activation)_j
        for (d, &z) in d_delta.iter_mut().zip(&cache.z[t * c..(t + 1) * c]) {
            *d = *d * sigmoid(z);
        }
        for (i, dxi) in dxt.iter_mut().enumerate() {
            let mut acc = *dxi;
            acc = params.w_delta.row(i).iter().zip(&d_delta).fold(acc, |m, (&w, &d)| m + w * d);
            acc = params.w_b.row(i).iter().zip(&d_b).fold(acc, |m, (&w, &d)| m + w * d);
            acc = params.w_c.row(i).iter().zip(&d_c).fold(acc, |m, (&w, &d)| m + w * d);
            *dxi = acc;
        }
    }
    finite(vec![n, c], dx)
}

/// A forward/backward session over one parameter set.
///
/// [`SelectiveScan::backward`] needs a preceding [`SelectiveScan::forward`].
#[derive(Debug)]
pub struct SelectiveScan<'p, T: Real = f64> {
    params: &'p SsmParams<T>,
    cache: Option<ScanCache<T>>,
}

impl<'p, T: Real> SelectiveScan<'p, T> {
    pub fn new(params: &'p SsmParams<T>) -> Self {
        SelectiveScan { params, cache: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, cache) = scan_forward_cached(self.params, x)?;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn cache(&self) -> Option<&ScanCache<T>> {
        self.cache.as_ref()
    }

    pub fn backward(&self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or(Error::MissingCache)?;
        scan_backward_cached(self.params, cache, upstream)
    }
}
