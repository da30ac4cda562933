use std::time::Instant;

use crate::error::{Error, Result};
use crate::harness::MetricsReport;
use crate::numerics::{SeededRng, Tensor};
use crate::ssm::{hippo_init, selective_scan_parallel};

/// Reference all-pairs attention `softmax(X X^T / sqrt(C)) X`, quadratic in N.
pub fn attention_forward(x: &Tensor) -> Result<Tensor> {
    let (n, c) = x.dims2()?;
    let scale = 1.0 / (c as f64).sqrt();
    let mut out = vec![0.0; n * c];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let xi = x.row(i);
        let mut peak = f64::NEG_INFINITY;
        for (j, wj) in w.iter_mut().enumerate() {
            *wj = scale * xi.iter().zip(x.row(j)).map(|(a, b)| a * b).sum::<f64>();
            peak = peak.max(*wj);
        }
        let mut total = 0.0;
        for wj in w.iter_mut() {
            *wj = (*wj - peak).exp();
            total += *wj;
        }
        let oi = &mut out[i * c..(i + 1) * c];
        for (j, &wj) in w.iter().enumerate() {
            for (o, v) in oi.iter_mut().zip(x.row(j)) {
                *o += wj * v;
            }
        }
        oi.iter_mut().for_each(|o| *o /= total);
    }
    Tensor::new(vec![n, c], out)
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub lengths: Vec<usize>,
    pub attention_lengths: Vec<usize>,
    pub channels: usize,
    pub state: usize,
    pub runs: usize,
    pub warmup: usize,
    pub attention_runs: usize,
    pub attention_warmup: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            lengths: vec![4096, 8192, 16384, 32768, 65536],
            attention_lengths: vec![1024, 2048, 4096, 8192],
            channels: 16,
            state: 16,
            runs: 20,
            warmup: 5,
            attention_runs: 3,
            attention_warmup: 1,
            seed: 0,
        }
    }
}

/// Median wall-clock milliseconds of `runs` calls after `warmup` discarded calls.
pub fn median_ms(mut f: impl FnMut() -> Result<()>, warmup: usize, runs: usize) -> Result<f64> {
    for _ in 0..warmup {
        f()?;
    }
    let mut t = Vec::with_capacity(runs.max(1));
    for _ in 0..runs.max(1) {
        let start = Instant::now();
        f()?;
        t.push(start.elapsed().as_secs_f64() * 1e3);
    }
    t.sort_by(f64::total_cmp);
    let m = t.len() / 2;
    Ok(if t.len() % 2 == 1 { t[m] } else { 0.5 * (t[m - 1] + t[m]) })
}

/// Least-squares slope of `ln t` against `ln n`.
pub fn loglog_slope(n: &[usize], t: &[f64]) -> f64 {
    let xs: Vec<f64> = n.iter().map(|&v| (v as f64).ln()).collect();
    let ys: Vec<f64> = t.iter().map(|v| v.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub scan_ms: Vec<(usize, f64)>,
    pub attention_ms: Vec<(usize, f64)>,
}

impl BenchResult {
    fn ratios(rows: &[(usize, f64)]) -> Vec<f64> {
        rows.windows(2).map(|w| w[1].1 / w[0].1).collect()
    }

    /// Time ratios of consecutive lengths of the selective scan.
    pub fn scan_ratios(&self) -> Vec<f64> {
        Self::ratios(&self.scan_ms)
    }

    pub fn attention_ratios(&self) -> Vec<f64> {
        Self::ratios(&self.attention_ms)
    }

    pub fn report(&self, opts: &BenchOptions) -> Result<MetricsReport> {
        let text = format!("{opts:?}");
        let mut r = MetricsReport::new("bench", opts.seed, &text);
        r.set("channels", opts.channels as f64)?;
        r.set("state", opts.state as f64)?;
        for (name, rows) in [("scan", &self.scan_ms), ("attention", &self.attention_ms)] {
            for (n, ms) in rows.iter() {
                r.set(&format!("{name}.ms.{n}"), *ms)?;
            }
            for (w, ratio) in rows.windows(2).zip(Self::ratios(rows)) {
                r.set(&format!("{name}.ratio.{}_{}", w[0].0, w[1].0), ratio)?;
            }
            if rows.len() >= 2 {
                let (ns, ts): (Vec<usize>, Vec<f64>) = rows.iter().cloned().unzip();
                r.set(&format!("{name}.loglog_slope"), loglog_slope(&ns, &ts))?;
            }
        }
        r.check("scan_doubling_ratio_in_1.8_2.6", self.scan_ratios().iter().all(|q| (1.8..=2.6).contains(q)));
        Ok(r)
    }
}

fn is_ascending(v: &[usize]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// Times the selective scan and the attention baseline at each length.
pub fn bench_scaling(opts: &BenchOptions) -> Result<BenchResult> {
    if !is_ascending(&opts.lengths) || !is_ascending(&opts.attention_lengths) {
        return Err(Error::invalid("benchmark lengths must be strictly ascending"));
    }
    let mut rng = SeededRng::new(opts.seed);
    let params = hippo_init(opts.channels, opts.state, &mut rng.fork(1))?;
    let mut scan_ms = Vec::new();
    for &n in &opts.lengths {
        let x = Tensor::new(vec![n, opts.channels], rng.uniform_vec(n * opts.channels, -1.0, 1.0))?;
        let ms = median_ms(|| selective_scan_parallel(&params, &x).map(|_| ()), opts.warmup, opts.runs)?;
        scan_ms.push((n, ms));
    }
    let mut attention_ms = Vec::new();
    for &n in &opts.attention_lengths {
        let x = Tensor::new(vec![n, opts.channels], rng.uniform_vec(n * opts.channels, -1.0, 1.0))?;
        let ms = median_ms(|| attention_forward(&x).map(|_| ()), opts.attention_warmup, opts.attention_runs)?;
        attention_ms.push((n, ms));
    }
    Ok(BenchResult { scan_ms, attention_ms })
}
