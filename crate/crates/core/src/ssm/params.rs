use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::numerics::{softplus_inverse, Real, SeededRng, Tensor};

/// Per-channel diagonal state-space parameters with input-dependent
/// (selective) step size and input/output projections.
///
/// For a token `x` (`C` channels):
/// `delta = softplus(x W_delta + b_delta)` (C), `B = x W_b + b_b` (S),
/// `Cout = x W_c + b_c` (S).
#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams<T: Real = f64> {
    pub(crate) a: Tensor<T>,
    pub(crate) d: Tensor<T>,
    pub(crate) w_delta: Tensor<T>,
    pub(crate) b_delta: Tensor<T>,
    pub(crate) w_b: Tensor<T>,
    pub(crate) b_b: Tensor<T>,
    pub(crate) w_c: Tensor<T>,
    pub(crate) b_c: Tensor<T>,
    seed: Option<u64>,
}

const TENSOR_FILES: [&str; 8] = ["a", "d", "w_delta", "b_delta", "w_b", "b_b", "w_c", "b_c"];

impl<T: Real> SsmParams<T> {
    /// Assembles and validates a parameter set. `A` must be strictly negative.
    #[allow(clippy::too_many_arguments)]
    pub fn from_tensors(
        a: Tensor<T>,
        d: Tensor<T>,
        w_delta: Tensor<T>,
        b_delta: Tensor<T>,
        w_b: Tensor<T>,
        b_b: Tensor<T>,
        w_c: Tensor<T>,
        b_c: Tensor<T>,
    ) -> Result<Self> {
        let (c, s) = a.dims2()?;
        let expect = |t: &Tensor<T>, shape: &[usize], name: &str| {
            if t.shape() == shape {
                Ok(())
            } else {
                Err(Error::shape(format!("{name} has shape {:?}, expected {shape:?}", t.shape())))
            }
        };
        expect(&d, &[c], "D")?;
        expect(&w_delta, &[c, c], "W_delta")?;
        expect(&b_delta, &[c], "b_delta")?;
        expect(&w_b, &[c, s], "W_b")?;
        expect(&b_b, &[s], "b_b")?;
        expect(&w_c, &[c, s], "W_c")?;
        expect(&b_c, &[s], "b_c")?;
        if a.data().iter().any(|&v| v >= T::zero()) {
            return Err(Error::invalid("every entry of A must be strictly negative"));
        }
        Ok(SsmParams { a, d, w_delta, b_delta, w_b, b_b, w_c, b_c, seed: None })
    }

    /// Projections with zero weights, so `delta`, `B` and `C` are the constant biases.
    pub fn pinned(a: Tensor<T>, d: Tensor<T>, delta: &[f64], b: &[f64], c: &[f64]) -> Result<Self> {
        let (ch, s) = a.dims2()?;
        if delta.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::invalid("pinned delta must be positive"));
        }
        let vec = |v: &[f64]| Tensor::vector(v.iter().map(|&x| T::of(x)).collect());
        SsmParams::from_tensors(
            a,
            d,
            Tensor::zeros(&[ch, ch]),
            vec(&delta.iter().map(|&v| softplus_inverse(v)).collect::<Vec<_>>())?,
            Tensor::zeros(&[ch, s]),
            vec(b)?,
            Tensor::zeros(&[ch, s]),
            vec(c)?,
        )
    }

    pub fn channels(&self) -> usize {
        self.a.rows()
    }

    pub fn state(&self) -> usize {
        self.a.cols()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn a(&self) -> &Tensor<T> {
        &self.a
    }

    pub fn d(&self) -> &Tensor<T> {
        &self.d
    }

    /// Replaces the residual weights `D`.
    pub fn set_d(&mut self, d: Tensor<T>) -> Result<()> {
        if d.shape() != self.d.shape() {
            return Err(Error::shape("D shape"));
        }
        self.d = d;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> SsmParams<U> {
        SsmParams {
            a: self.a.cast(),
            d: self.d.cast(),
            w_delta: self.w_delta.cast(),
            b_delta: self.b_delta.cast(),
            w_b: self.w_b.cast(),
            b_b: self.b_b.cast(),
            w_c: self.w_c.cast(),
            b_c: self.b_c.cast(),
            seed: self.seed,
        }
    }

    fn tensors(&self) -> [&Tensor<T>; 8] {
        [&self.a, &self.d, &self.w_delta, &self.b_delta, &self.w_b, &self.b_b, &self.w_c, &self.b_c]
    }

    /// Writes `manifest.txt` plus one tensor container per parameter into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut kv = KvFile::default();
        kv.insert("C", self.channels());
        kv.insert("S", self.state());
        kv.insert("precision", T::PRECISION.as_str());
        kv.insert("seed", self.seed.map_or("none".to_string(), |s| s.to_string()));
        fs::write(dir.join("manifest.txt"), kv.to_string())?;
        for (name, t) in TENSOR_FILES.iter().zip(self.tensors()) {
            fs::write(dir.join(format!("{name}.sfkt")), t.to_bytes())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let kv = KvFile::parse(&fs::read_to_string(dir.join("manifest.txt"))?)?;
        let precision: crate::numerics::Precision = kv.get("precision")?;
        if precision != T::PRECISION {
            return Err(Error::format(format!("parameters stored in {} precision", precision.as_str())));
        }
        let mut ts = Vec::with_capacity(8);
        for name in TENSOR_FILES {
            let bytes = fs::read(dir.join(format!("{name}.sfkt")))?;
            ts.push(Tensor::<T>::read_from(bytes.as_slice())?);
        }
        let [a, d, wd, bd, wb, bb, wc, bc]: [Tensor<T>; 8] = ts.try_into().expect("eight tensors");
        let mut p = SsmParams::from_tensors(a, d, wd, bd, wb, bb, wc, bc)?;
        if p.channels() != kv.get::<usize>("C")? || p.state() != kv.get::<usize>("S")? {
            return Err(Error::format("manifest dimensions disagree with tensors"));
        }
        p.seed = kv.raw("seed").and_then(|s| s.parse().ok());
        Ok(p)
    }
}

/// Diagonal HiPPO-style initialization: `A[c, n] = -(n + 1)`, `D = 1`,
/// projection weights uniform in `+-1/sqrt(C)`, and a step-size bias whose
/// softplus is log-uniform in `[0.001, 0.1]` across channels.
pub fn hippo_init(channels: usize, state: usize, rng: &mut SeededRng) -> Result<SsmParams<f64>> {
    if channels == 0 || state == 0 {
        return Err(Error::invalid("channels and state dimension must be at least 1"));
    }
    let a = (0..channels).flat_map(|_| (0..state).map(|n| -((n + 1) as f64))).collect();
    let bound = 1.0 / (channels as f64).sqrt();
    let dt: Vec<f64> = (0..channels).map(|_| rng.uniform(0.001f64.ln(), 0.1f64.ln()).exp()).map(softplus_inverse).collect();
    let w_delta = rng.uniform_vec(channels * channels, -bound, bound);
    let w_b = rng.uniform_vec(channels * state, -bound, bound);
    let w_c = rng.uniform_vec(channels * state, -bound, bound);
    let mut p = SsmParams::from_tensors(
        Tensor::new(vec![channels, state], a)?,
        Tensor::new(vec![channels], vec![1.0; channels])?,
        Tensor::new(vec![channels, channels], w_delta)?,
        Tensor::new(vec![channels], dt)?,
        Tensor::new(vec![channels, state], w_b)?,
        Tensor::zeros(&[state]),
        Tensor::new(vec![channels, state], w_c)?,
        Tensor::zeros(&[state]),
    )?;
    p.seed = Some(rng.seed());
    Ok(p)
}

/// Zero-order hold on `A`, Euler on `B`: `Abar = exp(delta A)`, `Bbar = delta B`.
pub fn discretize<T: Real>(a_row: &[T], b_t: &[T], delta: T) -> Result<(Vec<T>, Vec<T>)> {
    if !(delta > T::zero()) {
        return Err(Error::invalid("step size delta must be positive"));
    }
    if a_row.len() != b_t.len() {
        return Err(Error::shape("A row and B_t differ in length"));
    }
    Ok((a_row.iter().map(|&a| (delta * a).exp()).collect(), b_t.iter().map(|&b| delta * b).collect()))
}
