use crate::error::{Error, Result};
use crate::numerics::tensor::{Real, Tensor};

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Softplus,
    Silu,
    Identity,
}

/// `ln(1 + e^x)` in the overflow-safe form `max(x, 0) + ln(1 + e^-|x|)`.
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inverse(y: f64) -> f64 {
    // y + ln(1 - e^-y) == ln(e^y - 1), stable for both small and large y
    y + (-(-y).exp_m1()).ln()
}

impl Activation {
    pub fn eval<T: Real>(self, x: T) -> T {
        match self {
            Activation::Softplus => softplus(x),
            Activation::Silu => silu(x),
            Activation::Identity => x,
        }
    }

    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Softplus => sigmoid(x),
            Activation::Silu => {
                let s = sigmoid(x);
                s + x * s * (T::one() - s)
            }
            Activation::Identity => T::one(),
        }
    }
}

pub fn activation<T: Real>(x: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
    x.map(|v| kind.eval(v))
}

/// `out[n, j] = sum_i x[n, i] * weight[i, j] + bias[j]`.
pub fn affine_apply<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, cin) = x.dims2()?;
    let (win, cout) = weight.dims2()?;
    if win != cin {
        return Err(Error::shape(format!("input has {cin} columns but weight has {win} rows")));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape(format!("bias shape {:?}, expected [{cout}]", bias.shape())));
    }
    let mut out = Vec::with_capacity(n * cout);
    for r in 0..n {
        let xr = x.row(r);
        out.extend_from_slice(bias.data());
        let o = &mut out[r * cout..];
        for (i, &xi) in xr.iter().enumerate() {
            let w = weight.row(i);
            for j in 0..cout {
                o[j] = o[j] + xi * w[j];
            }
        }
    }
    Tensor::new(vec![n, cout], out)
}

/// Row-wise `x / sqrt(mean(x^2) + eps)`; also returns the per-row inverse RMS.
pub fn rms_norm(x: &Tensor, eps: f64) -> Result<(Tensor, Vec<f64>)> {
    let (n, c) = x.dims2()?;
    let mut inv = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n * c);
    for r in 0..n {
        let row = x.row(r);
        let s = 1.0 / (row.iter().map(|v| v * v).sum::<f64>() / c as f64 + eps).sqrt();
        inv.push(s);
        out.extend(row.iter().map(|v| v * s));
    }
    Ok((Tensor::new(vec![n, c], out)?, inv))
}

/// Input gradient of [`rms_norm`] given its output `y`, inverse RMS and upstream `g`:
/// `s * (g - y * mean(g * y))` per row.
pub fn rms_norm_backward(y: &Tensor, inv: &[f64], g: &Tensor) -> Result<Tensor> {
    let (n, c) = y.dims2()?;
    if g.shape() != y.shape() || inv.len() != n {
        return Err(Error::shape(format!("rms_norm_backward: y {:?}, g {:?}, {} scales", y.shape(), g.shape(), inv.len())));
    }
    let mut out = Vec::with_capacity(n * c);
    for (r, &s) in inv.iter().enumerate() {
        let (yr, gr) = (y.row(r), g.row(r));
        let m = yr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
        out.extend(yr.iter().zip(gr).map(|(yv, gv)| s * (gv - yv * m)));
    }
    Tensor::new(vec![n, c], out)
}

/// Central-difference gradient of a scalar function.
pub fn finite_diff_grad(f: impl Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, eps: f64) -> Result<Tensor<f64>> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    let mut probe = x.data().to_vec();
    let mut grad = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&Tensor::from_parts(x.shape().to_vec(), probe.clone()));
        probe[i] = orig - eps;
        let minus = f(&Tensor::from_parts(x.shape().to_vec(), probe.clone()));
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("function value at component {i}")));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Tensor::new(x.shape().to_vec(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rms_norm_gradient_matches_finite_differences() {
        let mut rng = crate::numerics::SeededRng::new(3);
        let x = Tensor::new(vec![3, 4], rng.uniform_vec(12, -2.0, 2.0)).unwrap();
        let g = Tensor::new(vec![3, 4], rng.uniform_vec(12, -1.0, 1.0)).unwrap();
        let (y, inv) = rms_norm(&x, 1e-6).unwrap();
        let dx = rms_norm_backward(&y, &inv, &g).unwrap();
        let loss = |v: &Tensor| rms_norm(v, 1e-6).unwrap().0.data().iter().zip(g.data()).map(|(a, b)| a * b).sum::<f64>();
        let fd = finite_diff_grad(loss, &x, 1e-6).unwrap();
        assert!(crate::numerics::max_rel_error(dx.data(), fd.data(), 1e-12) < 1e-7);
        let (z, _) = rms_norm(&Tensor::zeros(&[2, 4]), 1e-6).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn affine_examples() {
        let eye = t(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let zero_b = Tensor::vector(vec![0.0, 0.0]).unwrap();
        let out = affine_apply(&t(&[vec![1.0, 2.0]]), &eye, &zero_b).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);

        let w = t(&[vec![0.7, -3.0], vec![5.0, 2.5]]);
        let b = Tensor::vector(vec![3.0, 4.0]).unwrap();
        let out = affine_apply(&t(&[vec![0.0, 0.0]]), &w, &b).unwrap();
        assert_eq!(out.data(), &[3.0, 4.0]);

        // hand multiply: [1,1]·diag(2,3) + [1,1]
        let w = t(&[vec![2.0, 0.0], vec![0.0, 3.0]]);
        let b = Tensor::vector(vec![1.0, 1.0]).unwrap();
        let out = affine_apply(&t(&[vec![1.0, 1.0]]), &w, &b).unwrap();
        assert_eq!(out.data(), &[3.0, 4.0]);
    }

    #[test]
    fn affine_shape_errors() {
        let x = t(&[vec![1.0, 2.0, 3.0]]);
        let w = t(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = Tensor::vector(vec![0.0, 0.0]).unwrap();
        assert!(matches!(affine_apply(&x, &w, &b), Err(Error::Shape(_))));
        let x = t(&[vec![1.0, 2.0]]);
        let b3 = Tensor::vector(vec![0.0; 3]).unwrap();
        assert!(matches!(affine_apply(&x, &w, &b3), Err(Error::Shape(_))));
    }

    #[test]
    fn activation_examples() {
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(silu(0.0f64), 0.0);
        // 20 + ln(1 + e^-20), with e^-20 = 2.061153622438558e-9
        let expected = 20.0 + 2.061_153_620_314_381e-9;
        assert!((softplus(20.0f64) - expected).abs() < 1e-14);
        assert!(softplus(1000.0f64).is_finite());
        assert_eq!(softplus(-1000.0f64), 0.0);
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(activation(&x, Activation::Identity).unwrap(), x);
    }

    #[test]
    fn softplus_inverse_round_trips() {
        for y in [1e-3, 0.05, 0.1, 1.0, 30.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn finite_diff_examples() {
        let x = Tensor::vector(vec![1.0]).unwrap();
        let g = finite_diff_grad(|t| t.data()[0].powi(2), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-8);

        let x = Tensor::vector(vec![0.3, -2.0, 5.0]).unwrap();
        let g = finite_diff_grad(|_| 4.2, &x, 1e-4).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));

        // analytic silu derivative at 1: s + s(1-s) with s = sigmoid(1)
        let x = Tensor::vector(vec![1.0]).unwrap();
        let g = finite_diff_grad(|t| t.data().iter().map(|&v| silu(v)).sum(), &x, 1e-6).unwrap();
        let s = 1.0 / (1.0 + (-1.0f64).exp());
        let analytic = s + s * (1.0 - s);
        assert!((analytic - 0.927_670_511_871_486_7).abs() < 1e-12);
        assert!((g.data()[0] - analytic).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_rejects_non_finite_and_bad_eps() {
        let x = Tensor::vector(vec![0.0]).unwrap();
        assert!(matches!(finite_diff_grad(|_| f64::NAN, &x, 1e-3), Err(Error::NonFinite(_))));
        assert!(finite_diff_grad(|_| 0.0, &x, 0.0).is_err());
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        for kind in [Activation::Softplus, Activation::Silu] {
            for &x0 in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
                let x = Tensor::vector(vec![x0]).unwrap();
                let g = finite_diff_grad(|t| kind.eval(t.data()[0]), &x, 1e-5).unwrap();
                let a = kind.derivative(x0);
                assert!(((g.data()[0] - a) / a.abs().max(1e-3)).abs() <= 1e-6, "{kind:?} at {x0}");
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn affine_is_linear(
            a in -3.0f64..3.0, b in -3.0f64..3.0,
            x in proptest::collection::vec(-5.0f64..5.0, 6),
            y in proptest::collection::vec(-5.0f64..5.0, 6),
            w in proptest::collection::vec(-2.0f64..2.0, 6),
        ) {
            let x = Tensor::new(vec![2, 3], x).unwrap();
            let y = Tensor::new(vec![2, 3], y).unwrap();
            let w = Tensor::new(vec![3, 2], w).unwrap();
            let zero = Tensor::zeros(&[2]);
            let lhs = affine_apply(&x.axpby(a, &y, b).unwrap(), &w, &zero).unwrap();
            let rhs = affine_apply(&x, &w, &zero).unwrap()
                .axpby(a, &affine_apply(&y, &w, &zero).unwrap(), b).unwrap();
            for (l, r) in lhs.data().iter().zip(rhs.data()) {
                proptest::prop_assert!((l - r).abs() <= 1e-12 * (1.0 + l.abs()));
            }
        }
    }
}
