use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Sinusoidal positional embedding of normalized coordinates.
///
/// Frequencies `f_k = 2^k pi` for `k < frequencies`; for each frequency and
/// each axis in turn the pair `(sin(f_k p), cos(f_k p))` is emitted. The
/// `6 * frequencies` values are truncated to `channels`, or padded with zeros
/// when `channels` is larger. `frequencies == 0` yields all zeros.
pub fn pos_embedding(coords: &[[f64; 3]], channels: usize, frequencies: usize) -> Result<Tensor> {
    if coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("positional coordinate".into()));
    }
    let mut data = vec![0.0; coords.len() * channels];
    for (row, p) in data.chunks_mut(channels.max(1)).zip(coords) {
        let mut j = 0;
        'fill: for k in 0..frequencies {
            let f = (k as f64).exp2() * std::f64::consts::PI;
            for &v in p {
                let (s, c) = (f * v).sin_cos();
                for value in [s, c] {
                    if j == channels {
                        break 'fill;
                    }
                    row[j] = value;
                    j += 1;
                }
            }
        }
    }
    Tensor::new(vec![coords.len(), channels], data)
}
