use std::fmt::Debug;
use std::io::{Read, Write};

use num_traits::Float;

use crate::error::{Error, Result};

/// Storage precision of a [`Tensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn tag(self) -> u8 {
        match self {
            Precision::Single => 1,
            Precision::Double => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(Precision::Single),
            2 => Ok(Precision::Double),
            other => Err(Error::format(format!("unknown precision byte {other}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Single => "single",
            Precision::Double => "double",
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            other => Err(Error::invalid(format!("unknown precision '{other}'"))),
        }
    }
}

/// Floating point element type usable in tensors and scans.
pub trait Real: Float + Debug + Default + Send + Sync + std::iter::Sum + 'static {
    const PRECISION: Precision;
    const BYTES: usize;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    fn from_any(any: AnyTensor) -> Option<Tensor<Self>>;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::Single;
    const BYTES: usize = 4;

    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
    fn from_any(any: AnyTensor) -> Option<Tensor<Self>> {
        match any {
            AnyTensor::Single(t) => Some(t),
            AnyTensor::Double(_) => None,
        }
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Double;
    const BYTES: usize = 8;

    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
    fn from_any(any: AnyTensor) -> Option<Tensor<Self>> {
        match any {
            AnyTensor::Double(t) => Some(t),
            AnyTensor::Single(_) => None,
        }
    }
}

/// Dense row-major tensor with an explicit shape vector.
///
/// Construction through [`Tensor::new`] rejects NaN/Inf, so every tensor
/// handed out by an exported operation holds finite values only.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub const TENSOR_MAGIC: &[u8; 4] = b"SFKT";
pub const TENSOR_VERSION: u8 = 1;

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!("shape {shape:?} holds {expected} values but {} were given", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("element {i} of tensor {shape:?}")));
        }
        Ok(Tensor { shape, data })
    }

    /// Skips the finiteness scan; callers guarantee finite data.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn vector(data: Vec<T>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(Error::shape(format!("expected a matrix, got shape {other:?}"))),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() < 2 {
            1
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, a: T) -> Result<Self> {
        self.map(|v| v * a)
    }

    /// Elementwise `a*self + b*other`.
    pub fn axpby(&self, a: T, other: &Tensor<T>, b: T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&x, &y)| a * x + b * y).collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        self.axpby(T::one(), other, T::one())
    }

    /// Gathers rows in the given order: `out[k] = self[order[k]]`.
    pub fn gather_rows(&self, order: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(order.len() * c);
        for &i in order {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(order.len());
        } else {
            shape[0] = order.len();
        }
        Tensor { shape, data }
    }

    /// Inverse of [`Tensor::gather_rows`] for a permutation: `out[order[k]] = self[k]`.
    pub fn scatter_rows(&self, order: &[usize]) -> Self {
        let c = self.cols();
        let mut data = vec![T::zero(); self.data.len()];
        for (k, &i) in order.iter().enumerate() {
            data[i * c..(i + 1) * c].copy_from_slice(self.row(k));
        }
        Tensor { shape: self.shape.clone(), data }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }

    /// Binary container: magic, version, precision, rank, u64 extents, values (all little-endian).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + 8 * self.shape.len() + T::BYTES * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.push(TENSOR_VERSION);
        out.push(T::PRECISION.tag());
        out.push(self.shape.len() as u8);
        for &e in &self.shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in &self.data {
            v.write_le(&mut out);
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }
}

/// A tensor whose precision is only known after reading a container.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    Single(Tensor<f32>),
    Double(Tensor<f64>),
}

impl AnyTensor {
    pub fn precision(&self) -> Precision {
        match self {
            AnyTensor::Single(_) => Precision::Single,
            AnyTensor::Double(_) => Precision::Double,
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        match self {
            AnyTensor::Single(t) => t.cast(),
            AnyTensor::Double(t) => t.clone(),
        }
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 7];
        r.read_exact(&mut header)?;
        if &header[..4] != TENSOR_MAGIC {
            return Err(Error::format("bad tensor magic"));
        }
        if header[4] != TENSOR_VERSION {
            return Err(Error::format(format!("unsupported tensor version {}", header[4])));
        }
        let precision = Precision::from_tag(header[5])?;
        let rank = header[6] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::format("extent overflow"))?);
        }
        let n = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e)).ok_or_else(|| Error::format("extent product overflow"))?;
        match precision {
            Precision::Single => Ok(AnyTensor::Single(read_values(&mut r, shape, n)?)),
            Precision::Double => Ok(AnyTensor::Double(read_values(&mut r, shape, n)?)),
        }
    }
}

fn read_values<T: Real>(r: &mut impl Read, shape: Vec<usize>, n: usize) -> Result<Tensor<T>> {
    let mut raw = vec![0u8; n * T::BYTES];
    r.read_exact(&mut raw)?;
    let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
    Tensor::new(shape, data)
}

impl<T: Real> Tensor<T> {
    /// Reads a container, rejecting a precision other than `T`'s.
    pub fn read_from(r: impl Read) -> Result<Self> {
        let any = AnyTensor::read_from(r)?;
        let found = any.precision();
        T::from_any(any)
            .ok_or_else(|| Error::format(format!("container holds {} precision, expected {}", found.as_str(), T::PRECISION.as_str())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(matches!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(Tensor::new(vec![2], vec![1.0, f64::NAN]), Err(Error::NonFinite(_))));
        assert!(matches!(Tensor::new(vec![1], vec![f32::INFINITY]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn container_layout() {
        let t = Tensor::new(vec![1, 2], vec![1.0f32, -2.0]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..4], b"SFKT");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], Precision::Single.tag());
        assert_eq!(bytes[6], 2);
        assert_eq!(&bytes[7..15], &1u64.to_le_bytes());
        assert_eq!(&bytes[15..23], &2u64.to_le_bytes());
        assert_eq!(&bytes[23..27], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 31);
    }

    #[test]
    fn container_precision_is_checked() {
        let t = Tensor::new(vec![3], vec![1.0f64, 2.0, 3.0]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(Tensor::<f64>::read_from(bytes.as_slice()).unwrap(), t);
        assert!(Tensor::<f32>::read_from(bytes.as_slice()).is_err());
        assert!(AnyTensor::read_from(&b"XXXX\x01\x02\x00"[..]).is_err());
    }

    #[test]
    fn gather_scatter_are_inverse() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let order = [2, 0, 1];
        let g = t.gather_rows(&order);
        assert_eq!(g.row(0), &[5.0, 6.0]);
        assert_eq!(g.scatter_rows(&order), t);
    }

    proptest::proptest! {
        #[test]
        fn container_round_trip(shape in proptest::collection::vec(0usize..4, 0..4), seed in 0u64..1000) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|i| (i as f64 + seed as f64).sin()).collect();
            let t = Tensor::new(shape, data).unwrap();
            let back = Tensor::<f64>::read_from(t.to_bytes().as_slice()).unwrap();
            proptest::prop_assert_eq!(back, t);
        }
    }
}
