//! Token sequences: feature rows with attached 3D coordinates and modality tags.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::serialization::RegionAssignment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Lidar,
    Camera,
}

/// Ordered feature vectors (`N x C`) with one coordinate triple per row.
///
/// Coordinates are either metres or grid cells depending on the producer;
/// everything that serializes tokens onto a curve treats them as cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    features: Tensor,
    coords: Vec<[f64; 3]>,
    modality: Vec<Modality>,
    serial: Option<Vec<usize>>,
    regions: Option<RegionAssignment>,
}

impl TokenSequence {
    pub fn new(features: Tensor, coords: Vec<[f64; 3]>, modality: Vec<Modality>) -> Result<Self> {
        let (n, _) = features.dims2()?;
        if coords.len() != n || modality.len() != n {
            return Err(Error::shape(format!("{n} feature rows but {} coords and {} modality tags", coords.len(), modality.len())));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("token coordinate".into()));
        }
        Ok(TokenSequence { features, coords, modality, serial: None, regions: None })
    }

    /// All tokens tagged with a single modality.
    pub fn uniform(features: Tensor, coords: Vec<[f64; 3]>, modality: Modality) -> Result<Self> {
        let n = coords.len();
        TokenSequence::new(features, coords, vec![modality; n])
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn modality(&self) -> &[Modality] {
        &self.modality
    }

    pub fn serial(&self) -> Option<&[usize]> {
        self.serial.as_deref()
    }

    pub fn regions(&self) -> Option<&RegionAssignment> {
        self.regions.as_ref()
    }

    /// Same tokens with new features of identical shape.
    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        if features.shape() != self.features.shape() {
            return Err(Error::shape(format!("replacement features {:?} vs {:?}", features.shape(), self.features.shape())));
        }
        Ok(TokenSequence { features, ..self.clone() })
    }

    pub fn with_coords(&self, coords: Vec<[f64; 3]>) -> Result<Self> {
        TokenSequence::new(self.features.clone(), coords, self.modality.clone())
    }

    pub fn with_serial(mut self, perm: Vec<usize>) -> Result<Self> {
        if !is_permutation(&perm, self.len()) {
            return Err(Error::invalid("serialization indices are not a permutation"));
        }
        self.serial = Some(perm);
        Ok(self)
    }

    pub fn with_regions(mut self, regions: RegionAssignment) -> Result<Self> {
        if regions.len() != self.len() {
            return Err(Error::shape("region assignment length"));
        }
        self.regions = Some(regions);
        Ok(self)
    }

    /// Rows in the given order (a subset or permutation); derived indices are dropped.
    pub fn select(&self, idx: &[usize]) -> TokenSequence {
        TokenSequence {
            features: self.features.gather_rows(idx),
            coords: idx.iter().map(|&i| self.coords[i]).collect(),
            modality: idx.iter().map(|&i| self.modality[i]).collect(),
            serial: None,
            regions: None,
        }
    }

    /// Concatenation of two sequences with equal channel counts.
    pub fn concat(&self, other: &TokenSequence) -> Result<TokenSequence> {
        if self.channels() != other.channels() {
            return Err(Error::shape(format!("cannot concatenate {} and {} channels", self.channels(), other.channels())));
        }
        let mut data = self.features.data().to_vec();
        data.extend_from_slice(other.features.data());
        let features = Tensor::new(vec![self.len() + other.len(), self.channels()], data)?;
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        let mut modality = self.modality.clone();
        modality.extend_from_slice(&other.modality);
        TokenSequence::new(features, coords, modality)
    }

    /// Indices of tokens carrying the given tag, in storage order.
    pub fn indices_of(&self, m: Modality) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.modality[i] == m).collect()
    }
}

pub(crate) fn is_permutation(perm: &[usize], n: usize) -> bool {
    if perm.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    perm.iter().all(|&p| p < n && !std::mem::replace(&mut seen[p], true))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_rows() {
        let f = Tensor::zeros(&[2, 3]);
        assert!(TokenSequence::uniform(f.clone(), vec![[0.0; 3]], Modality::Lidar).is_err());
        let t = TokenSequence::uniform(f, vec![[0.0; 3]; 2], Modality::Lidar).unwrap();
        assert!(t.clone().with_serial(vec![0, 0]).is_err());
        assert!(t.with_serial(vec![1, 0]).is_ok());
    }

    #[test]
    fn concat_and_select() {
        let a = TokenSequence::uniform(Tensor::from_rows(&[vec![1.0]]).unwrap(), vec![[1.0, 0.0, 0.0]], Modality::Lidar).unwrap();
        let b = TokenSequence::uniform(Tensor::from_rows(&[vec![2.0]]).unwrap(), vec![[2.0, 0.0, 0.0]], Modality::Camera).unwrap();
        let ab = a.concat(&b).unwrap();
        assert_eq!(ab.indices_of(Modality::Camera), vec![1]);
        let ba = ab.select(&[1, 0]);
        assert_eq!(ba.features().data(), &[2.0, 1.0]);
        assert_eq!(ba.modality(), &[Modality::Camera, Modality::Lidar]);
    }
}
