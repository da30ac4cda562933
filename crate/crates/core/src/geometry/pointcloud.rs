use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const POINTCLOUD_MAGIC: &[u8; 4] = b"SFPC";

/// Points in metres with optional per-point intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
    intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, intensity: Option<Vec<f64>>) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point coordinate".into()));
        }
        if let Some(i) = &intensity {
            if i.len() != points.len() {
                return Err(Error::shape(format!("{} intensities for {} points", i.len(), points.len())));
            }
            if i.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("intensity".into()));
            }
        }
        Ok(PointCloud { points, intensity })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn intensity(&self) -> Option<&[f64]> {
        self.intensity.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `SFPC`, u64 count, then `count x (3|4)` little-endian f32 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let per = if self.intensity.is_some() { 4 } else { 3 };
        let mut out = Vec::with_capacity(12 + self.points.len() * per * 4);
        out.extend_from_slice(POINTCLOUD_MAGIC);
        out.extend_from_slice(&(self.points.len() as u64).to_le_bytes());
        for (i, p) in self.points.iter().enumerate() {
            for v in p {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            if let Some(int) = &self.intensity {
                out.extend_from_slice(&(int[i] as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    /// Reads a point cloud; whether intensity is present follows from the payload length.
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut head = [0u8; 12];
        r.read_exact(&mut head)?;
        if &head[..4] != POINTCLOUD_MAGIC {
            return Err(Error::format("bad point cloud magic"));
        }
        let count = u64::from_le_bytes(head[4..12].try_into().expect("8 bytes")) as usize;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if count == 0 {
            if !body.is_empty() {
                return Err(Error::format("payload present for an empty point cloud"));
            }
            return PointCloud::new(Vec::new(), None);
        }
        let per = match body.len().checked_div(count * 4) {
            Some(3) if body.len() == count * 12 => 3,
            Some(4) if body.len() == count * 16 => 4,
            _ => return Err(Error::format(format!("{} payload bytes do not match {count} points of 3 or 4 floats", body.len()))),
        };
        let vals: Vec<f64> = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64).collect();
        let points = vals.chunks_exact(per).map(|c| [c[0], c[1], c[2]]).collect();
        let intensity = (per == 4).then(|| vals.chunks_exact(4).map(|c| c[3]).collect());
        PointCloud::new(points, intensity)
    }
}
