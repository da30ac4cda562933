use crate::error::{Error, Result};
use crate::serialization::Quantizer;

/// Axis-aligned voxel grid over `[range_min, range_max)` in metres.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub range_min: [f64; 3],
    pub range_max: [f64; 3],
    pub voxel_size: [f64; 3],
}

impl GridSpec {
    pub fn new(range_min: [f64; 3], range_max: [f64; 3], voxel_size: [f64; 3]) -> Result<Self> {
        let g = GridSpec { range_min, range_max, voxel_size };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            let ok = self.range_min[a].is_finite()
                && self.range_max[a].is_finite()
                && self.range_max[a] > self.range_min[a]
                && self.voxel_size[a] > 0.0
                && self.voxel_size[a].is_finite();
            if !ok {
                return Err(Error::invalid(format!("invalid grid on axis {a}: {self:?}")));
            }
        }
        Ok(())
    }

    /// Number of cells per axis.
    pub fn dims(&self) -> [u64; 3] {
        std::array::from_fn(|a| ((self.range_max[a] - self.range_min[a]) / self.voxel_size[a]).ceil() as u64)
    }

    /// Lower corner of cell `i` along axis `a` for a cell size of `size`.
    pub fn cell_lower(&self, a: usize, i: i64, size: f64) -> f64 {
        self.range_min[a] + i as f64 * size
    }

    /// Half-open cell index of `p` for the given cell size along axis `a`.
    ///
    /// The floor division is corrected against [`GridSpec::cell_lower`] so that
    /// a point never falls outside the extent computed for its own cell and a
    /// point on a boundary belongs to the higher cell.
    pub fn axis_cell(&self, a: usize, p: f64, size: f64) -> i64 {
        let mut i = ((p - self.range_min[a]) / size).floor() as i64;
        if self.cell_lower(a, i + 1, size) <= p {
            i += 1;
        } else if self.cell_lower(a, i, size) > p {
            i -= 1;
        }
        i
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.range_min[a] && p[a] < self.range_max[a])
    }

    /// Stage-0 cell of a point inside the range.
    pub fn cell_of(&self, p: [f64; 3]) -> Option<[i64; 3]> {
        if !self.contains(p) {
            return None;
        }
        let dims = self.dims();
        let cell: [i64; 3] = std::array::from_fn(|a| self.axis_cell(a, p[a], self.voxel_size[a]));
        (0..3).all(|a| cell[a] >= 0 && (cell[a] as u64) < dims[a]).then_some(cell)
    }

    /// Quantizer mapping metric coordinates onto this grid's cells.
    pub fn quantizer(&self) -> Quantizer {
        Quantizer { origin: self.range_min, cell: self.voxel_size, dims: Some(self.dims()) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_ranges() {
        assert!(GridSpec::new([0.0; 3], [1.0; 3], [0.1; 3]).is_ok());
        assert!(GridSpec::new([0.0; 3], [0.0, 1.0, 1.0], [0.1; 3]).is_err());
        assert!(GridSpec::new([0.0; 3], [1.0; 3], [0.1, 0.0, 0.1]).is_err());
    }

    #[test]
    fn boundary_points_go_to_higher_cell() {
        let g = GridSpec::new([0.0; 3], [3.0, 3.0, 2.0], [0.3, 0.3, 0.25]).unwrap();
        assert_eq!(g.dims(), [10, 10, 8]);
        // 0.6 / 0.3 rounds below 2 in binary; the boundary still belongs to cell 2
        assert_eq!(g.cell_of([0.6, 0.3, 0.5]), Some([2, 1, 2]));
        assert_eq!(g.cell_of([0.29, 0.29, 0.24]), Some([0, 0, 0]));
        assert_eq!(g.cell_of([3.0, 0.0, 0.0]), None);
        assert_eq!(g.cell_of([-1e-12, 0.0, 0.0]), None);
        for k in 0..10 {
            let p = k as f64 * 0.3;
            let i = g.axis_cell(0, p, 0.3);
            assert!(g.cell_lower(0, i, 0.3) <= p && p < g.cell_lower(0, i + 1, 0.3));
        }
    }
}
