use crate::error::{Error, Result};
use crate::tokens::TokenSequence;

/// Partition of tokens into non-overlapping `w x w` blocks of the x-y plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionAssignment {
    window: u64,
    row_stride: u64,
    region: Vec<u64>,
    in_region: Vec<(u64, u64)>,
}

impl RegionAssignment {
    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn row_stride(&self) -> u64 {
        self.row_stride
    }

    pub fn region(&self) -> &[u64] {
        &self.region
    }

    pub fn in_region(&self) -> &[(u64, u64)] {
        &self.in_region
    }

    pub fn len(&self) -> usize {
        self.region.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region.is_empty()
    }

    /// Token indices of every region, regions in ascending index order.
    pub fn groups(&self) -> Vec<(u64, Vec<usize>)> {
        let mut idx: Vec<usize> = (0..self.region.len()).collect();
        idx.sort_by_key(|&i| self.region[i]);
        let mut out: Vec<(u64, Vec<usize>)> = Vec::new();
        for i in idx {
            match out.last_mut() {
                Some((r, members)) if *r == self.region[i] => members.push(i),
                _ => out.push((self.region[i], vec![i])),
            }
        }
        out
    }
}

/// Region index `r = floor(x/w) * ceil(Y/w) + floor(y/w)` and in-region
/// position `(x mod w, y mod w)` for every token, with `Y` the grid's y extent
/// in cells.
pub fn region_partition(tokens: &TokenSequence, window: u64, y_extent: u64) -> Result<RegionAssignment> {
    if window == 0 {
        return Err(Error::invalid("window must be at least 1"));
    }
    let row_stride = y_extent.div_ceil(window);
    let mut region = Vec::with_capacity(tokens.len());
    let mut in_region = Vec::with_capacity(tokens.len());
    for c in tokens.coords() {
        if c[0] < 0.0 || c[1] < 0.0 {
            return Err(Error::OutOfRange(format!("negative token coordinate {c:?}")));
        }
        let (x, y) = (c[0].floor() as u64, c[1].floor() as u64);
        if y >= y_extent {
            return Err(Error::OutOfRange(format!("token y {y} outside extent {y_extent}")));
        }
        region.push((x / window) * row_stride + y / window);
        in_region.push((x % window, y % window));
    }
    Ok(RegionAssignment { window, row_stride, region, in_region })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{SeededRng, Tensor};
    use crate::tokens::Modality;

    fn tokens_at(cells: &[[f64; 3]]) -> TokenSequence {
        TokenSequence::uniform(Tensor::zeros(&[cells.len(), 1]), cells.to_vec(), Modality::Lidar).unwrap()
    }

    #[test]
    fn worked_example() {
        let r = region_partition(&tokens_at(&[[3.0, 5.0, 0.0]]), 2, 6).unwrap();
        assert_eq!(r.region(), &[5]);
        assert_eq!(r.in_region(), &[(1, 1)]);
        assert_eq!(r.row_stride(), 3);
    }

    #[test]
    fn unit_window_isolates_every_token() {
        let cells: Vec<[f64; 3]> = (0..4).flat_map(|x| (0..4).map(move |y| [x as f64, y as f64, 0.0])).collect();
        let r = region_partition(&tokens_at(&cells), 1, 4).unwrap();
        assert!(r.in_region().iter().all(|&p| p == (0, 0)));
        assert_eq!(r.groups().len(), 16);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(region_partition(&tokens_at(&[[-1.0, 0.0, 0.0]]), 2, 4).is_err());
        assert!(region_partition(&tokens_at(&[[0.0, 4.0, 0.0]]), 2, 4).is_err());
        assert!(region_partition(&tokens_at(&[[0.0, 0.0, 0.0]]), 0, 4).is_err());
    }

    #[test]
    fn shared_region_means_shared_block() {
        let mut rng = SeededRng::new(200);
        let cells: Vec<[f64; 3]> = (0..200).map(|_| [rng.below(37) as f64, rng.below(29) as f64, rng.below(5) as f64]).collect();
        let r = region_partition(&tokens_at(&cells), 4, 29).unwrap();
        for i in 0..cells.len() {
            let (x, y) = r.in_region()[i];
            assert!(x < 4 && y < 4);
            for j in 0..cells.len() {
                let same_block = (cells[i][0] as u64 / 4, cells[i][1] as u64 / 4) == (cells[j][0] as u64 / 4, cells[j][1] as u64 / 4);
                assert_eq!(r.region()[i] == r.region()[j], same_block, "{i} {j}");
            }
        }
    }
}
