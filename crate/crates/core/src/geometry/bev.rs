use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, GridSpec};
use crate::numerics::Tensor;
use crate::tokens::{Modality, TokenSequence};

/// Splats image tokens into bird's-eye-view cells along their camera rays.
///
/// Token coordinates are pixel cells `(col, row, _)`; the ray passes through
/// the pixel centre. Row `i` of `depth_weights` distributes token `i` over
/// `depth_bins` (camera depths in metres). Every ray point inside the grid's
/// x-y range adds `weight * feature` to its cell; a cell's feature is the
/// weight-normalized sum. Output tokens carry `(ix, iy, 0)` cell coordinates in
/// lexicographic cell order; cells that receive no mass are absent.
pub fn lift_to_bev(
    image_tokens: &TokenSequence,
    depth_weights: &Tensor,
    depth_bins: &[f64],
    cam: &CameraModel,
    grid: &GridSpec,
) -> Result<TokenSequence> {
    let (n, bins) = depth_weights.dims2()?;
    if n != image_tokens.len() || bins != depth_bins.len() {
        return Err(Error::shape(format!(
            "depth weights {:?} for {} tokens and {} bins",
            depth_weights.shape(),
            image_tokens.len(),
            depth_bins.len()
        )));
    }
    if depth_bins.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::invalid("depth bins must be positive"));
    }
    for i in 0..n {
        let row = depth_weights.row(i);
        let total: f64 = row.iter().sum();
        if row.iter().any(|&w| w < 0.0) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("depth weights of token {i} sum to {total}, expected 1")));
        }
    }
    let c = image_tokens.channels();
    let mut cells: BTreeMap<(i64, i64), (Vec<f64>, f64)> = BTreeMap::new();
    for i in 0..n {
        let px = image_tokens.coords()[i];
        let (u, v) = (px[0].floor() + 0.5, px[1].floor() + 0.5);
        let feat = image_tokens.features().row(i);
        for (b, &depth) in depth_bins.iter().enumerate() {
            let w = depth_weights.at(i, b);
            if w == 0.0 {
                continue;
            }
            let p = cam.unproject(u, v, depth);
            if !(0..2).all(|a| p[a] >= grid.range_min[a] && p[a] < grid.range_max[a]) {
                continue;
            }
            let key = (grid.axis_cell(0, p[0], grid.voxel_size[0]), grid.axis_cell(1, p[1], grid.voxel_size[1]));
            let (sum, mass) = cells.entry(key).or_insert_with(|| (vec![0.0; c], 0.0));
            for (s, f) in sum.iter_mut().zip(feat) {
                *s += w * f;
            }
            *mass += w;
        }
    }
    let mut data = Vec::with_capacity(cells.len() * c);
    let mut coords = Vec::with_capacity(cells.len());
    for ((ix, iy), (sum, mass)) in cells {
        data.extend(sum.iter().map(|s| s / mass));
        coords.push([ix as f64, iy as f64, 0.0]);
    }
    let features = Tensor::new(vec![coords.len(), c], data)?;
    TokenSequence::uniform(features, coords, Modality::Camera)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    fn setup() -> (CameraModel, GridSpec) {
        let cam = CameraModel::forward_facing([20.0, 20.0, 4.0, 4.0], (8, 8), [0.0, 0.0, 1.0]).unwrap();
        let grid = GridSpec::new([0.0, -8.0, -2.0], [32.0, 8.0, 4.0], [1.0, 1.0, 6.0]).unwrap();
        (cam, grid)
    }

    fn image(feats: &[Vec<f64>], pixels: &[[f64; 3]]) -> TokenSequence {
        TokenSequence::uniform(Tensor::from_rows(feats).unwrap(), pixels.to_vec(), Modality::Camera).unwrap()
    }

    #[test]
    fn single_bin_lands_in_one_cell() {
        let (cam, grid) = setup();
        let img = image(&[vec![2.0, -1.0]], &[[3.0, 3.0, 0.0]]);
        let w = Tensor::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        let bev = lift_to_bev(&img, &w, &[5.0, 10.0, 20.0], &cam, &grid).unwrap();
        assert_eq!(bev.len(), 1);
        assert_eq!(bev.features().data(), &[2.0, -1.0]);
        // pixel (3.5, 3.5): 0.5 px left of centre at depth 10 -> y = +0.25 m
        assert_eq!(bev.coords()[0], [10.0, 8.0, 0.0]);
    }

    #[test]
    fn split_mass_is_renormalized() {
        let (cam, grid) = setup();
        let img = image(&[vec![4.0]], &[[1.0, 6.0, 0.0]]);
        let w = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let bev = lift_to_bev(&img, &w, &[5.0, 15.0], &cam, &grid).unwrap();
        assert_eq!(bev.len(), 2);
        assert_eq!(bev.features().data(), &[4.0, 4.0]);
    }

    #[test]
    fn rejects_unnormalized_weights() {
        let (cam, grid) = setup();
        let img = image(&[vec![1.0]], &[[0.0, 0.0, 0.0]]);
        let w = Tensor::from_rows(&[vec![0.5, 0.4]]).unwrap();
        assert!(lift_to_bev(&img, &w, &[5.0, 15.0], &cam, &grid).is_err());
        let w = Tensor::from_rows(&[vec![1.0]]).unwrap();
        assert!(lift_to_bev(&img, &w, &[5.0, 15.0], &cam, &grid).is_err());
    }

    #[test]
    fn matches_direct_accumulation() {
        let (cam, grid) = setup();
        let mut rng = SeededRng::new(3);
        let bins = [4.0, 6.0, 9.0, 13.0];
        let pixels = [[1.0, 2.0, 0.0], [1.0, 3.0, 0.0], [6.0, 5.0, 0.0]];
        let feats: Vec<Vec<f64>> = (0..3).map(|_| rng.uniform_vec(3, -1.0, 1.0)).collect();
        let weights: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let raw = rng.uniform_vec(4, 0.1, 1.0);
                let s: f64 = raw.iter().sum();
                raw.iter().map(|w| w / s).collect()
            })
            .collect();
        let bev = lift_to_bev(&image(&feats, &pixels), &Tensor::from_rows(&weights).unwrap(), &bins, &cam, &grid).unwrap();

        // oracle: explicit list of contributions, grouped by linear search
        let mut acc: Vec<((i64, i64), Vec<f64>, f64)> = Vec::new();
        for i in 0..3 {
            for (b, &d) in bins.iter().enumerate() {
                let xc = (pixels[i][0] + 0.5 - cam.cx) / cam.fx * d;
                let p = [d, -xc, 0.0];
                if p[0] < 0.0 || p[0] >= 32.0 || p[1] < -8.0 || p[1] >= 8.0 {
                    continue;
                }
                let key = (p[0].floor() as i64, (p[1] + 8.0).floor() as i64);
                let w = weights[i][b];
                match acc.iter_mut().find(|e| e.0 == key) {
                    Some(e) => {
                        for (s, f) in e.1.iter_mut().zip(&feats[i]) {
                            *s += w * f;
                        }
                        e.2 += w;
                    }
                    None => acc.push((key, feats[i].iter().map(|f| w * f).collect(), w)),
                }
            }
        }
        acc.sort_by_key(|e| e.0);
        assert_eq!(bev.len(), acc.len());
        for (j, (key, sum, mass)) in acc.iter().enumerate() {
            assert_eq!(bev.coords()[j], [key.0 as f64, key.1 as f64, 0.0]);
            for (k, s) in sum.iter().enumerate() {
                assert!((bev.features().at(j, k) - s / mass).abs() <= 1e-12);
            }
        }
    }
}
