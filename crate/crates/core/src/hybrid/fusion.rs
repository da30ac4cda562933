use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{project_to_image, CameraModel, GridSpec, SparseVoxelSet};
use crate::hybrid::HybridStack;
use crate::numerics::Tensor;
use crate::tokens::{Modality, TokenSequence};

/// Voxel features as LiDAR tokens located at the voxel centroids.
pub fn voxel_tokens(vs: &SparseVoxelSet) -> Result<TokenSequence> {
    TokenSequence::uniform(vs.features().clone(), vs.centroids().to_vec(), Modality::Lidar)
}

/// Mean-pools voxel features into the bird's-eye-view cells of `grid` that
/// contain their centroids. Tokens carry `(ix, iy, 0)` in lexicographic order;
/// voxels whose centroid falls outside the grid's x-y range are dropped.
pub fn voxels_to_bev(vs: &SparseVoxelSet, grid: &GridSpec) -> Result<TokenSequence> {
    let c = vs.features().cols();
    let mut cells: BTreeMap<(i64, i64), (Vec<f64>, usize)> = BTreeMap::new();
    for (j, p) in vs.centroids().iter().enumerate() {
        if !(0..2).all(|a| p[a] >= grid.range_min[a] && p[a] < grid.range_max[a]) {
            continue;
        }
        let key = (grid.axis_cell(0, p[0], grid.voxel_size[0]), grid.axis_cell(1, p[1], grid.voxel_size[1]));
        let (sum, n) = cells.entry(key).or_insert_with(|| (vec![0.0; c], 0));
        for (s, f) in sum.iter_mut().zip(vs.features().row(j)) {
            *s += f;
        }
        *n += 1;
    }
    let mut data = Vec::with_capacity(cells.len() * c);
    let mut coords = Vec::with_capacity(cells.len());
    for ((ix, iy), (sum, n)) in cells {
        data.extend(sum.iter().map(|s| s / n as f64));
        coords.push([ix as f64, iy as f64, 0.0]);
    }
    TokenSequence::uniform(Tensor::new(vec![coords.len(), c], data)?, coords, Modality::Lidar)
}

/// Passes each modality separately through the same block stack.
pub fn modality_align(lidar: &TokenSequence, camera: &TokenSequence, shared: &HybridStack) -> Result<(TokenSequence, TokenSequence)> {
    if lidar.channels() != camera.channels() {
        return Err(Error::shape(format!("lidar has {} channels, camera {}", lidar.channels(), camera.channels())));
    }
    Ok((shared.forward(lidar)?, shared.forward(camera)?))
}

/// Result of image-plane fusion, split back by modality.
#[derive(Debug, Clone)]
pub struct ImageFusion {
    /// Fused LiDAR tokens at their image-plane coordinates `(u, v, 0)`.
    pub lidar: TokenSequence,
    /// Index into the input voxel tokens of every fused LiDAR token.
    pub lidar_source: Vec<usize>,
    pub camera: TokenSequence,
}

/// Projects voxel tokens into the image, merges them with the image tokens
/// (pixel-cell coordinates) and runs the stack over the joint set.
pub fn fuse_image_space(
    voxel_tokens: &TokenSequence,
    image_tokens: &TokenSequence,
    cam: &CameraModel,
    stack: &HybridStack,
) -> Result<ImageFusion> {
    let (merged, source) = image_plane_merge(voxel_tokens, image_tokens, cam)?;
    let out = stack.forward(&merged)?;
    let n_cam = image_tokens.len();
    let cam_idx: Vec<usize> = (0..n_cam).collect();
    let lidar_idx: Vec<usize> = (n_cam..out.len()).collect();
    let mut camera = out.select(&cam_idx);
    if camera.modality().iter().any(|&m| m != Modality::Camera) {
        camera = TokenSequence::uniform(camera.features().clone(), camera.coords().to_vec(), Modality::Camera)?;
    }
    Ok(ImageFusion { lidar: out.select(&lidar_idx), lidar_source: source, camera })
}

/// Camera tokens followed by the surviving projected voxel tokens, plus the
/// source index of every surviving voxel.
pub fn image_plane_merge(
    voxel_tokens: &TokenSequence,
    image_tokens: &TokenSequence,
    cam: &CameraModel,
) -> Result<(TokenSequence, Vec<usize>)> {
    let hits = project_to_image(voxel_tokens.coords(), cam);
    if hits.is_empty() {
        return Err(Error::Empty("no voxel projects into the image".into()));
    }
    let source: Vec<usize> = hits.iter().map(|h| h.index).collect();
    let projected = TokenSequence::uniform(
        voxel_tokens.features().gather_rows(&source),
        hits.iter().map(|h| [h.u, h.v, 0.0]).collect(),
        Modality::Lidar,
    )?;
    let camera = TokenSequence::uniform(image_tokens.features().clone(), image_tokens.coords().to_vec(), Modality::Camera)?;
    Ok((camera.concat(&projected)?, source))
}

/// Fuses LiDAR and lifted camera tokens over bird's-eye-view cells and keeps
/// only the LiDAR-occupied cells.
pub fn fuse_bev_space(lidar_bev: &TokenSequence, camera_bev: &TokenSequence, stack: &HybridStack) -> Result<TokenSequence> {
    fuse_bev_space_with(lidar_bev, camera_bev, stack, false)
}

/// As [`fuse_bev_space`]; `keep_all` also returns the camera-only cells.
pub fn fuse_bev_space_with(
    lidar_bev: &TokenSequence,
    camera_bev: &TokenSequence,
    stack: &HybridStack,
    keep_all: bool,
) -> Result<TokenSequence> {
    if lidar_bev.is_empty() {
        return Err(Error::Empty("no LiDAR tokens to fuse".into()));
    }
    let merged = lidar_bev.concat(camera_bev)?;
    let out = stack.forward(&merged)?;
    if keep_all {
        return Ok(out);
    }
    Ok(out.select(&(0..lidar_bev.len()).collect::<Vec<_>>()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{erf_probe, HybridBlockConfig, Pipeline};
    use crate::numerics::SeededRng;
    use crate::serialization::{sort_tokens, CurveOrder, Paradigm, Quantizer};
    use std::collections::BTreeSet;

    fn stack(channels: usize, order: u32, seed: u64) -> HybridStack {
        let cfg = HybridBlockConfig {
            window: 4,
            curve: CurveOrder::new(Paradigm::Hilbert, order).unwrap(),
            channels,
            state: 4,
            ..Default::default()
        };
        HybridStack::init(cfg, 2, &mut SeededRng::new(seed)).unwrap()
    }

    fn tokens(cells: Vec<[f64; 3]>, c: usize, m: Modality, seed: u64) -> TokenSequence {
        let n = cells.len();
        let f = Tensor::new(vec![n, c], SeededRng::new(seed).uniform_vec(n * c, -1.0, 1.0)).unwrap();
        TokenSequence::uniform(f, cells, m).unwrap()
    }

    fn image_grid(w: usize, h: usize, c: usize) -> TokenSequence {
        tokens((0..w * h).map(|i| [(i % w) as f64, (i / w) as f64, 0.0]).collect(), c, Modality::Camera, 9)
    }

    #[test]
    fn align_shares_parameters() {
        let mut s = stack(4, 4, 1);
        let t = tokens((0..20).map(|i| [i as f64 % 8.0, (i / 8) as f64, 1.0]).collect(), 4, Modality::Lidar, 2);
        let cam = TokenSequence::uniform(t.features().clone(), t.coords().to_vec(), Modality::Camera).unwrap();
        let (a, b) = modality_align(&t, &cam, &s).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(b.modality()[0], Modality::Camera);
        s.blocks[0].global.fwd.set_d(Tensor::vector(vec![0.0; 4]).unwrap()).unwrap();
        let (a2, b2) = modality_align(&t, &cam, &s).unwrap();
        assert_ne!(a2.features(), a.features());
        assert_ne!(b2.features(), b.features());
        let narrow = tokens(vec![[0.0; 3]], 2, Modality::Camera, 3);
        assert!(modality_align(&t, &narrow, &s).is_err());
    }

    #[test]
    fn image_fusion_counts_and_errors() {
        let cam = CameraModel::forward_facing([20.0, 20.0, 8.0, 6.0], (16, 12), [0.0, 0.0, 1.0]).unwrap();
        let img = image_grid(16, 12, 4);
        let vox = tokens(vec![[10.0, 0.0, 1.0], [10.0, 2.0, 1.5], [-5.0, 0.0, 1.0], [10.0, 50.0, 1.0]], 4, Modality::Lidar, 4);
        let s = stack(4, 4, 5);
        let fused = fuse_image_space(&vox, &img, &cam, &s).unwrap();
        assert_eq!(fused.lidar_source, vec![0, 1]);
        assert_eq!(fused.lidar.len(), 2);
        assert_eq!(fused.camera.len(), img.len());
        assert!(fused.lidar.modality().iter().all(|&m| m == Modality::Lidar));
        let behind = tokens(vec![[-5.0, 0.0, 1.0]], 4, Modality::Lidar, 4);
        assert!(matches!(fuse_image_space(&behind, &img, &cam, &s), Err(Error::Empty(_))));
    }

    #[test]
    fn principal_ray_voxel_sits_next_to_the_center_token() {
        let cam = CameraModel::forward_facing([20.0, 20.0, 8.0, 6.0], (16, 12), [0.0, 0.0, 1.0]).unwrap();
        let img = image_grid(16, 12, 4);
        let vox = tokens(vec![[7.0, 0.0, 1.0]], 4, Modality::Lidar, 6);
        let (merged, _) = image_plane_merge(&vox, &img, &cam).unwrap();
        let perm = sort_tokens(&merged, CurveOrder::new(Paradigm::Hilbert, 4).unwrap(), &Quantizer::cells()).unwrap();
        let center = 6 * 16 + 8;
        let voxel = merged.len() - 1;
        let (pc, pv) = (perm.inverse()[center], perm.inverse()[voxel]);
        assert_eq!(pc.abs_diff(pv), 1);
    }

    #[test]
    fn bev_fusion_keeps_lidar_cells() {
        let s = stack(4, 4, 7);
        let lidar = tokens(vec![[1.0, 1.0, 0.0], [5.0, 2.0, 0.0], [9.0, 9.0, 0.0]], 4, Modality::Lidar, 8);
        let camera = tokens(vec![[1.0, 2.0, 0.0], [4.0, 4.0, 0.0], [10.0, 9.0, 0.0], [6.0, 2.0, 0.0]], 4, Modality::Camera, 9);
        let fused = fuse_bev_space(&lidar, &camera, &s).unwrap();
        let cells = |t: &TokenSequence| t.coords().iter().map(|c| c.map(f64::to_bits)).collect::<BTreeSet<_>>();
        assert_eq!(cells(&fused), cells(&lidar));
        let alone = fuse_bev_space(&lidar, &tokens(vec![], 4, Modality::Camera, 0), &s).unwrap();
        assert_eq!(alone.features(), s.forward(&lidar).unwrap().features());
        assert_ne!(alone.features(), fused.features());
        assert_eq!(fuse_bev_space_with(&lidar, &camera, &s, true).unwrap().len(), 7);
        assert!(fuse_bev_space(&tokens(vec![], 4, Modality::Lidar, 0), &camera, &s).is_err());

        // gradient flows from camera tokens into LiDAR outputs
        let merged = lidar.concat(&camera).unwrap();
        let map = erf_probe(&s, &merged, &[0, 1, 2]).unwrap();
        assert!(map[3..].iter().all(|&v| v > 0.0));
        let (y, _) = Pipeline::forward_traced(&s, &merged).unwrap();
        assert_eq!(y.rows(), 7);
    }
}
