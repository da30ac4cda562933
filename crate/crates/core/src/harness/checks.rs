use std::collections::HashSet;

use crate::error::Result;
use crate::geometry::{downsample_voxels, feature_saliency, generate_salient_voxels, voxelize, CentroidMode, GridSpec, PointCloud};
use crate::harness::{synth_scene, SceneSpec};
use crate::numerics::SeededRng;
use crate::serialization::CurveOrder;

/// Exhaustive walk of a curve: whether every cell is hit exactly once and
/// whether every consecutive pair of indices is face-adjacent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurveWalk {
    pub bijective: bool,
    pub face_adjacent: bool,
}

pub fn curve_walk(curve: CurveOrder) -> Result<CurveWalk> {
    let n = curve.cell_count();
    let side = curve.side();
    let mut seen = vec![false; n as usize];
    let mut bijective = true;
    let mut face_adjacent = true;
    let mut prev: Option<[u64; 3]> = None;
    for i in 0..n {
        let c = curve.inverse(i)?;
        let flat = ((c[2] * side + c[1]) * side + c[0]) as usize;
        bijective &= c.iter().all(|&v| v < side) && !std::mem::replace(&mut seen[flat], true) && curve.index(c)? == i;
        if let Some(p) = prev {
            face_adjacent &= (0..3).map(|a| p[a].abs_diff(c[a])).sum::<u64>() == 1;
        }
        prev = Some(c);
    }
    Ok(CurveWalk { bijective, face_adjacent })
}

/// Largest relative drift of the count-weighted global centroid over
/// `stages` continuous-mode merges by 2 along every axis.
pub fn centroid_drift(spec: &SceneSpec, stages: u32) -> Result<f64> {
    let scene = synth_scene(spec)?;
    let mut vs = voxelize(&scene.cloud, &spec.grid)?;
    let g0 = vs.global_centroid();
    let scale = g0.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut drift = 0.0f64;
    for _ in 0..stages {
        vs = downsample_voxels(&vs, [2, 2, 2], CentroidMode::Continuous)?;
        let g = vs.global_centroid();
        drift = drift.max((0..3).map(|a| (g[a] - g0[a]).abs() / scale).fold(0.0, f64::max));
    }
    Ok(drift)
}

fn projection(c: [i64; 3], m: i64) -> [i64; 3] {
    [c[0], c[1], c[2].div_euclid(m)]
}

/// One randomized voxel-generation trial; returns the number of generated
/// voxels whose `(x, y, floor(z/m))` projection collides with an existing
/// voxel or another generated voxel, and the number generated.
pub fn conflict_trial(seed: u64) -> Result<(usize, usize)> {
    let mut rng = SeededRng::new(seed);
    let grid = GridSpec::new([0.0; 3], [16.0, 16.0, 8.0], [1.0; 3])?;
    let n = 20 + rng.below(300);
    let points: Vec<[f64; 3]> = (0..n).map(|_| [rng.uniform(0.0, 16.0), rng.uniform(0.0, 16.0), rng.uniform(0.0, 8.0)]).collect();
    let intensity = rng.uniform_vec(n, 0.0, 1.0);
    let mut vs = voxelize(&PointCloud::new(points, Some(intensity))?, &grid)?;
    if rng.below(2) == 1 {
        vs = downsample_voxels(&vs, [1, 1, 2], CentroidMode::Continuous)?;
    }
    let m = 1 + rng.below(4) as i64;
    let k = 1 + rng.below(vs.len());
    let generated = generate_salient_voxels(&vs, k, m as u64, &feature_saliency(&vs))?;
    let mut occupied: HashSet<[i64; 3]> = vs.discrete_coords().iter().map(|&c| projection(c, m)).collect();
    let collisions = generated.discrete_coords().iter().filter(|&&c| !occupied.insert(projection(c, m))).count();
    Ok((collisions, generated.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::serialization::Paradigm;

    #[test]
    fn hilbert_walks_are_adjacent_and_morton_is_not() {
        for b in 1..=3 {
            let h = curve_walk(CurveOrder::new(Paradigm::Hilbert, b).unwrap()).unwrap();
            assert_eq!(h, CurveWalk { bijective: true, face_adjacent: true });
            let z = curve_walk(CurveOrder::new(Paradigm::Zorder, b).unwrap()).unwrap();
            assert_eq!(z, CurveWalk { bijective: true, face_adjacent: false });
        }
    }

    #[test]
    fn conservation_and_conflict_trials() {
        assert!(centroid_drift(&SceneSpec { seed: 3, ..SceneSpec::default() }, 3).unwrap() <= 1e-12);
        let mut total = 0;
        for s in 0..50 {
            let (c, g) = conflict_trial(s).unwrap();
            assert_eq!(c, 0);
            total += g;
        }
        assert!(total > 0);
    }
}
