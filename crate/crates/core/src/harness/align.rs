use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{downsample_voxels, project_to_image, voxelize, CentroidMode, SparseVoxelSet};
use crate::harness::{synth_scene, MetricsReport, Scene, SceneSpec};

/// Per-scene alignment statistics for one centroid mode.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentStats {
    pub voxels: usize,
    pub object_voxels: usize,
    /// Object voxels whose centroid projects into an image with a visible mask of their object.
    pub projected: usize,
    pub mean: f64,
    pub p95: f64,
}

/// Voxelizes the scene and merges `stages` times by `factor`, recording the
/// plurality point label of every final voxel (ties go to ground, then to the
/// lower object id).
pub fn staged_voxels(
    scene: &Scene,
    spec: &SceneSpec,
    mode: CentroidMode,
    stages: u32,
    factor: [u64; 3],
) -> Result<(SparseVoxelSet, Vec<Option<u32>>)> {
    let mut vs = voxelize(&scene.cloud, &spec.grid)?;
    let mut votes: Vec<BTreeMap<Option<u32>, u64>> = vec![BTreeMap::new(); vs.len()];
    for (p, a) in vs.assignment().iter().enumerate() {
        if let Some(j) = a {
            *votes[*j].entry(scene.labels[p]).or_default() += 1;
        }
    }
    for _ in 0..stages {
        vs = downsample_voxels(&vs, factor, mode)?;
        let mut next: Vec<BTreeMap<Option<u32>, u64>> = vec![BTreeMap::new(); vs.len()];
        for (i, a) in vs.assignment().iter().enumerate() {
            let j = a.ok_or_else(|| Error::Invariant("downsampled voxel without a parent".into()))?;
            for (&label, &n) in &votes[i] {
                *next[j].entry(label).or_default() += n;
            }
        }
        votes = next;
    }
    let labels = votes
        .iter()
        .map(|v| {
            let best = v.values().copied().max().unwrap_or(0);
            v.iter().find(|&(_, &n)| n == best).and_then(|(&l, _)| l)
        })
        .collect();
    Ok((vs, labels))
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    // nearest-rank
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Pixel distance from every projected object voxel to the nearest pixel of
/// its own object, over all cameras of the spec.
pub fn alignment_errors(scene: &Scene, spec: &SceneSpec, mode: CentroidMode, stages: u32) -> Result<(AlignmentStats, Vec<f64>)> {
    let (vs, labels) = staged_voxels(scene, spec, mode, stages, [1, 1, 2])?;
    let object: Vec<usize> = (0..vs.len()).filter(|&j| labels[j].is_some()).collect();
    let pts: Vec<[f64; 3]> = object.iter().map(|&j| vs.centroids()[j]).collect();
    let mut errors = Vec::new();
    for (cam, mask) in spec.cameras.iter().zip(&scene.masks) {
        for hit in project_to_image(&pts, cam) {
            let id = labels[object[hit.index]].expect("object voxel");
            if let Some(d) = mask.distance_to(hit.u, hit.v, id) {
                errors.push(d);
            }
        }
    }
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let stats = AlignmentStats {
        voxels: vs.len(),
        object_voxels: object.len(),
        projected: errors.len(),
        mean: if errors.is_empty() { 0.0 } else { errors.iter().sum::<f64>() / errors.len() as f64 },
        p95: if sorted.is_empty() { 0.0 } else { percentile(&sorted, 0.95) },
    };
    Ok((stats, errors))
}

/// Single-scene alignment report for one centroid mode.
pub fn run_alignment_eval(spec: &SceneSpec, mode: CentroidMode, stages: u32) -> Result<MetricsReport> {
    let scene = synth_scene(spec)?;
    let (stats, _) = alignment_errors(&scene, spec, mode, stages)?;
    let mut report = MetricsReport::new("align-eval", spec.seed, &scene_config_text(spec, stages));
    let m = mode_name(mode);
    report.set(&format!("{m}.voxels"), stats.voxels as f64)?;
    report.set(&format!("{m}.object_voxels"), stats.object_voxels as f64)?;
    report.set(&format!("{m}.projected"), stats.projected as f64)?;
    report.set(&format!("{m}.mean_px"), stats.mean)?;
    report.set(&format!("{m}.p95_px"), stats.p95)?;
    Ok(report)
}

fn mode_name(mode: CentroidMode) -> &'static str {
    match mode {
        CentroidMode::Continuous => "continuous",
        CentroidMode::Discrete => "discrete",
    }
}

/// Canonical text of a scene spec plus stage count, used for config hashing.
pub fn scene_config_text(spec: &SceneSpec, stages: u32) -> String {
    format!("{}\nstages = {stages}\n", serde_json::to_string(spec).expect("serializable spec"))
}

/// Paired continuous/discrete comparison over a batch of scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentBatch {
    pub continuous: Vec<AlignmentStats>,
    pub discrete: Vec<AlignmentStats>,
    /// Every projected-voxel error of the batch, per mode, in scene order.
    pub continuous_errors: Vec<f64>,
    pub discrete_errors: Vec<f64>,
}

impl AlignmentBatch {
    pub fn scenes(&self) -> usize {
        self.continuous.len()
    }

    /// Fraction of scenes where the continuous mean error is strictly lower.
    /// Scenes without projected object voxels count as losses.
    pub fn win_fraction(&self) -> f64 {
        let wins = self.continuous.iter().zip(&self.discrete).filter(|(c, d)| c.projected > 0 && c.mean < d.mean).count();
        wins as f64 / self.scenes().max(1) as f64
    }

    /// Mean over every projected voxel of every scene.
    pub fn aggregate_mean(stats: &[AlignmentStats]) -> f64 {
        let n: usize = stats.iter().map(|s| s.projected).sum();
        if n == 0 {
            return 0.0;
        }
        stats.iter().map(|s| s.mean * s.projected as f64).sum::<f64>() / n as f64
    }

    pub fn report(&self, base: &SceneSpec, stages: u32) -> Result<MetricsReport> {
        let mut r = MetricsReport::new("align-eval", base.seed, &scene_config_text(base, stages));
        r.set("scenes", self.scenes() as f64)?;
        r.set("stages", stages as f64)?;
        for (name, stats, errors) in
            [("continuous", &self.continuous, &self.continuous_errors), ("discrete", &self.discrete, &self.discrete_errors)]
        {
            r.set(&format!("{name}.mean_px"), Self::aggregate_mean(stats))?;
            let mut sorted = errors.clone();
            sorted.sort_by(f64::total_cmp);
            r.set(&format!("{name}.p95_px"), if sorted.is_empty() { 0.0 } else { percentile(&sorted, 0.95) })?;
            r.set(&format!("{name}.projected"), errors.len() as f64)?;
        }
        r.set("continuous_win_fraction", self.win_fraction())?;
        r.check("continuous_below_discrete", Self::aggregate_mean(&self.continuous) < Self::aggregate_mean(&self.discrete));
        Ok(r)
    }
}

/// Runs both centroid modes on `scenes` scenes derived from `base`. The voxel
/// sets of the two modes share membership, so only centroid values differ.
pub fn alignment_batch(base: &SceneSpec, scenes: usize, stages: u32) -> Result<AlignmentBatch> {
    type Pair = ((AlignmentStats, Vec<f64>), (AlignmentStats, Vec<f64>));
    let per: Vec<Result<Pair>> = (0..scenes as u64)
        .into_par_iter()
        .map(|i| {
            let spec = base.nth(i);
            let scene = synth_scene(&spec)?;
            let c = alignment_errors(&scene, &spec, CentroidMode::Continuous, stages)?;
            let d = alignment_errors(&scene, &spec, CentroidMode::Discrete, stages)?;
            if c.0.voxels != d.0.voxels {
                return Err(Error::Invariant("centroid mode changed the voxel count".into()));
            }
            Ok((c, d))
        })
        .collect();
    let mut batch =
        AlignmentBatch { continuous: Vec::new(), discrete: Vec::new(), continuous_errors: Vec::new(), discrete_errors: Vec::new() };
    for r in per {
        let ((c, ce), (d, de)) = r?;
        batch.continuous.push(c);
        batch.discrete.push(d);
        batch.continuous_errors.extend(ce);
        batch.discrete_errors.extend(de);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_zero_modes_coincide_without_noise() {
        let spec = SceneSpec { seed: 2, noise: 0.0, ..SceneSpec::default() };
        let scene = synth_scene(&spec).unwrap();
        let (c, ec) = alignment_errors(&scene, &spec, CentroidMode::Continuous, 0).unwrap();
        let (d, ed) = alignment_errors(&scene, &spec, CentroidMode::Discrete, 0).unwrap();
        assert_eq!(c, d);
        assert_eq!(ec, ed);
    }

    #[test]
    fn mode_changes_centroids_only() {
        let spec = SceneSpec { seed: 5, ..SceneSpec::default() };
        let scene = synth_scene(&spec).unwrap();
        let (a, la) = staged_voxels(&scene, &spec, CentroidMode::Continuous, 2, [1, 1, 2]).unwrap();
        let (b, lb) = staged_voxels(&scene, &spec, CentroidMode::Discrete, 2, [1, 1, 2]).unwrap();
        assert_eq!(a.len(), b.len());
        assert_eq!(a.discrete_coords(), b.discrete_coords());
        assert_eq!(la, lb);
        assert_ne!(a.centroids(), b.centroids());
    }

    #[test]
    fn continuous_beats_discrete_on_a_small_batch() {
        let batch = alignment_batch(&SceneSpec { seed: 1, ..SceneSpec::default() }, 4, 2).unwrap();
        assert!(AlignmentBatch::aggregate_mean(&batch.continuous) < AlignmentBatch::aggregate_mean(&batch.discrete));
        let r = batch.report(&SceneSpec::default(), 2).unwrap();
        assert!(r.metrics.contains_key("continuous_win_fraction"));
    }
}
