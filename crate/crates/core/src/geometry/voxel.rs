//! Sparse voxel sets whose centroids live in continuous space.
//!
//! Stage 0 centroids are the scatter-mean of the member points. Every
//! downsampling stage either keeps centroids continuous (count-weighted mean of
//! the children, equal to the mean of all underlying points) or snaps them to
//! the merged cell centre, which is the discrete baseline that loses height.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, PointCloud};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CentroidMode {
    Continuous,
    Discrete,
}

impl std::str::FromStr for CentroidMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(CentroidMode::Continuous),
            "discrete" => Ok(CentroidMode::Discrete),
            other => Err(Error::invalid(format!("unknown centroid mode '{other}'"))),
        }
    }
}

/// How children are weighted when merged into a parent voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergeWeighting {
    /// Weighted by underlying point counts; preserves the global point centroid.
    #[default]
    Count,
    /// Every child voxel weighs the same.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelSet {
    stage: u32,
    grid: GridSpec,
    scale: [u64; 3],
    discrete_coords: Vec<[i64; 3]>,
    centroids: Vec<[f64; 3]>,
    features: Tensor,
    assignment: Vec<Option<usize>>,
    counts: Vec<u64>,
}

impl SparseVoxelSet {
    pub fn stage(&self) -> u32 {
        self.stage
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Cumulative downsampling factor relative to stage 0.
    pub fn scale(&self) -> [u64; 3] {
        self.scale
    }

    pub fn cell_size(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.grid.voxel_size[a] * self.scale[a] as f64)
    }

    pub fn len(&self) -> usize {
        self.discrete_coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.discrete_coords.is_empty()
    }

    pub fn discrete_coords(&self) -> &[[i64; 3]] {
        &self.discrete_coords
    }

    pub fn centroids(&self) -> &[[f64; 3]] {
        &self.centroids
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// Voxel of every constituent (points at stage 0, child voxels later);
    /// `None` for points dropped outside the grid.
    pub fn assignment(&self) -> &[Option<usize>] {
        &self.assignment
    }

    /// Underlying point count per voxel (zero for generated voxels).
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Number of direct constituents per voxel.
    pub fn constituent_counts(&self) -> Vec<u64> {
        let mut out = vec![0; self.len()];
        for v in self.assignment.iter().flatten() {
            out[*v] += 1;
        }
        out
    }

    /// Same voxels with new per-voxel features.
    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        if features.rows() != self.len() || features.rank() != 2 {
            return Err(Error::shape(format!("{:?} features for {} voxels", features.shape(), self.len())));
        }
        Ok(SparseVoxelSet { features, ..self.clone() })
    }

    /// Lower and upper corner of voxel `j`'s cell at this stage.
    pub fn cell_extent(&self, j: usize) -> ([f64; 3], [f64; 3]) {
        let size = self.cell_size();
        let c = self.discrete_coords[j];
        (
            std::array::from_fn(|a| self.grid.cell_lower(a, c[a], size[a])),
            std::array::from_fn(|a| self.grid.cell_lower(a, c[a] + 1, size[a])),
        )
    }

    pub fn cell_center(&self, j: usize) -> [f64; 3] {
        let (lo, hi) = self.cell_extent(j);
        std::array::from_fn(|a| 0.5 * (lo[a] + hi[a]))
    }

    /// Count-weighted mean of all centroids.
    pub fn global_centroid(&self) -> [f64; 3] {
        let mut sum = [0.0; 3];
        let mut total = 0.0;
        for (c, &n) in self.centroids.iter().zip(&self.counts) {
            for a in 0..3 {
                sum[a] += c[a] * n as f64;
            }
            total += n as f64;
        }
        sum.map(|s| s / total)
    }

    /// Checks uniqueness of coordinates, centroid containment and count totals.
    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.len());
        for c in &self.discrete_coords {
            if !seen.insert(*c) {
                return Err(Error::invalid(format!("duplicate voxel {c:?}")));
            }
        }
        for j in 0..self.len() {
            if self.counts[j] == 0 {
                continue;
            }
            let (lo, hi) = self.cell_extent(j);
            let c = self.centroids[j];
            if (0..3).any(|a| c[a] < lo[a] || c[a] >= hi[a]) {
                return Err(Error::invalid(format!("centroid {c:?} of voxel {j} outside [{lo:?}, {hi:?})")));
            }
        }
        if self.stage == 0 {
            let assigned = self.assignment.iter().flatten().count() as u64;
            if self.counts.iter().sum::<u64>() != assigned {
                return Err(Error::invalid("counts do not sum to the assigned points"));
            }
        }
        Ok(())
    }
}

/// Mean of the values assigned to each of `groups` groups.
pub fn scatter_mean(values: &Tensor, assignment: &[usize], groups: usize) -> Result<Tensor> {
    weighted_scatter_mean(values, assignment, groups, None)
}

fn weighted_scatter_mean(values: &Tensor, assignment: &[usize], groups: usize, weights: Option<&[f64]>) -> Result<Tensor> {
    let (k, d) = values.dims2()?;
    if assignment.len() != k {
        return Err(Error::shape(format!("{} assignments for {k} values", assignment.len())));
    }
    let mut sums = vec![0.0; groups * d];
    let mut mass = vec![0.0; groups];
    let mut members = vec![0usize; groups];
    for (i, &g) in assignment.iter().enumerate() {
        if g >= groups {
            return Err(Error::OutOfRange(format!("group {g} of value {i} not below {groups}")));
        }
        let w = weights.map_or(1.0, |w| w[i]);
        for (s, v) in sums[g * d..(g + 1) * d].iter_mut().zip(values.row(i)) {
            *s += w * v;
        }
        mass[g] += w;
        members[g] += 1;
    }
    if let Some(g) = members.iter().position(|&m| m == 0) {
        return Err(Error::Empty(format!("group {g} has no members")));
    }
    // all-zero weights (generated voxels only) fall back to a plain mean
    if let Some(w) = weights {
        let zero: Vec<usize> = (0..groups).filter(|&g| mass[g] == 0.0).collect();
        if !zero.is_empty() {
            for (i, &g) in assignment.iter().enumerate() {
                if mass[g] == 0.0 && w[i] == 0.0 {
                    for (s, v) in sums[g * d..(g + 1) * d].iter_mut().zip(values.row(i)) {
                        *s += v;
                    }
                }
            }
            for g in zero {
                mass[g] = members[g] as f64;
            }
        }
    }
    for g in 0..groups {
        for s in &mut sums[g * d..(g + 1) * d] {
            *s /= mass[g];
        }
    }
    Tensor::new(vec![groups, d], sums)
}

fn points_tensor(points: &[[f64; 3]]) -> Tensor {
    Tensor::from_parts(vec![points.len(), 3], points.iter().flatten().copied().collect())
}

fn tensor_points(t: &Tensor) -> Vec<[f64; 3]> {
    t.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Groups keys into unique sorted cells; returns (cells, group of every key).
fn group_cells(keys: &[[i64; 3]]) -> (Vec<[i64; 3]>, Vec<usize>) {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by_key(|&i| keys[i]);
    let mut cells: Vec<[i64; 3]> = Vec::new();
    let mut group = vec![0; keys.len()];
    for i in order {
        if cells.last() != Some(&keys[i]) {
            cells.push(keys[i]);
        }
        group[i] = cells.len() - 1;
    }
    (cells, group)
}

/// Stage-0 voxelization: points outside the grid are dropped, the rest are
/// assigned to half-open cells, and each voxel's centroid is the mean of its
/// points. Voxels are stored in lexicographic cell order. Features hold the
/// mean intensity (one channel, zeros without intensity).
pub fn voxelize(pc: &PointCloud, grid: &GridSpec) -> Result<SparseVoxelSet> {
    grid.validate()?;
    let mut kept = Vec::new();
    let mut keys = Vec::new();
    for (i, p) in pc.points().iter().enumerate() {
        if let Some(cell) = grid.cell_of(*p) {
            kept.push(i);
            keys.push(cell);
        }
    }
    if kept.is_empty() {
        return Err(Error::Empty("no points inside the grid range".into()));
    }
    let (cells, group) = group_cells(&keys);
    let m = cells.len();
    let pts: Vec<[f64; 3]> = kept.iter().map(|&i| pc.points()[i]).collect();
    let centroids = tensor_points(&scatter_mean(&points_tensor(&pts), &group, m)?);
    let features = match pc.intensity() {
        Some(int) => {
            let vals = Tensor::new(vec![kept.len(), 1], kept.iter().map(|&i| int[i]).collect())?;
            scatter_mean(&vals, &group, m)?
        }
        None => Tensor::zeros(&[m, 1]),
    };
    let mut counts = vec![0u64; m];
    for &g in &group {
        counts[g] += 1;
    }
    let mut assignment = vec![None; pc.len()];
    for (k, &i) in kept.iter().enumerate() {
        assignment[i] = Some(group[k]);
    }
    Ok(SparseVoxelSet { stage: 0, grid: *grid, scale: [1, 1, 1], discrete_coords: cells, centroids, features, assignment, counts })
}

pub fn downsample_voxels(vs: &SparseVoxelSet, factor: [u64; 3], mode: CentroidMode) -> Result<SparseVoxelSet> {
    downsample_voxels_with(vs, factor, mode, MergeWeighting::Count)
}

/// Merges voxels by integer division of their cells by `factor`.
pub fn downsample_voxels_with(
    vs: &SparseVoxelSet,
    factor: [u64; 3],
    mode: CentroidMode,
    weighting: MergeWeighting,
) -> Result<SparseVoxelSet> {
    if factor.contains(&0) {
        return Err(Error::invalid(format!("downsampling factor {factor:?} has a zero component")));
    }
    if vs.is_empty() {
        return Err(Error::Empty("cannot downsample an empty voxel set".into()));
    }
    let keys: Vec<[i64; 3]> = vs.discrete_coords.iter().map(|c| std::array::from_fn(|a| c[a].div_euclid(factor[a] as i64))).collect();
    let (cells, group) = group_cells(&keys);
    let m = cells.len();
    let weights: Vec<f64> = match weighting {
        MergeWeighting::Count => vs.counts.iter().map(|&n| n as f64).collect(),
        MergeWeighting::Uniform => vec![1.0; vs.len()],
    };
    let features = weighted_scatter_mean(&vs.features, &group, m, Some(&weights))?;
    let mut counts = vec![0u64; m];
    for (i, &g) in group.iter().enumerate() {
        counts[g] += vs.counts[i];
    }
    let mut out = SparseVoxelSet {
        stage: vs.stage + 1,
        grid: vs.grid,
        scale: std::array::from_fn(|a| vs.scale[a] * factor[a]),
        discrete_coords: cells,
        centroids: Vec::new(),
        features,
        assignment: group.iter().map(|&g| Some(g)).collect(),
        counts,
    };
    out.centroids = match mode {
        CentroidMode::Continuous => tensor_points(&weighted_scatter_mean(&points_tensor(&vs.centroids), &group, m, Some(&weights))?),
        CentroidMode::Discrete => (0..m).map(|j| out.cell_center(j)).collect(),
    };
    Ok(out)
}

/// L2 norm of every voxel feature: the default saliency score.
pub fn feature_saliency(vs: &SparseVoxelSet) -> Tensor {
    let c = vs.features.cols();
    let norms = vs.features.data().chunks(c.max(1)).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt());
    Tensor::from_parts(vec![vs.len()], norms.collect())
}

/// Diagonal neighbour offsets proposed around a salient voxel, in proposal order.
pub const CANDIDATE_OFFSETS: [(i64, i64); 4] = [(-1, -1), (-1, 1), (1, -1), (1, 1)];

fn projected(c: [i64; 3], m: i64) -> [i64; 3] {
    [c[0], c[1], c[2].div_euclid(m)]
}

/// Voxel generation with the conflict test.
///
/// The `k` most salient voxels (ties to the lower storage index) each propose
/// their four diagonal x-y neighbours at the same z. A candidate survives only
/// if its `(x, y, floor(z/m))` projection hits no existing voxel's projection
/// and no earlier kept candidate's projection, and it lies inside the grid at
/// this stage. Survivors copy the proposer's feature; their centroid is the
/// proposer's shifted by one cell in x and y. Generated voxels carry no points.
pub fn generate_salient_voxels(vs: &SparseVoxelSet, k: usize, m: u64, saliency: &Tensor) -> Result<SparseVoxelSet> {
    if k > vs.len() {
        return Err(Error::invalid(format!("k = {k} exceeds {} voxels", vs.len())));
    }
    if m == 0 {
        return Err(Error::invalid("downsampling scale m must be at least 1"));
    }
    if saliency.len() != vs.len() {
        return Err(Error::shape(format!("{} saliency scores for {} voxels", saliency.len(), vs.len())));
    }
    let m = m as i64;
    let s = saliency.data();
    let mut ranked: Vec<usize> = (0..vs.len()).collect();
    ranked.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let mut proposers = ranked[..k].to_vec();
    proposers.sort_unstable();

    let dims = vs.grid.dims();
    let stage_dims: [i64; 3] = std::array::from_fn(|a| dims[a].div_ceil(vs.scale[a]) as i64);
    let mut occupied: HashSet<[i64; 3]> = vs.discrete_coords.iter().map(|&c| projected(c, m)).collect();
    let size = vs.cell_size();
    let mut coords = Vec::new();
    let mut centroids = Vec::new();
    let mut rows = Vec::new();
    for &p in &proposers {
        let base = vs.discrete_coords[p];
        for (dx, dy) in CANDIDATE_OFFSETS {
            let cand = [base[0] + dx, base[1] + dy, base[2]];
            if (0..3).any(|a| cand[a] < 0 || cand[a] >= stage_dims[a]) {
                continue;
            }
            if !occupied.insert(projected(cand, m)) {
                continue;
            }
            let c = vs.centroids[p];
            coords.push(cand);
            centroids.push([c[0] + dx as f64 * size[0], c[1] + dy as f64 * size[1], c[2]]);
            rows.push(p);
        }
    }
    let n = coords.len();
    Ok(SparseVoxelSet {
        stage: vs.stage,
        grid: vs.grid,
        scale: vs.scale,
        discrete_coords: coords,
        centroids,
        features: vs.features.gather_rows(&rows),
        assignment: Vec::new(),
        counts: vec![0; n],
    })
}

/// Union of a voxel set and voxels generated from it (generated appended).
pub fn append_generated(vs: &SparseVoxelSet, generated: &SparseVoxelSet) -> Result<SparseVoxelSet> {
    if vs.stage != generated.stage || vs.scale != generated.scale || vs.grid != generated.grid {
        return Err(Error::invalid("generated voxels belong to a different stage or grid"));
    }
    let c = vs.features.cols();
    if generated.features.cols() != c {
        return Err(Error::shape("feature width differs"));
    }
    let mut out = vs.clone();
    out.discrete_coords.extend_from_slice(&generated.discrete_coords);
    out.centroids.extend_from_slice(&generated.centroids);
    out.counts.extend_from_slice(&generated.counts);
    let mut data = vs.features.data().to_vec();
    data.extend_from_slice(generated.features.data());
    out.features = Tensor::new(vec![out.discrete_coords.len(), c], data)?;
    out.check_invariants()?;
    Ok(out)
}
