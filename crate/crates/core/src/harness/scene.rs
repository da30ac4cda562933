use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, GridSpec, PointCloud};
use crate::numerics::SeededRng;

/// Axis-aligned box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|a| 0.5 * (self.min[a] + self.max[a]))
    }

    pub fn contains(&self, p: [f64; 3], margin: f64) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] - margin && p[a] <= self.max[a] + margin)
    }

    /// Entry distance of the ray `o + t d` (`t >= 0`), if it hits.
    pub fn ray_hit(&self, o: [f64; 3], d: [f64; 3]) -> Option<f64> {
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let (ta, tb) = ((self.min[a] - o[a]) / d[a], (self.max[a] - o[a]) / d[a]);
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
        (t0 <= t1).then_some(t0)
    }

    fn faces(&self) -> [([f64; 3], [f64; 3], [f64; 3]); 5] {
        let (l, h) = (self.min, self.max);
        let e = [h[0] - l[0], h[1] - l[1], h[2] - l[2]];
        // (origin, edge u, edge v): top and the four sides
        [
            ([l[0], l[1], h[2]], [e[0], 0.0, 0.0], [0.0, e[1], 0.0]),
            ([l[0], l[1], l[2]], [e[0], 0.0, 0.0], [0.0, 0.0, e[2]]),
            ([l[0], h[1], l[2]], [e[0], 0.0, 0.0], [0.0, 0.0, e[2]]),
            ([l[0], l[1], l[2]], [0.0, e[1], 0.0], [0.0, 0.0, e[2]]),
            ([h[0], l[1], l[2]], [0.0, e[1], 0.0], [0.0, 0.0, e[2]]),
        ]
    }
}

/// Parameters of a synthetic driving scene: boxes standing on a ground plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub objects: usize,
    /// Smallest and largest box extents (metres) along x, y, z.
    pub extent_min: [f64; 3],
    pub extent_max: [f64; 3],
    /// Surface points per square metre on objects.
    pub density: f64,
    /// Points per square metre on the ground plane `z = 0`.
    pub ground_density: f64,
    pub cameras: Vec<CameraModel>,
    pub grid: GridSpec,
    /// Standard deviation of the isotropic point noise (metres).
    pub noise: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            objects: 6,
            extent_min: [1.5, 1.5, 1.2],
            extent_max: [4.5, 2.5, 2.0],
            density: 40.0,
            ground_density: 1.0,
            cameras: vec![default_camera()],
            grid: GridSpec { range_min: [0.0, -25.6, -1.0], range_max: [51.2, 25.6, 5.4], voxel_size: [0.2, 0.2, 0.2] },
            noise: 0.02,
        }
    }
}

/// Forward-looking 160 x 120 camera 1.6 m above the ground at the origin.
pub fn default_camera() -> CameraModel {
    CameraModel::forward_facing([100.0, 100.0, 80.0, 60.0], (160, 120), [0.0, 0.0, 1.6]).expect("valid camera")
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.density > 0.0) || self.ground_density < 0.0 {
            return Err(Error::invalid("point densities must be positive"));
        }
        if self.cameras.is_empty() {
            return Err(Error::invalid("a scene needs at least one camera"));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::invalid("noise must be non-negative"));
        }
        for a in 0..3 {
            if !(self.extent_min[a] > 0.0 && self.extent_min[a] <= self.extent_max[a]) {
                return Err(Error::invalid("object extents must satisfy 0 < min <= max"));
            }
        }
        let g = &self.grid;
        if self.objects > 0 && (self.extent_max[0] + 8.0 > g.range_max[0] || self.extent_max[2] > g.range_max[2] || g.range_min[2] > 0.0) {
            return Err(Error::invalid("objects do not fit inside the grid range"));
        }
        for cam in &self.cameras {
            cam.validate()?;
        }
        Ok(())
    }

    /// Same scene parameters under the `i`-th seed derived from this one.
    pub fn nth(&self, i: u64) -> SceneSpec {
        SceneSpec { seed: self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i), ..self.clone() }
    }
}

/// Per-pixel visible object id of one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMask {
    pub width: u32,
    pub height: u32,
    pub object: Vec<Option<u32>>,
}

impl PixelMask {
    pub fn at(&self, col: u32, row: u32) -> Option<u32> {
        self.object[(row * self.width + col) as usize]
    }

    pub fn count(&self, id: Option<u32>) -> usize {
        self.object
            .iter()
            .filter(|&&o| match id {
                Some(_) => o == id,
                None => o.is_some(),
            })
            .count()
    }

    /// Mean pixel-centre position of the pixels showing `id`, or any object when `None`.
    pub fn centroid(&self, id: Option<u32>) -> Option<(f64, f64)> {
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
        for row in 0..self.height {
            for col in 0..self.width {
                let o = self.at(col, row);
                if o.is_some() && (id.is_none() || o == id) {
                    su += col as f64 + 0.5;
                    sv += row as f64 + 0.5;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (su / n as f64, sv / n as f64))
    }

    /// Euclidean distance from `(u, v)` to the nearest pixel square showing
    /// object `id` (zero inside one), by expanding square rings.
    pub fn distance_to(&self, u: f64, v: f64, id: u32) -> Option<f64> {
        let (w, h) = (self.width as i64, self.height as i64);
        let (pc, pr) = ((u.floor() as i64).clamp(0, w - 1), (v.floor() as i64).clamp(0, h - 1));
        let mut best = f64::INFINITY;
        let reach = w.max(h);
        for r in 0..=reach {
            // every pixel on ring r is at least r - 1 pixels away
            if (r - 1) as f64 > best {
                break;
            }
            for row in pr - r..=pr + r {
                if row < 0 || row >= h {
                    continue;
                }
                let step = if row == pr - r || row == pr + r { 1 } else { 2 * r.max(1) };
                let mut col = pc - r;
                while col <= pc + r {
                    if col >= 0 && col < w && self.object[(row * w + col) as usize] == Some(id) {
                        let dx = (col as f64 - u).max(0.0).max(u - (col + 1) as f64);
                        let dy = (row as f64 - v).max(0.0).max(v - (row + 1) as f64);
                        best = best.min(dx.hypot(dy));
                    }
                    col += step;
                }
            }
        }
        best.is_finite().then_some(best)
    }
}

/// A generated scene with its geometric ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cloud: PointCloud,
    /// Object id of every point, `None` for ground points.
    pub labels: Vec<Option<u32>>,
    pub boxes: Vec<Aabb>,
    /// One mask per camera of the spec.
    pub masks: Vec<PixelMask>,
}

fn place_boxes(spec: &SceneSpec, rng: &mut SeededRng) -> Result<Vec<Aabb>> {
    let g = &spec.grid;
    let mut boxes: Vec<Aabb> = Vec::with_capacity(spec.objects);
    let mut tries = 0;
    while boxes.len() < spec.objects {
        tries += 1;
        if tries > 10_000 {
            return Err(Error::invalid("could not place non-overlapping objects in the grid"));
        }
        let e: [f64; 3] = std::array::from_fn(|a| rng.uniform(spec.extent_min[a], spec.extent_max[a]));
        let x = rng.uniform(6.0 + 0.5 * e[0], (g.range_max[0] - 1.0 - 0.5 * e[0]).min(45.0));
        // inside the forward cameras' horizontal field of view at that range
        let half = (0.55 * x).min(0.5 * (g.range_max[1] - g.range_min[1]) - 0.5 * e[1] - 1.0);
        let y = rng.uniform(-half, half).clamp(g.range_min[1] + 0.5 * e[1], g.range_max[1] - 0.5 * e[1]);
        let b = Aabb { min: [x - 0.5 * e[0], y - 0.5 * e[1], 0.0], max: [x + 0.5 * e[0], y + 0.5 * e[1], e[2]] };
        let clear = boxes.iter().all(|o| (0..2).any(|a| b.min[a] > o.max[a] + 0.5 || b.max[a] < o.min[a] - 0.5));
        if clear {
            boxes.push(b);
        }
    }
    Ok(boxes)
}

fn render_mask(cam: &CameraModel, boxes: &[Aabb]) -> PixelMask {
    let o = cam.camera_to_world([0.0; 3]);
    let mut object = Vec::with_capacity((cam.width * cam.height) as usize);
    for row in 0..cam.height {
        for col in 0..cam.width {
            let p = cam.unproject(col as f64 + 0.5, row as f64 + 0.5, 1.0);
            let d = [p[0] - o[0], p[1] - o[1], p[2] - o[2]];
            let ground = if d[2] < 0.0 { -o[2] / d[2] } else { f64::INFINITY };
            let hit = boxes
                .iter()
                .enumerate()
                .filter_map(|(i, b)| b.ray_hit(o, d).map(|t| (t, i)))
                .filter(|&(t, _)| t <= ground)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            object.push(hit.map(|(_, i)| i as u32));
        }
    }
    PixelMask { width: cam.width, height: cam.height, object }
}

/// Deterministic scene: boxes on the ground inside the cameras' view, points
/// sampled uniformly on their top and side faces and on the ground plane,
/// isotropic Gaussian noise, and per-camera ray-cast object masks.
pub fn synth_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let base = SeededRng::new(spec.seed);
    let boxes = place_boxes(spec, &mut base.fork(1))?;
    let mut rng = base.fork(2);
    let mut points = Vec::new();
    let mut intensity = Vec::new();
    let mut labels = Vec::new();
    for (id, b) in boxes.iter().enumerate() {
        for (origin, eu, ev) in b.faces() {
            let area = (eu.iter().map(|v| v * v).sum::<f64>() * ev.iter().map(|v| v * v).sum::<f64>()).sqrt();
            let n = ((spec.density * area).round() as usize).max(1);
            for _ in 0..n {
                let (s, t) = (rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0));
                points.push(std::array::from_fn(|a| origin[a] + s * eu[a] + t * ev[a]));
                intensity.push(rng.uniform(0.6, 1.0));
                labels.push(Some(id as u32));
            }
        }
    }
    let g = &spec.grid;
    let area = (g.range_max[0] - g.range_min[0]) * (g.range_max[1] - g.range_min[1]);
    let n_ground = (spec.ground_density * area).round() as usize;
    for _ in 0..n_ground {
        let p = [rng.uniform(g.range_min[0], g.range_max[0]), rng.uniform(g.range_min[1], g.range_max[1]), 0.0];
        if boxes.iter().any(|b| b.contains(p, 0.0)) {
            continue;
        }
        points.push(p);
        intensity.push(rng.uniform(0.0, 0.2));
        labels.push(None);
    }
    if spec.noise > 0.0 {
        let mut noise = base.fork(3);
        for p in &mut points {
            for v in p.iter_mut() {
                *v += spec.noise * noise.normal();
            }
        }
    }
    let masks = spec.cameras.iter().map(|c| render_mask(c, &boxes)).collect();
    Ok(Scene { cloud: PointCloud::new(points, Some(intensity))?, labels, boxes, masks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scene_is_ground_only() {
        let spec = SceneSpec { objects: 0, ..SceneSpec::default() };
        let s = synth_scene(&spec).unwrap();
        assert!(s.labels.iter().all(|l| l.is_none()));
        assert!(!s.cloud.is_empty());
        assert_eq!(s.masks[0].count(None), 0);
    }

    #[test]
    fn same_seed_same_cloud() {
        let spec = SceneSpec { seed: 11, ..SceneSpec::default() };
        let (a, b) = (synth_scene(&spec).unwrap(), synth_scene(&spec).unwrap());
        assert_eq!(a.cloud.to_bytes(), b.cloud.to_bytes());
        assert_ne!(a.cloud.to_bytes(), synth_scene(&spec.nth(1)).unwrap().cloud.to_bytes());
    }

    #[test]
    fn cube_mask_centroid_matches_projection() {
        let cam = CameraModel::forward_facing([100.0, 100.0, 80.0, 60.0], (160, 120), [0.0, 0.0, 0.5]).unwrap();
        let cube = Aabb { min: [9.5, -0.5, 0.0], max: [10.5, 0.5, 1.0] };
        let mask = render_mask(&cam, &[cube]);
        let (u, v) = mask.centroid(Some(0)).unwrap();
        let (pu, pv, _) = cam.project_point(cube.center()).unwrap();
        assert!((u - pu).hypot(v - pv) <= 1.0, "{u} {v} vs {pu} {pv}");
        assert!(mask.count(Some(0)) > 50);
    }

    #[test]
    fn objects_are_visible_and_disjoint() {
        let s = synth_scene(&SceneSpec { seed: 3, ..SceneSpec::default() }).unwrap();
        assert_eq!(s.boxes.len(), 6);
        assert!(s.masks[0].count(None) > 0);
        for (i, a) in s.boxes.iter().enumerate() {
            for b in &s.boxes[i + 1..] {
                assert!((0..2).any(|k| a.min[k] > b.max[k] || a.max[k] < b.min[k]));
            }
        }
    }

    #[test]
    fn ring_distance() {
        let mut object = vec![None; 100];
        object[5 * 10 + 7] = Some(2);
        let m = PixelMask { width: 10, height: 10, object };
        assert_eq!(m.distance_to(7.5, 5.5, 2), Some(0.0));
        assert!((m.distance_to(2.5, 5.5, 2).unwrap() - 4.5).abs() < 1e-12);
        assert!((m.distance_to(9.0, 8.0, 2).unwrap() - 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(m.distance_to(1.0, 1.0, 3), None);
        // brute force agreement
        for (u, v) in [(0.1, 0.2), (9.9, 0.3), (4.4, 9.7), (8.0, 5.0)] {
            let brute = (0..100)
                .filter(|&i| m.object[i] == Some(2))
                .map(|i| {
                    let (c, r) = ((i % 10) as f64, (i / 10) as f64);
                    let dx = (c - u).max(0.0).max(u - c - 1.0);
                    let dy = (r - v).max(0.0).max(v - r - 1.0);
                    dx.hypot(dy)
                })
                .fold(f64::INFINITY, f64::min);
            assert!((m.distance_to(u, v, 2).unwrap() - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(synth_scene(&SceneSpec { density: 0.0, ..SceneSpec::default() }).is_err());
        assert!(synth_scene(&SceneSpec { cameras: vec![], ..SceneSpec::default() }).is_err());
        assert!(synth_scene(&SceneSpec { objects: 500, ..SceneSpec::default() }).is_err());
    }
}
