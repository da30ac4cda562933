use crate::error::{Error, Result};
use crate::kv::KvFile;

/// Pinhole camera with a rigid world-to-camera transform.
///
/// Camera frame: x right, y down, z along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major rotation, world to camera.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

/// One projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub index: usize,
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl CameraModel {
    pub fn new(intrinsics: [f64; 4], size: (u32, u32), rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let [fx, fy, cx, cy] = intrinsics;
        let cam = CameraModel { fx, fy, cx, cy, width: size.0, height: size.1, rotation, translation };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `position` (world) looking along world +x, with world z up.
    pub fn forward_facing(intrinsics: [f64; 4], size: (u32, u32), position: [f64; 3]) -> Result<Self> {
        // camera x = -world y, camera y = -world z, camera z = world x
        let r = [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]];
        let t = std::array::from_fn(|i| -(0..3).map(|j| r[i][j] * position[j]).sum::<f64>());
        CameraModel::new(intrinsics, size, r, t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image extent must be non-zero"));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                if (dot - target).abs() > 1e-9 {
                    return Err(Error::invalid("rotation is not orthonormal"));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("rotation determinant {det} is not +1")));
        }
        if self.translation.iter().chain(&[self.fx, self.fy, self.cx, self.cy]).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("camera parameter".into()));
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| (0..3).map(|j| self.rotation[i][j] * p[j]).sum::<f64>() + self.translation[i])
    }

    pub fn camera_to_world(&self, q: [f64; 3]) -> [f64; 3] {
        let d: [f64; 3] = std::array::from_fn(|i| q[i] - self.translation[i]);
        std::array::from_fn(|j| (0..3).map(|i| self.rotation[i][j] * d[i]).sum())
    }

    /// Pixel coordinates and depth of a world point, without image-bounds filtering.
    pub fn project_point(&self, p: [f64; 3]) -> Option<(f64, f64, f64)> {
        let q = self.world_to_camera(p);
        (q[2] > 0.0).then(|| (self.fx * q[0] / q[2] + self.cx, self.fy * q[1] / q[2] + self.cy, q[2]))
    }

    pub fn in_image(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// World point on the ray through pixel `(u, v)` at camera depth `depth`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        let q = [(u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth];
        self.camera_to_world(q)
    }

    /// Camera file: `fx fy cx cy W H` keys plus `extrinsic` with 12 row-major `[R | t]` entries.
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let e: Vec<f64> = kv.get_list("extrinsic")?;
        if e.len() != 12 {
            return Err(Error::format(format!("extrinsic needs 12 entries, found {}", e.len())));
        }
        let rotation = [[e[0], e[1], e[2]], [e[4], e[5], e[6]], [e[8], e[9], e[10]]];
        CameraModel::new(
            [kv.get("fx")?, kv.get("fy")?, kv.get("cx")?, kv.get("cy")?],
            (kv.get("W")?, kv.get("H")?),
            rotation,
            [e[3], e[7], e[11]],
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        CameraModel::from_kv(&KvFile::parse(text)?)
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        kv.insert("fx", self.fx);
        kv.insert("fy", self.fy);
        kv.insert("cx", self.cx);
        kv.insert("cy", self.cy);
        kv.insert("W", self.width);
        kv.insert("H", self.height);
        let r = &self.rotation;
        let t = &self.translation;
        let e = [r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2]];
        kv.insert("extrinsic", e.iter().map(f64::to_string).collect::<Vec<_>>().join(" "));
        kv
    }
}

/// Projects points into the image, omitting those behind the camera or outside `[0,W) x [0,H)`.
pub fn project_to_image(points: &[[f64; 3]], cam: &CameraModel) -> Vec<Projection> {
    points
        .iter()
        .enumerate()
        .filter_map(|(index, &p)| {
            let (u, v, depth) = cam.project_point(p)?;
            cam.in_image(u, v).then_some(Projection { index, u, v, depth })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    const EYE: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    fn cam() -> CameraModel {
        CameraModel::new([100.0, 100.0, 50.0, 50.0], (100, 100), EYE, [0.0; 3]).unwrap()
    }

    #[test]
    fn projection_examples() {
        let p = project_to_image(&[[0.0, 0.0, 10.0], [1.0, 0.0, 10.0], [0.0, 0.0, -1.0]], &cam());
        assert_eq!(p.len(), 2);
        assert_eq!((p[0].index, p[0].u, p[0].v, p[0].depth), (0, 50.0, 50.0, 10.0));
        assert_eq!((p[1].index, p[1].u, p[1].v), (1, 60.0, 50.0));
        // outside the image
        assert!(project_to_image(&[[6.0, 0.0, 10.0]], &cam()).is_empty());
    }

    #[test]
    fn rejects_invalid_cameras() {
        assert!(CameraModel::new([0.0, 1.0, 0.0, 0.0], (10, 10), EYE, [0.0; 3]).is_err());
        let reflect = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraModel::new([1.0, 1.0, 0.0, 0.0], (10, 10), reflect, [0.0; 3]).is_err());
        let skew = [[1.0, 1e-6, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraModel::new([1.0, 1.0, 0.0, 0.0], (10, 10), skew, [0.0; 3]).is_err());
    }

    #[test]
    fn round_trip_through_inverse_model() {
        let mut rng = SeededRng::new(9);
        let cam = CameraModel::forward_facing([120.0, 110.0, 80.0, 60.0], (160, 120), [0.5, -0.2, 1.7]).unwrap();
        for _ in 0..1000 {
            let p = [rng.uniform(1.0, 40.0), rng.uniform(-20.0, 20.0), rng.uniform(-2.0, 5.0)];
            let (u, v, d) = cam.project_point(p).unwrap();
            let back = cam.unproject(u, v, d);
            for a in 0..3 {
                assert!((back[a] - p[a]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn camera_file_round_trip() {
        let cam = CameraModel::forward_facing([120.0, 110.0, 80.0, 60.0], (160, 120), [0.0, 0.0, 1.6]).unwrap();
        let text = cam.to_kv().to_string();
        assert_eq!(CameraModel::parse(&text).unwrap(), cam);
        assert!(CameraModel::parse("fx = 1\nfy = 1\ncx = 0\ncy = 0\nW = 2\nH = 2\nextrinsic = 1 0 0").is_err());
    }
}
