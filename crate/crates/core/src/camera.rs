//! Pinhole camera model shared by rendering, rectification and
//! back-projection. The camera looks along its +z axis; image `y` points
//! down.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    k: Matrix3<f64>,
    r: Matrix3<f64>,
    t: Vector3<f64>,
    width: u32,
    height: u32,
}

impl CameraModel {
    pub fn new(
        k: Matrix3<f64>,
        r: Matrix3<f64>,
        t: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("camera image size must be positive"));
        }
        let upper = k[(1, 0)] == 0.0 && k[(2, 0)] == 0.0 && k[(2, 1)] == 0.0;
        if !upper || k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 || k[(2, 2)] <= 0.0 {
            return Err(Error::invalid(
                "intrinsics must be upper-triangular with positive diagonal",
            ));
        }
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("rotation must be orthonormal with det +1"));
        }
        Ok(Self {
            k,
            r,
            t,
            width,
            height,
        })
    }

    /// Camera at `center` looking at `target`. `up` is a world direction that
    /// maps to image-up (negative image y).
    pub fn look_at(
        k: Matrix3<f64>,
        center: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let z = (target - center).normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(Error::invalid("up vector parallel to viewing direction"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let t = -(r * center.coords);
        Self::new(k, r, t, width, height)
    }

    pub fn intrinsics(fx: f64, fy: f64, cx: f64, cy: f64) -> Matrix3<f64> {
        Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0)
    }

    pub fn k(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn r(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn t(&self) -> &Vector3<f64> {
        &self.t
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn to_camera(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.r * p.coords + self.t
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.r.transpose() * self.t))
    }

    /// Continuous pixel coordinates and depth, or `None` behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64, f64)> {
        let pc = self.to_camera(p);
        if pc.z <= 0.0 {
            return None;
        }
        let h = self.k * pc;
        Some((h.x / h.z, h.y / h.z, pc.z))
    }

    /// Unit ray direction in the camera frame through pixel `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let kinv = self.k.try_inverse().expect("intrinsics are invertible");
        (kinv * Vector3::new(u, v, 1.0)).normalize()
    }

    /// World point at camera depth `depth` along pixel `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Point3<f64> {
        let kinv = self.k.try_inverse().expect("intrinsics are invertible");
        let dir = kinv * Vector3::new(u, v, 1.0);
        let pc = dir * (depth / dir.z);
        Point3::from(self.r.transpose() * (pc - self.t))
    }

    /// Camera of a sub-image: patch pixel `x` samples source pixel
    /// `scale * x + offset` (per axis), with the patch `size` pixels wide.
    pub fn resampled(&self, scale: f64, offset: (f64, f64), size: (u32, u32)) -> Result<Self> {
        self.resampled_xy((scale, scale), offset, size)
    }

    /// Camera for a resampled image whose pixel `(x, y)` sits at source pixel
    /// `(sx x + ox, sy y + oy)`.
    pub fn resampled_xy(&self, scale: (f64, f64), offset: (f64, f64), size: (u32, u32)) -> Result<Self> {
        if !(scale.0 > 0.0 && scale.1 > 0.0) {
            return Err(Error::invalid("resampling scale must be positive"));
        }
        let a_inv = Matrix3::new(
            1.0 / scale.0,
            0.0,
            -offset.0 / scale.0,
            0.0,
            1.0 / scale.1,
            -offset.1 / scale.1,
            0.0,
            0.0,
            1.0,
        );
        let mut k = a_inv * self.k;
        k /= k[(2, 2)];
        Self::new(k, self.r, self.t, size.0, size.1)
    }

    /// Text form: K row-major, R row-major, t, then width and height, one
    /// group per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let row = |m: &Matrix3<f64>| {
            (0..3)
                .flat_map(|i| (0..3).map(move |j| (i, j)))
                .map(|(i, j)| m[(i, j)].to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(s, "{}", row(&self.k)).unwrap();
        writeln!(s, "{}", row(&self.r)).unwrap();
        writeln!(s, "{} {} {}", self.t.x, self.t.y, self.t.z).unwrap();
        writeln!(s, "{} {}", self.width, self.height).unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let nums: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format("camera file", e.to_string()))?;
        if nums.len() != 23 {
            return Err(Error::format(
                "camera file",
                format!("expected 23 numbers, found {}", nums.len()),
            ));
        }
        let k = Matrix3::from_row_slice(&nums[0..9]);
        let r = Matrix3::from_row_slice(&nums[9..18]);
        let t = Vector3::new(nums[18], nums[19], nums[20]);
        Self::new(k, r, t, nums[21] as u32, nums[22] as u32)
            .map_err(|e| Error::format("camera file", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraModel {
        CameraModel::look_at(
            CameraModel::intrinsics(500.0, 500.0, 256.0, 200.0),
            Point3::new(1.0, -2.0, 30.0),
            Point3::new(0.5, 0.3, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            512,
            400,
        )
        .unwrap()
    }

    #[test]
    fn look_at_is_a_rotation_and_sees_target() {
        let c = cam();
        let (u, v, d) = c.project(&Point3::new(0.5, 0.3, 0.0)).unwrap();
        assert!((u - 256.0).abs() < 1e-9 && (v - 200.0).abs() < 1e-9);
        assert!(d > 0.0);
        assert!((c.center() - Point3::new(1.0, -2.0, 30.0)).norm() < 1e-9);
    }

    #[test]
    fn unproject_inverts_project() {
        let c = cam();
        let p = Point3::new(3.0, -1.5, 0.7);
        let (u, v, d) = c.project(&p).unwrap();
        assert!((c.unproject(u, v, d) - p).norm() < 1e-9);
    }

    #[test]
    fn rejects_bad_rotation_and_intrinsics() {
        let k = CameraModel::intrinsics(1.0, 1.0, 0.0, 0.0);
        let bad_r = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(CameraModel::new(k, bad_r, Vector3::zeros(), 10, 10).is_err());
        let bad_k = Matrix3::new(1.0, 0.0, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CameraModel::new(bad_k, Matrix3::identity(), Vector3::zeros(), 10, 10).is_err());
    }

    #[test]
    fn text_roundtrip() {
        let c = cam();
        let back = CameraModel::from_text(&c.to_text()).unwrap();
        assert_eq!(c, back);
        assert!(CameraModel::from_text("1 2 3").is_err());
    }

    #[test]
    fn resampled_camera_matches_pixel_mapping() {
        let c = cam();
        let scale = 4.0;
        let origin = (40.0, 60.0);
        let offset = (origin.0 + 0.5 * scale - 0.5, origin.1 + 0.5 * scale - 0.5);
        let pc = c.resampled(scale, offset, (100, 100)).unwrap();
        let p = Point3::new(0.2, 0.1, 0.0);
        let (u, v, _) = c.project(&p).unwrap();
        let (x, y, _) = pc.project(&p).unwrap();
        assert!((scale * x + offset.0 - u).abs() < 1e-9);
        assert!((scale * y + offset.1 - v).abs() < 1e-9);
    }
}
