//! Surface-normal maps, incidence angles and frontal rectification.
//!
//! Camera-frame normals follow the facing-camera convention: the camera looks
//! along +z, so every visible normal has a non-positive z component.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::raster::{resample_bilinear, Plane};

pub const PATCH_SIZE: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalSample {
    pub u: f64,
    pub v: f64,
    pub n: Vector3<f64>,
}

/// Sparse normals in the world frame, positioned in image coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseNormalMap {
    samples: Vec<NormalSample>,
}

impl SparseNormalMap {
    pub fn new(samples: Vec<NormalSample>) -> Result<Self> {
        for s in &samples {
            if ((s.n.norm() - 1.0).abs()) > 1e-6 || !s.u.is_finite() || !s.v.is_finite() {
                return Err(Error::invalid(format!(
                    "sparse normal at ({}, {}) is not a finite unit vector",
                    s.u, s.v
                )));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[NormalSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// One `u v nx ny nz` line per sample.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.samples.len() * 48);
        for p in &self.samples {
            s.push_str(&format!("{} {} {} {} {}\n", p.u, p.v, p.n.x, p.n.y, p.n.z));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format("normal map", format!("line {}: {e}", lineno + 1)))?;
            if vals.len() != 5 {
                return Err(Error::format(
                    "normal map",
                    format!("line {}: expected 5 fields", lineno + 1),
                ));
            }
            let n = Vector3::new(vals[2], vals[3], vals[4]);
            let norm = n.norm();
            if norm == 0.0 {
                return Err(Error::format("normal map", format!("line {}: zero normal", lineno + 1)));
            }
            samples.push(NormalSample {
                u: vals[0],
                v: vals[1],
                n: n / norm,
            });
        }
        Self::new(samples)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormalFrame {
    World,
    Camera,
}

/// Per-pixel unit normals.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNormalMap {
    width: usize,
    height: usize,
    frame: NormalFrame,
    normals: Vec<Vector3<f64>>,
}

impl DenseNormalMap {
    pub fn new(
        width: usize,
        height: usize,
        frame: NormalFrame,
        normals: Vec<Vector3<f64>>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || normals.len() != width * height {
            return Err(Error::invalid("dense normal map size mismatch"));
        }
        for n in &normals {
            if (n.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::invalid("dense normal is not unit length"));
            }
            if frame == NormalFrame::Camera && n.z > 1e-12 {
                return Err(Error::invalid("camera-frame normal faces away from the camera"));
            }
        }
        Ok(Self {
            width,
            height,
            frame,
            normals,
        })
    }

    pub fn constant(width: usize, height: usize, frame: NormalFrame, n: Vector3<f64>) -> Result<Self> {
        Self::new(width, height, frame, vec![n; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame(&self) -> NormalFrame {
        self.frame
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Vector3<f64> {
        self.normals[y * self.width + x]
    }

    /// Float32 binary form: magic, width, height, frame tag, then xyz per
    /// pixel.
    pub fn write<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        use crate::binio::*;
        out.write_all(DENSE_MAGIC)?;
        write_u32(out, self.width as u32)?;
        write_u32(out, self.height as u32)?;
        write_u32(out, (self.frame == NormalFrame::Camera) as u32)?;
        for n in &self.normals {
            write_f32s(out, n.as_slice())?;
        }
        Ok(())
    }

    pub fn read<R: std::io::Read>(input: &mut R) -> Result<Self> {
        use crate::binio::*;
        let fmt = |e: std::io::Error| Error::format("dense normal map", e.to_string());
        expect_magic(input, DENSE_MAGIC).map_err(fmt)?;
        let w = read_u32(input).map_err(fmt)? as usize;
        let h = read_u32(input).map_err(fmt)? as usize;
        let frame = if read_u32(input).map_err(fmt)? == 1 {
            NormalFrame::Camera
        } else {
            NormalFrame::World
        };
        let raw = read_f32_vec(input, w * h * 3).map_err(fmt)?;
        let normals = raw
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]).normalize())
            .collect();
        Self::new(w, h, frame, normals)
    }
}

const DENSE_MAGIC: &[u8; 8] = b"GMNORM01";

const IDW_NEIGHBORS: usize = 8;

/// Uniform bucket grid for k-nearest-neighbor queries on sample positions.
struct SampleGrid<'a> {
    samples: &'a [NormalSample],
    cell: f64,
    min: (f64, f64),
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> SampleGrid<'a> {
    fn new(samples: &'a [NormalSample]) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for s in samples {
            x0 = x0.min(s.u);
            y0 = y0.min(s.v);
            x1 = x1.max(s.u);
            y1 = y1.max(s.v);
        }
        let area = ((x1 - x0).max(1.0)) * ((y1 - y0).max(1.0));
        let cell = (2.0 * (area * IDW_NEIGHBORS as f64 / samples.len() as f64).sqrt()).max(1.0);
        let cols = (((x1 - x0) / cell).floor() as usize + 1).min(4096);
        let rows = (((y1 - y0) / cell).floor() as usize + 1).min(4096);
        let cell = cell.max((x1 - x0) / cols as f64).max((y1 - y0) / rows as f64);
        let mut buckets = vec![Vec::new(); cols * rows];
        for (i, s) in samples.iter().enumerate() {
            let (cx, cy) = Self::cell_of(s.u, s.v, (x0, y0), cell, cols, rows);
            buckets[cy * cols + cx].push(i);
        }
        Self {
            samples,
            cell,
            min: (x0, y0),
            cols,
            rows,
            buckets,
        }
    }

    fn cell_of(u: f64, v: f64, min: (f64, f64), cell: f64, cols: usize, rows: usize) -> (usize, usize) {
        let cx = (((u - min.0) / cell).floor().max(0.0) as usize).min(cols - 1);
        let cy = (((v - min.1) / cell).floor().max(0.0) as usize).min(rows - 1);
        (cx, cy)
    }

    /// Indices and squared distances of the `k` nearest samples, ordered by
    /// distance then index.
    fn nearest(&self, u: f64, v: f64, k: usize, out: &mut Vec<(f64, usize)>) {
        out.clear();
        let k = k.min(self.samples.len());
        let (cx, cy) = Self::cell_of(u, v, self.min, self.cell, self.cols, self.rows);
        let max_ring = self.cols.max(self.rows);
        let mut ring = 0usize;
        loop {
            let (lo_x, hi_x) = (cx as isize - ring as isize, cx as isize + ring as isize);
            let (lo_y, hi_y) = (cy as isize - ring as isize, cy as isize + ring as isize);
            for gy in lo_y..=hi_y {
                for gx in lo_x..=hi_x {
                    let on_border = gy == lo_y || gy == hi_y || gx == lo_x || gx == hi_x;
                    if !on_border || gx < 0 || gy < 0 || gx >= self.cols as isize || gy >= self.rows as isize {
                        continue;
                    }
                    for &i in &self.buckets[gy as usize * self.cols + gx as usize] {
                        let s = &self.samples[i];
                        let d = (s.u - u).powi(2) + (s.v - v).powi(2);
                        out.push((d, i));
                    }
                }
            }
            if out.len() >= k {
                out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                // Everything outside the scanned rings is at least this far.
                let qx = u - self.min.0 - cx as f64 * self.cell;
                let qy = v - self.min.1 - cy as f64 * self.cell;
                let margin = [qx, self.cell - qx, qy, self.cell - qy]
                    .into_iter()
                    .fold(f64::MAX, f64::min)
                    .max(0.0);
                let safe = margin + ring as f64 * self.cell;
                if out[k - 1].0 <= safe * safe || ring > max_ring {
                    out.truncate(k);
                    return;
                }
            } else if ring > max_ring {
                out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                return;
            }
            ring += 1;
        }
    }
}

/// Inverse-distance-weighted (power 2) blend of the 8 nearest samples at
/// every pixel, renormalized to unit length. Result stays in the world frame.
pub fn interpolate_normals(
    sparse: &SparseNormalMap,
    width: usize,
    height: usize,
) -> Result<DenseNormalMap> {
    if sparse.is_empty() {
        return Err(Error::invalid("cannot interpolate an empty normal map"));
    }
    if width == 0 || height == 0 {
        return Err(Error::invalid("dense normal map size must be positive"));
    }
    let grid = SampleGrid::new(sparse.samples());
    let mut nn = Vec::new();
    let mut normals = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            grid.nearest(x as f64, y as f64, IDW_NEIGHBORS, &mut nn);
            let (d0, i0) = nn[0];
            let nearest = sparse.samples[i0].n;
            if d0 < 1e-24 {
                normals.push(nearest);
                continue;
            }
            let mut acc = Vector3::zeros();
            for &(d, i) in nn.iter() {
                acc += sparse.samples[i].n / d;
            }
            let norm = acc.norm();
            // weights are 1/d^2 with d the distance, i.e. 1/d_sq here
            if norm < 1e-9 * nn.iter().map(|(d, _)| 1.0 / d).sum::<f64>() {
                normals.push(nearest);
            } else {
                normals.push(acc / norm);
            }
        }
    }
    DenseNormalMap::new(width, height, NormalFrame::World, normals)
}

/// Rotate world-frame normals into the camera frame and flip each so that it
/// faces the camera.
pub fn to_camera_frame(dense: &DenseNormalMap, cam: &CameraModel) -> Result<DenseNormalMap> {
    let r = cam.r();
    let normals = dense
        .normals
        .iter()
        .map(|n| {
            let c = r * n;
            if c.z > 0.0 {
                -c
            } else {
                c
            }
        })
        .collect();
    DenseNormalMap::new(dense.width, dense.height, NormalFrame::Camera, normals)
}

pub fn mean_unit_normal(dense: &DenseNormalMap) -> Result<Vector3<f64>> {
    let sum: Vector3<f64> = dense.normals.iter().sum();
    let mean = sum / dense.normals.len() as f64;
    let norm = mean.norm();
    if norm < 1e-9 {
        return Err(Error::DegenerateGeometry("mean surface normal vanishes".into()));
    }
    Ok(mean / norm)
}

/// Angle in degrees between a surface normal and a viewing direction,
/// ignoring orientation sign.
pub fn incidence_angle(normal: &Vector3<f64>, view_dir: &Vector3<f64>) -> Result<f64> {
    if (normal.norm() - 1.0).abs() > 1e-6 || (view_dir.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid("incidence angle needs unit vectors"));
    }
    Ok(normal.dot(view_dir).abs().min(1.0).acos().to_degrees())
}

/// Planar projective transform mapping source pixels to destination pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn new(h: Matrix3<f64>) -> Result<Self> {
        if !(h.determinant().abs() > 1e-12) {
            return Err(Error::invalid("homography is singular"));
        }
        Ok(Self(h))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self(Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let p = self.0 * Vector3::new(x, y, 1.0);
        (p.x / p.z, p.y / p.z)
    }

    pub fn inverse(&self) -> Homography {
        Homography(self.0.try_inverse().expect("nonsingular by construction"))
    }

    pub fn compose(&self, then: &Homography) -> Homography {
        Homography(then.0 * self.0)
    }

    /// Frobenius distance to the identity after scaling `H[2][2]` to 1.
    pub fn distance_to_identity(&self) -> f64 {
        let m = self.0 / self.0[(2, 2)];
        (m - Matrix3::identity()).norm()
    }

    /// Nine values row-major.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }
}

/// The rotation taking the reversed mean normal onto the optical axis, or
/// `None` when the surface is already frontal.
pub fn frontal_rotation(mean_normal: &Vector3<f64>) -> Option<Rotation3<f64>> {
    let from = -mean_normal.normalize();
    let z = Vector3::z();
    let axis = from.cross(&z);
    if axis.norm() < 1e-6 {
        return None;
    }
    let angle = from.dot(&z).clamp(-1.0, 1.0).acos();
    Some(Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle))
}

/// Plane-induced rotation homography `K R K^-1` that makes the mean normal
/// face the camera, composed with a translation keeping `center` fixed.
pub fn rectification_homography(
    mean_normal: &Vector3<f64>,
    cam: &CameraModel,
    center: (f64, f64),
) -> Result<Homography> {
    if mean_normal.z >= 0.0 {
        return Err(Error::invalid("mean normal must face the camera"));
    }
    let Some(rot) = frontal_rotation(mean_normal) else {
        return Ok(Homography::identity());
    };
    let k = cam.k();
    let kinv = k.try_inverse().ok_or_else(|| Error::invalid("singular intrinsics"))?;
    let h0 = Homography::new(k * rot.matrix() * kinv)?;
    let (cx, cy) = h0.apply(center.0, center.1);
    let h = h0.compose(&Homography::translation(center.0 - cx, center.1 - cy));
    Ok(h)
}

/// Inverse-mapped bilinear warp. Source positions outside the input are
/// mirrored back inside; the result is resampled to 100x100.
pub fn warp_patch(patch: &Plane, h: &Homography) -> Result<Plane> {
    let hinv = Homography::new(*h.matrix())?.inverse();
    let warped = Plane::from_fn(patch.width(), patch.height(), |x, y| {
        let (sx, sy) = hinv.apply(x as f64, y as f64);
        patch.sample_reflect(sx, sy)
    })?;
    resample_bilinear(&warped, PATCH_SIZE, PATCH_SIZE)
}

/// Spatially warp a normal map with the same mapping as [`warp_patch`],
/// renormalizing each blended normal. Vectors are not rotated.
pub fn warp_normals(map: &DenseNormalMap, h: &Homography) -> Result<DenseNormalMap> {
    let comps: Vec<Plane> = (0..3)
        .map(|c| {
            Plane::new(
                map.width,
                map.height,
                map.normals.iter().map(|n| n[c]).collect(),
            )
        })
        .collect::<Result<_>>()?;
    let warped: Vec<Plane> = comps.iter().map(|p| warp_patch(p, h)).collect::<Result<_>>()?;
    let normals = (0..PATCH_SIZE * PATCH_SIZE)
        .map(|i| {
            let v = Vector3::new(warped[0].data()[i], warped[1].data()[i], warped[2].data()[i]);
            let n = v.norm();
            if n < 1e-12 {
                Vector3::new(0.0, 0.0, -1.0)
            } else {
                v / n
            }
        })
        .collect();
    DenseNormalMap::new(PATCH_SIZE, PATCH_SIZE, map.frame, normals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    fn sample(u: f64, v: f64, n: [f64; 3]) -> NormalSample {
        NormalSample {
            u,
            v,
            n: Vector3::from(n).normalize(),
        }
    }

    fn frontal_cam() -> CameraModel {
        CameraModel::new(
            CameraModel::intrinsics(120.0, 120.0, 50.0, 50.0),
            Matrix3::identity(),
            Vector3::zeros(),
            100,
            100,
        )
        .unwrap()
    }

    #[test]
    fn constant_and_single_sample_fields() {
        let n = [0.3, -0.2, 0.9];
        let many = SparseNormalMap::new(
            (0..20).map(|i| sample((i * 3 % 17) as f64, (i * 7 % 13) as f64, n)).collect(),
        )
        .unwrap();
        let d = interpolate_normals(&many, 20, 15).unwrap();
        let expect = Vector3::from(n).normalize();
        assert!(d.normals().iter().all(|m| (m - expect).norm() < 1e-12));
        let one = SparseNormalMap::new(vec![sample(3.3, 4.4, [1.0, 0.0, 0.0])]).unwrap();
        let d = interpolate_normals(&one, 8, 8).unwrap();
        assert!(d.normals().iter().all(|m| (m - Vector3::x()).norm() < 1e-15));
    }

    #[test]
    fn idw_midpoint_of_two_samples() {
        let s = SparseNormalMap::new(vec![
            sample(0.0, 0.0, [1.0, 0.0, 0.0]),
            sample(10.0, 0.0, [0.0, 1.0, 0.0]),
        ])
        .unwrap();
        let d = interpolate_normals(&s, 11, 1).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((d.get(5, 0) - Vector3::new(h, h, 0.0)).norm() < 1e-12);
        assert_eq!(d.get(0, 0), Vector3::x());
        assert_eq!(d.get(10, 0), Vector3::y());
    }

    #[test]
    fn degenerate_blend_falls_back_to_nearest() {
        let s = SparseNormalMap::new(vec![
            sample(0.0, 0.0, [1.0, 0.0, 0.0]),
            sample(2.0, 0.0, [-1.0, 0.0, 0.0]),
        ])
        .unwrap();
        let d = interpolate_normals(&s, 3, 1).unwrap();
        assert_eq!(d.get(1, 0), Vector3::x());
        assert!(interpolate_normals(&SparseNormalMap::default(), 3, 3).is_err());
    }

    #[test]
    fn grid_knn_matches_brute_force() {
        let samples: Vec<NormalSample> = (0..300)
            .map(|i| {
                let u = ((i * 37) % 101) as f64 * 0.97 + 0.13 * (i % 3) as f64;
                let v = ((i * 53) % 89) as f64 * 1.11;
                sample(u, v, [(i as f64).sin(), (i as f64).cos(), -1.5])
            })
            .collect();
        let grid = SampleGrid::new(&samples);
        let mut out = Vec::new();
        for &(qu, qv) in &[(0.0, 0.0), (50.5, 40.2), (99.0, 97.0), (-10.0, 120.0)] {
            grid.nearest(qu, qv, 8, &mut out);
            let mut brute: Vec<(f64, usize)> = samples
                .iter()
                .enumerate()
                .map(|(i, s)| ((s.u - qu).powi(2) + (s.v - qv).powi(2), i))
                .collect();
            brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            assert_eq!(out, brute[..8].to_vec());
        }
    }

    #[test]
    fn camera_frame_conversion() {
        let cam = frontal_cam();
        let w = |n: [f64; 3]| DenseNormalMap::constant(1, 1, NormalFrame::World, Vector3::from(n)).unwrap();
        let c = to_camera_frame(&w([0.0, 0.0, -1.0]), &cam).unwrap();
        assert_eq!(c.get(0, 0), Vector3::new(0.0, 0.0, -1.0));
        let c = to_camera_frame(&w([0.0, 0.0, 1.0]), &cam).unwrap();
        assert_eq!(c.get(0, 0), Vector3::new(0.0, 0.0, -1.0));
        let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::FRAC_PI_2);
        let cam90 = CameraModel::new(*cam.k(), *rx.matrix(), Vector3::zeros(), 100, 100).unwrap();
        let c = to_camera_frame(&w([0.0, 1.0, 0.0]), &cam90).unwrap();
        assert!((c.get(0, 0) - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn mean_normal_cases() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let map = DenseNormalMap::new(
            2,
            1,
            NormalFrame::Camera,
            vec![Vector3::new(h, 0.0, -h), Vector3::new(-h, 0.0, -h)],
        )
        .unwrap();
        assert!((mean_unit_normal(&map).unwrap() - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        let opposite = DenseNormalMap::new(
            2,
            1,
            NormalFrame::World,
            vec![Vector3::x(), -Vector3::x()],
        )
        .unwrap();
        assert!(matches!(mean_unit_normal(&opposite), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn incidence_angles() {
        let v = Vector3::z();
        assert!(incidence_angle(&-Vector3::z(), &v).unwrap().abs() < 1e-9);
        assert!((incidence_angle(&Vector3::x(), &v).unwrap() - 90.0).abs() < 1e-9);
        let n = Vector3::new(1.0, 0.0, 1.0).normalize();
        assert!((incidence_angle(&n, &v).unwrap() - 45.0).abs() < 1e-9);
        assert!(incidence_angle(&Vector3::new(2.0, 0.0, 0.0), &v).is_err());
    }

    #[test]
    fn frontal_normal_gives_identity() {
        let h = rectification_homography(&Vector3::new(0.0, 0.0, -1.0), &frontal_cam(), (50.0, 50.0)).unwrap();
        assert_eq!(h, Homography::identity());
    }

    #[test]
    fn center_is_fixed_point() {
        let n = Vector3::new(0.4, -0.3, -0.8).normalize();
        let h = rectification_homography(&n, &frontal_cam(), (37.0, 61.0)).unwrap();
        let (x, y) = h.apply(37.0, 61.0);
        assert!((x - 37.0).abs() < 1e-6 && (y - 61.0).abs() < 1e-6);
        assert!(h.matrix().determinant().abs() > 0.0);
    }

    #[test]
    fn tilted_plane_is_rectified() {
        // Plane through (0,0,10) tilted 40 degrees about the camera y axis.
        let cam = frontal_cam();
        let tilt = 40f64.to_radians();
        let n = Vector3::new(tilt.sin(), 0.0, -tilt.cos());
        let p0 = Point3::new(0.0, 0.0, 10.0);
        let depth_at = |u: f64, v: f64| {
            let ray = cam.ray(u, v);
            let s = (p0.coords.dot(&n)) / ray.dot(&n);
            ray * s
        };
        let h = rectification_homography(&n, &cam, (50.0, 50.0)).unwrap();
        let hinv = h.inverse();
        // Depth of rectified pixels, then normals by finite differences of
        // back-projected points in the rectified camera frame.
        let rot = frontal_rotation(&n).unwrap();
        let kinv = cam.k().try_inverse().unwrap();
        let point_rect = |x: f64, y: f64| {
            let (sx, sy) = hinv.apply(x, y);
            rot * depth_at(sx, sy)
        };
        let mut acc = Vector3::zeros();
        for y in 20..80 {
            for x in 20..80 {
                let (x, y) = (x as f64, y as f64);
                let du = point_rect(x + 0.5, y) - point_rect(x - 0.5, y);
                let dv = point_rect(x, y + 0.5) - point_rect(x, y - 0.5);
                let mut m = du.cross(&dv).normalize();
                if m.z > 0.0 {
                    m = -m;
                }
                acc += m;
            }
        }
        let mean = acc.normalize();
        let angle = mean.dot(&-Vector3::z()).acos().to_degrees();
        assert!(angle < 0.5, "residual tilt {angle}");
        // H agrees with reprojection through the rotated camera up to the
        // fixed-point shift.
        let h0 = cam.k() * rot.matrix() * kinv;
        let c = h0 * Vector3::new(50.0, 50.0, 1.0);
        let shift = (50.0 - c.x / c.z, 50.0 - c.y / c.z);
        for &(x, y) in &[(30.0, 40.0), (70.0, 55.0), (50.0, 80.0)] {
            let q = cam.k() * point_rect(x, y);
            assert!((q.x / q.z + shift.0 - x).abs() < 1e-6);
            assert!((q.y / q.z + shift.1 - y).abs() < 1e-6);
        }
    }

    #[test]
    fn warp_identity_translation_constant() {
        let p = Plane::from_fn(100, 100, |x, y| (x as f64 * 0.2).sin() + y as f64 * 0.01).unwrap();
        assert_eq!(warp_patch(&p, &Homography::identity()).unwrap(), p);
        let t = Homography::translation(3.0, -2.0);
        let w = warp_patch(&p, &t).unwrap();
        for y in 10..90 {
            for x in 10..90 {
                assert!((w.get(x, y) - p.get(x - 3, y + 2)).abs() < 1e-12);
            }
        }
        let c = Plane::filled(100, 100, 0.7).unwrap();
        let h = Homography::new(Matrix3::new(1.1, 0.1, -3.0, 0.05, 0.9, 2.0, 1e-3, -2e-3, 1.0)).unwrap();
        assert!(warp_patch(&c, &h).unwrap().data().iter().all(|v| (v - 0.7).abs() < 1e-12));
        assert!(Homography::new(Matrix3::zeros()).is_err());
    }

    #[test]
    fn sparse_text_roundtrip() {
        let s = SparseNormalMap::new(vec![sample(1.5, 2.25, [0.0, 0.6, -0.8])]).unwrap();
        let back = SparseNormalMap::from_text(&s.to_text()).unwrap();
        assert_eq!(back.len(), 1);
        assert!((back.samples()[0].n - s.samples()[0].n).norm() < 1e-12);
        assert!(SparseNormalMap::from_text("1 2 3").is_err());
    }
}
