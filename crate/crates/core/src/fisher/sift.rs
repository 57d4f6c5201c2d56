use crate::descriptors::Descriptors;
use crate::error::{Error, Result};
use crate::raster::{reflect_index, GrayImage, Plane};

pub const SIFT_DIM: usize = 128;
const SPATIAL_BINS: usize = 4;
const ORIENT_BINS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct SiftConfig {
    /// Spatial bin sizes in pixels; the descriptor window is four bins wide.
    pub bin_sizes: Vec<usize>,
    pub step: usize,
    /// Pre-smoothing uses `sigma = sqrt((bin / magnif)^2 - 0.25)`.
    pub magnif: f64,
}

impl Default for SiftConfig {
    fn default() -> Self {
        Self {
            bin_sizes: vec![4, 6, 8, 10],
            step: 4,
            magnif: 6.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SiftDescriptorSet {
    pub descriptors: Descriptors,
    /// Window centers in pixel coordinates.
    pub locations: Vec<(f64, f64)>,
    pub bin_sizes: Vec<usize>,
}

impl SiftDescriptorSet {
    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}

fn gaussian_blur(img: &Plane, sigma: f64) -> Plane {
    if sigma < 0.05 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let (w, h) = (img.width(), img.height());
    let horiz = Plane::from_fn(w, h, |x, y| {
        weights
            .iter()
            .enumerate()
            .map(|(k, wt)| wt * img.get(reflect_index(x as isize + k as isize - radius, w), y))
            .sum()
    })
    .unwrap();
    Plane::from_fn(w, h, |x, y| {
        weights
            .iter()
            .enumerate()
            .map(|(k, wt)| wt * horiz.get(x, reflect_index(y as isize + k as isize - radius, h)))
            .sum()
    })
    .unwrap()
}

/// Gradient magnitude and angle in `[0, 2pi)` by central differences
/// (one-sided at the border).
fn gradients(img: &Plane) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width(), img.height());
    let mut mag = Vec::with_capacity(w * h);
    let mut ang = Vec::with_capacity(w * h);
    let diff = |a: f64, b: f64, span: f64| (a - b) / span;
    for y in 0..h {
        for x in 0..w {
            let gx = match (x, w) {
                (_, 1) => 0.0,
                (0, _) => diff(img.get(1, y), img.get(0, y), 1.0),
                (x, w) if x == w - 1 => diff(img.get(x, y), img.get(x - 1, y), 1.0),
                (x, _) => diff(img.get(x + 1, y), img.get(x - 1, y), 2.0),
            };
            let gy = match (y, h) {
                (_, 1) => 0.0,
                (0, _) => diff(img.get(x, 1), img.get(x, 0), 1.0),
                (y, h) if y == h - 1 => diff(img.get(x, y), img.get(x, y - 1), 1.0),
                (y, _) => diff(img.get(x, y + 1), img.get(x, y - 1), 2.0),
            };
            mag.push((gx * gx + gy * gy).sqrt());
            ang.push(gy.atan2(gx).rem_euclid(2.0 * std::f64::consts::PI));
        }
    }
    (mag, ang)
}

fn normalize_descriptor(desc: &mut [f64]) {
    let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        desc.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    desc.iter_mut().for_each(|v| *v = (*v / norm).min(0.2));
    let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        desc.iter_mut().for_each(|v| *v /= norm);
    }
}

/// Dense SIFT on a regular grid per bin size. Each descriptor has 4x4
/// spatial by 8 orientation bins filled by trilinear interpolation of
/// gradient magnitude, then L2-normalized, clipped at 0.2 and renormalized.
pub fn dense_sift(img: &GrayImage, config: &SiftConfig) -> Result<SiftDescriptorSet> {
    if config.bin_sizes.is_empty() || config.step == 0 || config.bin_sizes.contains(&0) {
        return Err(Error::invalid("dense SIFT needs positive bin sizes and step"));
    }
    let (w, h) = (img.width(), img.height());
    let largest = *config.bin_sizes.iter().max().unwrap() * SPATIAL_BINS;
    if w < largest || h < largest {
        return Err(Error::invalid(format!(
            "image {}x{} too small for a {}-pixel SIFT window",
            w, h, largest
        )));
    }
    let mut descriptors = Descriptors::empty(SIFT_DIM);
    let mut locations = Vec::new();
    let mut bin_sizes = Vec::new();
    for &bin in &config.bin_sizes {
        let sigma = ((bin as f64 / config.magnif).powi(2) - 0.25).max(0.0).sqrt();
        let smooth = gaussian_blur(img.plane(), sigma);
        let (mag, ang) = gradients(&smooth);
        let window = bin * SPATIAL_BINS;
        let binf = bin as f64;
        let mut y0 = 0;
        while y0 + window <= h {
            let mut x0 = 0;
            while x0 + window <= w {
                let mut desc = [0.0f64; SIFT_DIM];
                for py in y0..y0 + window {
                    let by = (py - y0) as f64 / binf + 0.5 / binf - 0.5;
                    for px in x0..x0 + window {
                        let m = mag[py * w + px];
                        if m == 0.0 {
                            continue;
                        }
                        let bx = (px - x0) as f64 / binf + 0.5 / binf - 0.5;
                        let o = ang[py * w + px] / (2.0 * std::f64::consts::PI) * ORIENT_BINS as f64;
                        let (o0, fo) = (o.floor(), o - o.floor());
                        let (bx0, fx) = (bx.floor(), bx - bx.floor());
                        let (by0, fy) = (by.floor(), by - by.floor());
                        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                            let iy = by0 + dy;
                            if !(0.0..SPATIAL_BINS as f64).contains(&iy) || wy == 0.0 {
                                continue;
                            }
                            for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                                let ix = bx0 + dx;
                                if !(0.0..SPATIAL_BINS as f64).contains(&ix) || wx == 0.0 {
                                    continue;
                                }
                                for (dor, wo) in [(0usize, 1.0 - fo), (1usize, fo)] {
                                    let io = (o0 as usize + dor) % ORIENT_BINS;
                                    let idx = ((iy as usize) * SPATIAL_BINS + ix as usize) * ORIENT_BINS + io;
                                    desc[idx] += m * wx * wy * wo;
                                }
                            }
                        }
                    }
                }
                normalize_descriptor(&mut desc);
                descriptors.push(&desc)?;
                let half = window as f64 / 2.0 - 0.5;
                locations.push((x0 as f64 + half, y0 as f64 + half));
                bin_sizes.push(bin);
                x0 += config.step;
            }
            y0 += config.step;
        }
    }
    Ok(SiftDescriptorSet {
        descriptors,
        locations,
        bin_sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> GrayImage {
        GrayImage::standardize(
            Plane::from_fn(w, h, |x, y| ((x as f64) * 0.5).sin() * ((y as f64) * 0.3).cos() + (x % 3) as f64 * 0.2)
                .unwrap(),
        )
    }

    #[test]
    fn grid_coverage_and_dimension() {
        let img = textured(100, 100);
        let cfg = SiftConfig {
            bin_sizes: vec![4],
            ..SiftConfig::default()
        };
        let set = dense_sift(&img, &cfg).unwrap();
        assert_eq!(set.len(), 22 * 22);
        assert_eq!(set.descriptors.dim(), 128);
        let all = dense_sift(&img, &SiftConfig::default()).unwrap();
        assert_eq!(all.len(), 22 * 22 + 20 * 20 + 18 * 18 + 16 * 16);
    }

    #[test]
    fn descriptors_are_normalized_and_clipped() {
        let set = dense_sift(&textured(64, 64), &SiftConfig::default()).unwrap();
        for d in set.descriptors.rows() {
            let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n <= 1.0 + 1e-6);
            assert!(d.iter().all(|&v| v >= 0.0));
        }
        for &(x, y) in &set.locations {
            assert!((0.0..64.0).contains(&x) && (0.0..64.0).contains(&y));
        }
    }

    #[test]
    fn constant_image_gives_zero_descriptors() {
        let img = GrayImage::standardize(Plane::filled(50, 50, 3.0).unwrap());
        let set = dense_sift(&img, &SiftConfig::default()).unwrap();
        assert!(set.descriptors.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn small_image_rejected() {
        let img = textured(30, 100);
        assert!(matches!(dense_sift(&img, &SiftConfig::default()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn horizontal_ramp_fills_orientation_zero() {
        let img = GrayImage::standardize(Plane::from_fn(16, 16, |x, _| x as f64).unwrap());
        let cfg = SiftConfig {
            bin_sizes: vec![4],
            step: 4,
            magnif: 6.0,
        };
        let set = dense_sift(&img, &cfg).unwrap();
        let d = set.descriptors.row(0);
        let zero_bin: f64 = (0..16).map(|b| d[b * 8]).sum();
        let rest: f64 = d.iter().sum::<f64>() - zero_bin;
        assert!(zero_bin > 10.0 * rest.max(1e-12));
    }
}
