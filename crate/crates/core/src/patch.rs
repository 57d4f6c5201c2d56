//! Fixed-size patches cut from a source image together with the geometry
//! needed to compute features on them.

use image::RgbImage;

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::geometry::{NormalSample, SparseNormalMap, PATCH_SIZE};
use crate::raster::{crop_rgb, resample_rgb};

/// Axis-aligned crop in source pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl PatchRect {
    pub fn square(x: u32, y: u32, side: u32) -> Self {
        Self {
            x,
            y,
            width: side,
            height: side,
        }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.x as f64 - 0.5
            && v >= self.y as f64 - 0.5
            && u <= (self.x + self.width) as f64 - 0.5
            && v <= (self.y + self.height) as f64 - 0.5
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchBundle {
    /// PATCH_SIZE x PATCH_SIZE resample of the crop.
    pub rgb: RgbImage,
    /// World-frame normals in patch pixel coordinates.
    pub normals: SparseNormalMap,
    /// Camera whose image is the patch itself.
    pub camera: CameraModel,
    pub rect: PatchRect,
    pub category: Option<usize>,
    pub surface: usize,
    pub image: usize,
}

impl PatchBundle {
    /// Larger crop side in source pixels.
    pub fn source_scale(&self) -> u32 {
        self.rect.width.max(self.rect.height)
    }
}

/// Minimum number of normal samples carried with a patch; small crops pull
/// in the nearest samples around them.
const MIN_SAMPLES: usize = 4;

/// Crop `rect`, resample to PATCH_SIZE x PATCH_SIZE, and carry the normal
/// samples inside the crop into patch coordinates. Patch pixel `x` maps to
/// source pixel `s x + x0 + s/2 - 1/2`.
pub fn extract_patch(
    rgb: &RgbImage,
    normals: &SparseNormalMap,
    cam: &CameraModel,
    rect: PatchRect,
) -> Result<(RgbImage, SparseNormalMap, CameraModel)> {
    if rect.width == 0 || rect.height == 0 {
        return Err(Error::invalid("empty patch rectangle"));
    }
    let crop = crop_rgb(rgb, rect.x, rect.y, rect.width, rect.height)?;
    let out = PATCH_SIZE as u32;
    let patch = resample_rgb(&crop, PATCH_SIZE, PATCH_SIZE)?;
    let sx = rect.width as f64 / out as f64;
    let sy = rect.height as f64 / out as f64;
    let ox = rect.x as f64 + 0.5 * sx - 0.5;
    let oy = rect.y as f64 + 0.5 * sy - 0.5;
    let camera = cam.resampled_xy((sx, sy), (ox, oy), (out, out))?;

    let to_patch = |s: &NormalSample| NormalSample {
        u: (s.u - ox) / sx,
        v: (s.v - oy) / sy,
        n: s.n,
    };
    let mut inside: Vec<NormalSample> = normals
        .samples()
        .iter()
        .filter(|s| rect.contains(s.u, s.v))
        .map(to_patch)
        .collect();
    if inside.len() < MIN_SAMPLES && !normals.is_empty() {
        let (cx, cy) = (
            rect.x as f64 + rect.width as f64 / 2.0 - 0.5,
            rect.y as f64 + rect.height as f64 / 2.0 - 0.5,
        );
        let mut order: Vec<(f64, usize)> = normals
            .samples()
            .iter()
            .enumerate()
            .map(|(i, s)| ((s.u - cx).powi(2) + (s.v - cy).powi(2), i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        inside = order
            .iter()
            .take(MIN_SAMPLES)
            .map(|&(_, i)| to_patch(&normals.samples()[i]))
            .collect();
    }
    Ok((patch, SparseNormalMap::new(inside)?, camera))
}
