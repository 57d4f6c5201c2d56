use std::collections::HashMap;

use nalgebra::Point3;

use crate::camera::CameraModel;
use crate::error::{Error, Result};

use super::slic::SuperpixelMap;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledPoint {
    pub p: Point3<f64>,
    /// `None` marks points without a material label.
    pub label: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtPixel {
    pub u: u32,
    pub v: u32,
    pub label: Option<usize>,
    /// Exact projection and camera depth of the point that won the pixel.
    pub uv: (f64, f64),
    pub depth: f64,
}

/// Ground-truth labels at a sparse set of pixels, sorted by row then column.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseLabelImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<GtPixel>,
}

impl SparseLabelImage {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Number of pixels with a known label.
    pub fn labeled(&self) -> usize {
        self.pixels.iter().filter(|p| p.label.is_some()).count()
    }
}

/// Project each point, round to the nearest pixel, drop points behind the
/// camera or outside the image, and keep the nearest point per pixel (ties
/// to the earlier point).
pub fn backproject_point_labels(points: &[LabeledPoint], cam: &CameraModel) -> SparseLabelImage {
    let (w, h) = (cam.width(), cam.height());
    let mut best: HashMap<(u32, u32), (f64, usize, (f64, f64))> = HashMap::new();
    for (i, lp) in points.iter().enumerate() {
        let Some((u, v, depth)) = cam.project(&lp.p) else { continue };
        let (pu, pv) = (u.round(), v.round());
        if !(pu >= 0.0 && pv >= 0.0 && pu < w as f64 && pv < h as f64) {
            continue;
        }
        let key = (pu as u32, pv as u32);
        match best.get(&key) {
            Some(&(d, _, _)) if d <= depth => {}
            _ => {
                best.insert(key, (depth, i, (u, v)));
            }
        }
    }
    let mut pixels: Vec<GtPixel> = best
        .into_iter()
        .map(|((u, v), (depth, i, uv))| GtPixel {
            u,
            v,
            label: points[i].label,
            uv,
            depth,
        })
        .collect();
    pixels.sort_by_key(|p| (p.v, p.u));
    SparseLabelImage {
        width: w,
        height: h,
        pixels,
    }
}

/// Per-class correct and total counts; tallies from several images add up.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelTally {
    pub correct: Vec<u64>,
    pub total: Vec<u64>,
}

impl PixelTally {
    pub fn new(num_classes: usize) -> Self {
        Self {
            correct: vec![0; num_classes],
            total: vec![0; num_classes],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.total[truth] += 1;
        if truth == predicted {
            self.correct[truth] += 1;
        }
    }

    pub fn merge(&mut self, other: &PixelTally) {
        for (a, b) in self.correct.iter_mut().zip(&other.correct) {
            *a += b;
        }
        for (a, b) in self.total.iter_mut().zip(&other.total) {
            *a += b;
        }
    }

    pub fn pixels(&self) -> u64 {
        self.total.iter().sum()
    }

    pub fn accuracy(&self) -> Result<PixelAccuracy> {
        if self.pixels() == 0 {
            return Err(Error::invalid("no labeled ground-truth pixels to score"));
        }
        let per_class: Vec<Option<f64>> = self
            .correct
            .iter()
            .zip(&self.total)
            .map(|(&c, &t)| (t > 0).then(|| c as f64 / t as f64))
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        Ok(PixelAccuracy {
            class_mean: present.iter().sum::<f64>() / present.len() as f64,
            pixel_mean: self.correct.iter().sum::<u64>() as f64 / self.pixels() as f64,
            per_class,
            counts: self.total.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelAccuracy {
    /// Recall per class; `None` for classes absent from the ground truth.
    pub per_class: Vec<Option<f64>>,
    /// Unweighted mean of the present classes' recalls.
    pub class_mean: f64,
    pub pixel_mean: f64,
    pub counts: Vec<u64>,
}

/// Score each labeled ground-truth pixel against the label predicted for
/// its superpixel. Unknown pixels are skipped.
pub fn evaluate_pixel_accuracy(
    map: &SuperpixelMap,
    predicted: &[usize],
    gt: &SparseLabelImage,
    num_classes: usize,
) -> Result<PixelTally> {
    if predicted.len() != map.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} superpixels",
            predicted.len(),
            map.len()
        )));
    }
    if gt.width as usize != map.width() || gt.height as usize != map.height() {
        return Err(Error::invalid("ground truth and superpixel map sizes differ"));
    }
    let mut tally = PixelTally::new(num_classes);
    for p in &gt.pixels {
        let Some(truth) = p.label else { continue };
        if truth >= num_classes {
            return Err(Error::invalid(format!("ground-truth label {truth} out of range")));
        }
        tally.record(truth, predicted[map.label(p.u as usize, p.v as usize)]);
    }
    if tally.pixels() == 0 {
        return Err(Error::invalid("no labeled ground-truth pixels to score"));
    }
    Ok(tally)
}
