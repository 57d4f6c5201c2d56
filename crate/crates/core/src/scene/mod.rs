//! Scene-scale labeling: superpixels, back-projected ground truth and
//! per-pixel accuracy.

mod labels;
mod ply;
mod slic;

pub use labels::{
    backproject_point_labels, evaluate_pixel_accuracy, GtPixel, LabeledPoint, PixelAccuracy,
    PixelTally, SparseLabelImage,
};
pub use ply::{read_ply, write_ply, PlyVertex};
pub use slic::{rgb_to_lab, slic_segment, superpixel_patch, Superpixel, SuperpixelMap, SLIC_ITERATIONS};
