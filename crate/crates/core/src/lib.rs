//! Material recognition from images plus coarse surface geometry.
//!
//! The crate bundles 2D texture and color features (RFS/MR8 textons, dense
//! SIFT Fisher vectors, HSV textons), three ways of injecting camera-frame
//! surface normals (joint `-N` descriptors, independent normal textons, and
//! frontal rectification), chi-square kernel SVM classification, scene-scale
//! superpixel labeling, and a procedural data generator with exact geometry.

mod binio;
pub mod camera;
pub mod classify;
pub mod dataset;
pub mod descriptors;
pub mod error;
pub mod filterbank;
pub mod fisher;
pub mod geometry;
pub mod kmeans;
pub mod patch;
pub mod pipeline;
pub mod raster;
pub mod scene;
pub mod textons;

pub use camera::CameraModel;
pub use descriptors::Descriptors;
pub use error::{Error, Result};
pub use raster::{GrayImage, HsvImage, Plane};
