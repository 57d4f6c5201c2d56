//! Manifests, surface-level splits, patch sampling and the synthetic
//! benchmark generator.

mod manifest;
mod polygon;
mod sampling;
mod synth;
mod texture;

pub use manifest::{
    Category, Manifest, SceneImage, SceneRecord, Split, Surface, SurfaceImage, SCHEMA_VERSION,
};
pub use polygon::{clip_polygon_to_rect, point_in_polygon, square_inside_polygon, Polygon};
pub use sampling::{allocate, load_view, sample_patches, split_by_surface, split_by_surface_keyed, Allocation, SampleRequest};
pub use synth::{
    corrugation_normal, render_view, synth_generate, GeometrySpec, LightingSpec, RenderedView,
    SceneSpec, SurfaceInstance, SynthClass, SynthSpec, TextureSpec, ViewPose,
};
