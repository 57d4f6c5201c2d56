//! Training, evaluation and reporting built from the lower-level modules.

mod config;
mod extract;
mod model;
mod report;
mod scene;

pub use config::{parse_features, FeatureKind, RunConfig, SiftSettings, SvmSettings};
pub use extract::{
    embedding_file_name, feature_spec, prepare_patch, Artifacts, FeatureExtractor, PatchFeatures, PreparedPatch,
};
pub use model::{evaluate, random_predictions, split_patches, MaterialClassifier, TrainedModel};
pub use report::{
    angle_band, confusion_heatmap, difference_heatmap, write_difference, BinAccuracy, PatchOutcome, Report, ANGLE_BANDS,
};
pub use scene::{
    evaluate_scene_image, evaluate_scene_records, evaluate_scenes, project_cloud, SceneEvaluation, SceneImageResult, SceneSettings,
    MIN_GT_PIXELS, SKIPPED,
};
