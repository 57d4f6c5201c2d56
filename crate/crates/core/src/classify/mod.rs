//! Histogram weighting, chi-squared kernels and one-vs-all SVMs.

mod chi2;
mod features;
mod svm;

pub use chi2::{
    chi2_distance, chi2_kernel_matrix, distance_matrix, learn_weights_loo, loo_accuracy,
    DistanceMatrix, Gamma, KernelMatrix, WeightSearch, DEFAULT_WEIGHT_GRID,
};
pub use features::{
    concat_l2, read_feature_cache, read_feature_cache_any, write_feature_cache, FeaturePart, FeatureSetSpec, PartKind,
};
pub use svm::{
    svm_train_ova, BinarySvm, KernelCombination, OvaSolution, OvaSvmModel, Prediction, SmoSolver,
    SvmConfig,
};
