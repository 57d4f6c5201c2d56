//! Dense SIFT, PCA, diagonal GMM and improved Fisher vector encoding.

mod gmm;
mod ifv;
mod pca;
mod sift;

pub use gmm::{gmm_fit_em, GmmConfig, GmmFit, GmmModel};
pub use ifv::{encode_ifv, fisher_raw, fvn_descriptors, FisherVector};
pub use pca::{pca_fit, PcaModel};
pub use sift::{dense_sift, SiftConfig, SiftDescriptorSet, SIFT_DIM};
