use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{Gamma, KernelCombination, SvmConfig, DEFAULT_WEIGHT_GRID};
use crate::error::{Error, Result};
use crate::fisher::SiftConfig;
use crate::textons::DescriptorKind;

/// One selectable feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Rfs,
    Mr8,
    RfsN,
    Mr8N,
    Hsv,
    N3d,
    Fv,
    FvN,
    /// Externally supplied embedding vectors.
    Emb,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 9] = [
        FeatureKind::Rfs,
        FeatureKind::Mr8,
        FeatureKind::RfsN,
        FeatureKind::Mr8N,
        FeatureKind::Hsv,
        FeatureKind::N3d,
        FeatureKind::Fv,
        FeatureKind::FvN,
        FeatureKind::Emb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Rfs => "rfs",
            FeatureKind::Mr8 => "mr8",
            FeatureKind::RfsN => "rfs_n",
            FeatureKind::Mr8N => "mr8_n",
            FeatureKind::Hsv => "hsv",
            FeatureKind::N3d => "n3d",
            FeatureKind::Fv => "fv",
            FeatureKind::FvN => "fv_n",
            FeatureKind::Emb => "emb",
        }
    }

    /// Texton dictionary kind, for histogram features.
    pub fn texton_kind(self) -> Option<DescriptorKind> {
        Some(match self {
            FeatureKind::Rfs => DescriptorKind::Rfs,
            FeatureKind::Mr8 => DescriptorKind::Mr8,
            FeatureKind::RfsN => DescriptorKind::RfsN,
            FeatureKind::Mr8N => DescriptorKind::Mr8N,
            FeatureKind::Hsv => DescriptorKind::Hsv,
            FeatureKind::N3d => DescriptorKind::Normal,
            _ => return None,
        })
    }

    pub fn is_histogram(self) -> bool {
        self.texton_kind().is_some()
    }

    pub fn needs_geometry(self) -> bool {
        matches!(self, FeatureKind::RfsN | FeatureKind::Mr8N | FeatureKind::N3d | FeatureKind::FvN)
    }

    pub fn needs_filters(self) -> bool {
        matches!(self, FeatureKind::Rfs | FeatureKind::Mr8 | FeatureKind::RfsN | FeatureKind::Mr8N)
    }

    pub fn needs_sift(self) -> bool {
        matches!(self, FeatureKind::Fv | FeatureKind::FvN)
    }

    /// Texture features, the ones frontal rectification applies to.
    pub fn is_texture(self) -> bool {
        self.needs_filters() || self.needs_sift()
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        let key = if key == "external" || key == "embedding" { "emb".to_string() } else { key };
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::invalid(format!("unknown feature '{s}'")))
    }
}

/// Parse a comma-separated feature list such as `mr8_n,hsv,n3d`.
pub fn parse_features(list: &str) -> Result<Vec<FeatureKind>> {
    let mut out: Vec<FeatureKind> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    out.dedup();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmSettings {
    pub c: f64,
    /// `None` selects the inverse mean training distance.
    pub gamma: Option<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Joins the chi-squared and linear kernels: "product" or "sum".
    pub combination: String,
}

impl Default for SvmSettings {
    fn default() -> Self {
        let d = SvmConfig::default();
        Self {
            c: d.c,
            gamma: None,
            tolerance: d.tolerance,
            max_iterations: d.max_iterations,
            combination: "product".into(),
        }
    }
}

impl SvmSettings {
    pub fn to_config(&self) -> Result<SvmConfig> {
        let combination = match self.combination.as_str() {
            "product" => KernelCombination::Product,
            "sum" => KernelCombination::Sum,
            other => return Err(Error::invalid(format!("unknown kernel combination '{other}'"))),
        };
        Ok(SvmConfig {
            c: self.c,
            gamma: self.gamma.map_or(Gamma::Auto, Gamma::Fixed),
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            combination,
        })
    }
}

/// Everything that determines a training run. Missing fields in a config
/// file take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub features: Vec<FeatureKind>,
    pub rectify: bool,
    pub seed: u64,
    pub svm: SvmSettings,
    /// Patches per category per scale.
    pub train_per_category: usize,
    pub test_per_category: usize,
    pub scales: Vec<u32>,
    /// Pixels per category entering texton clustering.
    pub texton_samples: usize,
    pub pca_dim: usize,
    pub pca_samples: usize,
    pub gmm_modes: usize,
    pub gmm_samples: usize,
    /// EM iteration cap for the Fisher-vector mixtures.
    pub gmm_iterations: usize,
    pub sift: SiftSettings,
    /// Scale of the normal appended to filter responses in -N features.
    pub normal_alpha: f64,
    pub weight_grid: Vec<f64>,
    /// Directory of per-patch embedding files for the `emb` feature.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    /// Worker threads; 0 uses the rayon default. Not part of the hash.
    #[serde(skip)]
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiftSettings {
    pub bin_sizes: Vec<usize>,
    pub step: usize,
    pub magnif: f64,
}

impl From<&SiftSettings> for SiftConfig {
    fn from(s: &SiftSettings) -> Self {
        SiftConfig { bin_sizes: s.bin_sizes.clone(), step: s.step, magnif: s.magnif }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let sift = SiftConfig::default();
        Self {
            features: vec![FeatureKind::Mr8, FeatureKind::Hsv],
            rectify: false,
            seed: 0,
            svm: SvmSettings::default(),
            train_per_category: 100,
            test_per_category: 50,
            scales: vec![100, 200, 400, 800],
            texton_samples: 10_000,
            pca_dim: 80,
            pca_samples: 100_000,
            gmm_modes: 256,
            gmm_samples: 256_000,
            gmm_iterations: crate::fisher::GmmConfig::default().max_iterations,
            sift: SiftSettings { bin_sizes: sift.bin_sizes, step: sift.step, magnif: sift.magnif },
            normal_alpha: 1.0,
            weight_grid: DEFAULT_WEIGHT_GRID.to_vec(),
            embeddings: None,
            threads: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::invalid("select at least one feature"));
        }
        let mut seen = self.features.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.features.len() {
            return Err(Error::invalid("a feature is selected twice"));
        }
        if self.features.contains(&FeatureKind::Emb) && self.embeddings.is_none() {
            return Err(Error::invalid("the emb feature needs an embeddings directory"));
        }
        if self.scales.is_empty() || self.scales.contains(&0) {
            return Err(Error::invalid("patch scales must be positive"));
        }
        if self.train_per_category == 0 || self.test_per_category == 0 {
            return Err(Error::invalid("patch counts must be positive"));
        }
        if self.texton_samples == 0 || self.pca_samples == 0 || self.gmm_samples == 0 || self.gmm_modes == 0 || self.gmm_iterations == 0 {
            return Err(Error::invalid("sample budgets and mixture size must be positive"));
        }
        if self.pca_dim == 0 || self.pca_dim > crate::fisher::SIFT_DIM {
            return Err(Error::invalid(format!("PCA dimension must be in 1..={}", crate::fisher::SIFT_DIM)));
        }
        if !(self.normal_alpha >= 0.0) {
            return Err(Error::invalid("normal_alpha must be nonnegative"));
        }
        if self.sift.bin_sizes.is_empty() || self.sift.step == 0 {
            return Err(Error::invalid("SIFT needs bin sizes and a positive step"));
        }
        self.svm.to_config()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }

    pub fn needs_geometry(&self) -> bool {
        self.rectify || self.features.iter().any(|f| f.needs_geometry())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_names_roundtrip() {
        for k in FeatureKind::ALL {
            assert_eq!(k.name().parse::<FeatureKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        assert_eq!(parse_features("mr8-n, hsv,n3d").unwrap(), vec![FeatureKind::Mr8N, FeatureKind::Hsv, FeatureKind::N3d]);
        assert!(parse_features("sift").is_err());
    }

    #[test]
    fn hash_ignores_threads_and_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.threads = 8;
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::default();
        c.features.clear();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.features = vec![FeatureKind::Emb];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.svm.combination = "max".into();
        assert!(c.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
