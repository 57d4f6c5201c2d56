use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: usize,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceImage {
    /// Paths are relative to the manifest's directory.
    pub image: String,
    pub camera: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normals: Option<String>,
    /// Labeled regions as polygons in pixel coordinates.
    pub regions: Vec<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub id: usize,
    pub category: usize,
    /// Physical size of the reference marker, kept as metadata.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker_scale: Option<f64>,
    pub images: Vec<SurfaceImage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train_fraction: f64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneImage {
    pub image: String,
    pub camera: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub name: String,
    /// PLY with a per-vertex `label` (category id, negative for unknown).
    pub cloud: String,
    pub images: Vec<SceneImage>,
    pub superpixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub categories: Vec<Category>,
    pub surfaces: Vec<Surface>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scenes: Vec<SceneRecord>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(categories: Vec<Category>, surfaces: Vec<Surface>) -> Result<Self> {
        let m = Self {
            schema_version: SCHEMA_VERSION,
            categories,
            surfaces,
            split: None,
            scenes: Vec::new(),
            base_dir: PathBuf::new(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Category and surface ids must equal their positions; every surface
    /// must name an existing category.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::format(
                "manifest",
                format!("schema_version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if self.categories.is_empty() {
            return Err(Error::invalid("manifest has no categories"));
        }
        for (i, c) in self.categories.iter().enumerate() {
            if c.id != i {
                return Err(Error::invalid(format!("category '{}' has id {} at position {i}", c.name, c.id)));
            }
        }
        for (i, s) in self.surfaces.iter().enumerate() {
            if s.id != i {
                return Err(Error::invalid(format!("surface id {} at position {i}", s.id)));
            }
            if s.category >= self.categories.len() {
                return Err(Error::invalid(format!("surface {i} names unknown category {}", s.category)));
            }
        }
        if let Some(split) = &self.split {
            let mut seen = vec![false; self.surfaces.len()];
            for &s in split.train.iter().chain(&split.test) {
                if s >= seen.len() || std::mem::replace(&mut seen[s], true) {
                    return Err(Error::invalid(format!("split lists surface {s} twice or out of range")));
                }
            }
        }
        for c in &self.categories {
            let n = self.surfaces_of(c.id).count();
            if n < 3 {
                log::warn!("category '{}' has {n} surfaces; at least 3 are expected", c.name);
            }
        }
        Ok(())
    }

    pub fn surfaces_of(&self, category: usize) -> impl Iterator<Item = &Surface> {
        self.surfaces.iter().filter(move |s| s.category == category)
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn set_base_dir(&mut self, dir: impl Into<PathBuf>) {
        self.base_dir = dir.into();
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_json(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
