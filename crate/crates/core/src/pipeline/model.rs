use std::fs;
use std::path::Path;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{hex, FeatureKind, RunConfig};
use super::report::{PatchOutcome, Report};
use super::extract::{feature_spec, patch_labels, read_binary, write_binary, Artifacts, FeatureExtractor, PatchFeatures};
use crate::classify::{concat_l2, distance_matrix, learn_weights_loo, FeatureSetSpec, OvaSvmModel, Prediction};
use crate::dataset::{sample_patches, Manifest, SampleRequest};
use crate::error::{Error, Result};
use crate::patch::PatchBundle;
use crate::textons::mix_seed;

const MODEL_FILE: &str = "model.json";
const SVM_FILE: &str = "svm.bin";

/// Weighted histogram concatenation plus a one-vs-all SVM.
#[derive(Clone, Debug)]
pub struct MaterialClassifier {
    pub svm: OvaSvmModel,
    /// Learned histogram weights, in histogram-part order.
    pub weights: Vec<f64>,
    /// Leave-one-out nearest-neighbor accuracy of the chosen weights.
    pub loo_accuracy: Option<f64>,
}

impl MaterialClassifier {
    /// Learn histogram weights by leave-one-out search over cached
    /// chi-squared distances, then train the SVM on the concatenation.
    pub fn train(
        spec: &FeatureSetSpec,
        examples: &[Vec<Vec<f64>>],
        labels: &[usize],
        num_classes: usize,
        config: &RunConfig,
    ) -> Result<Self> {
        if examples.len() != labels.len() {
            return Err(Error::invalid("examples and labels differ in length"));
        }
        let hist: Vec<usize> = spec.histogram_parts().map(|(i, _)| i).collect();
        let (weights, loo_accuracy) = if hist.is_empty() {
            (Vec::new(), None)
        } else {
            let dists = hist
                .iter()
                .map(|&p| {
                    let rows: Vec<&[f64]> = examples.iter().map(|e| e[p].as_slice()).collect();
                    distance_matrix(&rows)
                })
                .collect::<Result<Vec<_>>>()?;
            let search = learn_weights_loo(&dists, labels, &config.weight_grid)?;
            info!(
                "histogram weights {:?}: LOO accuracy {:.4} over {} combinations",
                search.weights, search.accuracy, search.combos_evaluated
            );
            (search.weights, Some(search.accuracy))
        };
        let spec = spec.with_weights(&weights)?;
        let rows = examples.par_iter().map(|e| concat_l2(e, &spec)).collect::<Result<Vec<_>>>()?;
        let svm = OvaSvmModel::train(&rows, labels, num_classes, &spec, &config.svm.to_config()?)?;
        Ok(Self { svm, weights, loo_accuracy })
    }

    pub fn spec(&self) -> &FeatureSetSpec {
        &self.svm.spec
    }

    pub fn predict(&self, parts: &[Vec<f64>]) -> Result<Prediction> {
        self.svm.predict(&concat_l2(parts, &self.svm.spec)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    config_hash: String,
    config: RunConfig,
    categories: Vec<String>,
    feature_hash: String,
    weights: Vec<f64>,
    loo_accuracy: Option<f64>,
    files: Vec<String>,
}

/// Everything needed to classify new patches.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub config: RunConfig,
    pub categories: Vec<String>,
    pub artifacts: Artifacts,
    pub classifier: MaterialClassifier,
}

/// Patches of the split's training or testing surfaces.
pub fn split_patches(manifest: &Manifest, config: &RunConfig, train: bool) -> Result<Vec<PatchBundle>> {
    let split = manifest
        .split
        .as_ref()
        .ok_or_else(|| Error::MissingData("the manifest has no train/test split".into()))?;
    let (surfaces, per_category, stream) = if train {
        (&split.train, config.train_per_category, 1)
    } else {
        (&split.test, config.test_per_category, 2)
    };
    if config.needs_geometry() {
        for &s in surfaces {
            if manifest.surfaces[s].images.iter().any(|v| v.normals.is_none()) {
                return Err(Error::invalid(format!(
                    "surface {s} has views without normal files but the selected features need geometry"
                )));
            }
        }
    }
    let request = SampleRequest { per_category, scales: config.scales.clone(), seed: mix_seed(config.seed, stream) };
    sample_patches(manifest, surfaces, &request)
}

impl TrainedModel {
    /// Sample training patches from the manifest split and fit every
    /// component the configured features need.
    pub fn train(manifest: &Manifest, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let patches = split_patches(manifest, config, true)?;
        let categories: Vec<String> = manifest.categories.iter().map(|c| c.name.clone()).collect();
        info!("training on {} patches from {} categories", patches.len(), categories.len());
        Self::train_on(config, categories, &patches)
    }

    pub fn train_on(config: &RunConfig, categories: Vec<String>, patches: &[PatchBundle]) -> Result<Self> {
        config.validate()?;
        if patches.is_empty() {
            return Err(Error::MissingData("no training patches".into()));
        }
        let n = categories.len();
        let labels = patch_labels(patches, n)?;
        let artifacts = Artifacts::fit(config, patches, n)?;
        let features = FeatureExtractor::new(config, &artifacts)?.extract_all(patches)?;
        let spec = feature_spec(&config.features, &features[0])?;
        let parts: Vec<Vec<Vec<f64>>> = features.into_iter().map(|f| f.parts).collect();
        let classifier = MaterialClassifier::train(&spec, &parts, &labels, n, config)?;
        Ok(Self { config: config.clone(), categories, artifacts, classifier })
    }

    pub fn extractor(&self) -> Result<FeatureExtractor<'_>> {
        FeatureExtractor::new(&self.config, &self.artifacts)
    }

    /// Check that extracted features have the part table the SVM was trained on.
    pub fn check_features(&self, sample: &PatchFeatures) -> Result<()> {
        let spec = feature_spec(&self.config.features, sample)?;
        if spec.hash() != self.classifier.spec().hash() {
            return Err(Error::invalid(
                "feature spec of the extracted features does not match the model's feature spec",
            ));
        }
        Ok(())
    }

    pub fn predict(&self, features: &PatchFeatures) -> Result<Prediction> {
        self.classifier.predict(&features.parts)
    }

    /// Classify patches, returning each prediction with its features.
    pub fn classify(&self, patches: &[PatchBundle]) -> Result<Vec<(PatchFeatures, Prediction)>> {
        let features = self.extractor()?.extract_all(patches)?;
        if let Some(f) = features.first() {
            self.check_features(f)?;
        }
        features
            .into_par_iter()
            .map(|f| {
                let p = self.predict(&f)?;
                Ok((f, p))
            })
            .collect()
    }

    /// Files `save` writes, in a fixed order.
    pub fn file_names(&self) -> Vec<String> {
        let mut names = vec![MODEL_FILE.to_string()];
        names.extend(self.artifacts.file_names());
        names.push(SVM_FILE.into());
        names
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header = ModelHeader {
            config_hash: self.config.hash(),
            config: self.config.clone(),
            categories: self.categories.clone(),
            feature_hash: hex(&self.classifier.spec().hash()),
            weights: self.classifier.weights.clone(),
            loo_accuracy: self.classifier.loo_accuracy,
            files: self.file_names(),
        };
        let path = dir.join(MODEL_FILE);
        let mut json = serde_json::to_string_pretty(&header)?;
        json.push('\n');
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        self.artifacts.save(dir)?;
        write_binary(&dir.join(SVM_FILE), |w| self.classifier.svm.write(w))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let header: ModelHeader = serde_json::from_str(&text)?;
        if header.config.hash() != header.config_hash {
            return Err(Error::invalid(format!("{}: config hash does not match its config", path.display())));
        }
        header.config.validate()?;
        let artifacts = Artifacts::load(dir, &header.config)?;
        let svm = read_binary(&dir.join(SVM_FILE), |r| OvaSvmModel::read(r))?;
        if hex(&svm.spec.hash()) != header.feature_hash {
            return Err(Error::invalid("the SVM was trained on a different feature spec than the model records"));
        }
        if svm.num_classes() != header.categories.len() {
            return Err(Error::format("model", "class count disagrees with the category list"));
        }
        Ok(Self {
            config: header.config,
            categories: header.categories,
            artifacts,
            classifier: MaterialClassifier { svm, weights: header.weights, loo_accuracy: header.loo_accuracy },
        })
    }

    /// Refuse to evaluate with a feature list other than the one trained.
    pub fn require_features(&self, features: &[FeatureKind]) -> Result<()> {
        if features != self.config.features.as_slice() {
            let names = |f: &[FeatureKind]| f.iter().map(|k| k.name()).collect::<Vec<_>>().join(",");
            return Err(Error::invalid(format!(
                "model was trained with features {} but {} were requested",
                names(&self.config.features),
                names(features)
            )));
        }
        Ok(())
    }
}

/// Classify the test surfaces of the manifest split and summarize.
pub fn evaluate(model: &TrainedModel, manifest: &Manifest) -> Result<Report> {
    let names: Vec<String> = manifest.categories.iter().map(|c| c.name.clone()).collect();
    if names != model.categories {
        return Err(Error::invalid("the model was trained on different categories than the manifest lists"));
    }
    let patches = split_patches(manifest, &model.config, false)?;
    info!("evaluating {} test patches", patches.len());
    let truths = patch_labels(&patches, names.len())?;
    let results = model.classify(&patches)?;
    let outcomes = patches
        .iter()
        .zip(truths)
        .zip(results)
        .map(|((b, truth), (f, p))| PatchOutcome {
            surface: b.surface,
            image: b.image,
            x: b.rect.x,
            y: b.rect.y,
            side: f.scale,
            truth,
            predicted: p.label,
            incidence: f.incidence,
        })
        .collect();
    Report::new(names, outcomes)
}

/// Uniformly random labels, the chance baseline.
pub fn random_predictions(n: usize, num_classes: usize, seed: u64) -> Vec<usize> {
    if num_classes == 0 {
        warn!("no classes to draw from");
        return vec![0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..num_classes)).collect()
}
