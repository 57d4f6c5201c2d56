use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{debug, info};
use rayon::prelude::*;

use super::config::{FeatureKind, RunConfig};
use crate::classify::{read_feature_cache_any, FeaturePart, FeatureSetSpec, PartKind};
use crate::descriptors::Descriptors;
use crate::error::{Error, Result};
use crate::filterbank::{mr8_pool, FilterBank, FilterPlan, ResponseStack};
use crate::fisher::{
    dense_sift, encode_ifv, fvn_descriptors, gmm_fit_em, pca_fit, GmmConfig, GmmModel, PcaModel, SiftConfig,
    SiftDescriptorSet,
};
use crate::geometry::{
    incidence_angle, interpolate_normals, mean_unit_normal, rectification_homography, to_camera_frame, warp_normals,
    warp_patch, DenseNormalMap, PATCH_SIZE,
};
use crate::patch::PatchBundle;
use crate::raster::{luminance, rgb_to_hsv, GrayImage, HsvImage};
use crate::textons::{
    augment_with_normals, build_dictionary, encode_histogram, hsv_descriptors, mix_seed, normal_descriptors,
    subsample, DescriptorKind, TextonDictionary,
};

const CENTER: (f64, f64) = ((PATCH_SIZE as f64 - 1.0) / 2.0, (PATCH_SIZE as f64 - 1.0) / 2.0);

const STREAM_DICT: u64 = 100;
const STREAM_SIFT: u64 = 300;
const STREAM_PCA: u64 = 301;
const STREAM_GMM_FV: u64 = 302;
const STREAM_GMM_FVN: u64 = 303;

/// A patch ready for feature extraction.
#[derive(Clone, Debug)]
pub struct PreparedPatch {
    /// Standardized gray image, rectified when requested.
    pub gray: GrayImage,
    pub hsv: HsvImage,
    /// Camera-frame normals on the patch grid.
    pub normals: Option<DenseNormalMap>,
    /// Normals aligned with `gray` (spatially warped when rectified).
    pub texture_normals: Option<DenseNormalMap>,
    /// Degrees between the mean normal and the ray through the patch center.
    pub incidence: Option<f64>,
}

fn surface_name(bundle: &PatchBundle) -> String {
    match bundle.category {
        Some(_) => format!("surface {}", bundle.surface),
        None => format!("scene image {}", bundle.image),
    }
}

/// Gray, HSV and normal maps for one patch. Normals are computed whenever the
/// bundle carries samples; `need_normals` turns their absence into an error.
pub fn prepare_patch(bundle: &PatchBundle, rectify: bool, need_normals: bool) -> Result<PreparedPatch> {
    let lum = luminance(&bundle.rgb)?;
    let hsv = rgb_to_hsv(&bundle.rgb)?;
    if bundle.normals.is_empty() {
        if need_normals || rectify {
            return Err(Error::invalid(format!(
                "{} has no normal data but the selected features need geometry",
                surface_name(bundle)
            )));
        }
        return Ok(PreparedPatch { gray: GrayImage::standardize(lum), hsv, normals: None, texture_normals: None, incidence: None });
    }
    let (w, h) = (lum.width(), lum.height());
    let world = interpolate_normals(&bundle.normals, w, h)?;
    let cam_normals = to_camera_frame(&world, &bundle.camera)?;
    let mean = mean_unit_normal(&cam_normals)?;
    let ray = bundle.camera.ray(CENTER.0, CENTER.1);
    let incidence = incidence_angle(&mean, &ray)?;
    let (gray, texture_normals) = if rectify {
        let hom = rectification_homography(&mean, &bundle.camera, CENTER)?;
        (GrayImage::standardize(warp_patch(&lum, &hom)?), warp_normals(&cam_normals, &hom)?)
    } else {
        (GrayImage::standardize(lum), cam_normals.clone())
    };
    Ok(PreparedPatch {
        gray,
        hsv,
        normals: Some(cam_normals),
        texture_normals: Some(texture_normals),
        incidence: Some(incidence),
    })
}

fn need<'a, T>(v: &'a Option<T>, what: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Error::MissingData(format!("{what} is not available")))
}

/// Lazily computed filter responses for one patch.
struct Responses<'a> {
    plan: Option<&'a FilterPlan>,
    rfs: Option<ResponseStack>,
    mr8: Option<ResponseStack>,
    sift: Option<SiftDescriptorSet>,
}

impl<'a> Responses<'a> {
    fn new(plan: Option<&'a FilterPlan>) -> Self {
        Self { plan, rfs: None, mr8: None, sift: None }
    }

    fn rfs(&mut self, p: &PreparedPatch) -> Result<&ResponseStack> {
        if self.rfs.is_none() {
            let plan = self.plan.ok_or_else(|| Error::invalid("no filter plan prepared"))?;
            self.rfs = Some(plan.apply(&p.gray)?);
        }
        Ok(self.rfs.as_ref().unwrap())
    }

    fn mr8(&mut self, p: &PreparedPatch) -> Result<&ResponseStack> {
        if self.mr8.is_none() {
            let pooled = mr8_pool(self.rfs(p)?)?;
            self.mr8 = Some(pooled);
        }
        Ok(self.mr8.as_ref().unwrap())
    }

    fn sift(&mut self, p: &PreparedPatch, cfg: &SiftConfig) -> Result<&SiftDescriptorSet> {
        if self.sift.is_none() {
            self.sift = Some(dense_sift(&p.gray, cfg)?);
        }
        Ok(self.sift.as_ref().unwrap())
    }

    fn pixels(&mut self, kind: DescriptorKind, p: &PreparedPatch, alpha: f64) -> Result<Descriptors> {
        Ok(match kind {
            DescriptorKind::Rfs => self.rfs(p)?.descriptors(),
            DescriptorKind::Mr8 => self.mr8(p)?.descriptors(),
            DescriptorKind::RfsN => {
                let n = need(&p.texture_normals, "normal map")?;
                augment_with_normals(self.rfs(p)?, n, alpha)?
            }
            DescriptorKind::Mr8N => {
                let n = need(&p.texture_normals, "normal map")?;
                augment_with_normals(self.mr8(p)?, n, alpha)?
            }
            DescriptorKind::Hsv => hsv_descriptors(&p.hsv),
            DescriptorKind::Normal => normal_descriptors(need(&p.normals, "normal map")?),
        })
    }
}

fn texton_kinds(config: &RunConfig) -> Vec<DescriptorKind> {
    config.features.iter().filter_map(|f| f.texton_kind()).collect()
}

fn wants(config: &RunConfig, f: FeatureKind) -> bool {
    config.features.contains(&f)
}

fn needs_filters(config: &RunConfig) -> bool {
    config.features.iter().any(|f| f.needs_filters())
}

fn needs_sift(config: &RunConfig) -> bool {
    config.features.iter().any(|f| f.needs_sift())
}

fn filter_plan(config: &RunConfig) -> Result<Option<FilterPlan>> {
    if needs_filters(config) {
        Ok(Some(FilterPlan::new(&FilterBank::rfs(), PATCH_SIZE, PATCH_SIZE)?))
    } else {
        Ok(None)
    }
}

fn gmm_config(config: &RunConfig) -> GmmConfig {
    GmmConfig { max_iterations: config.gmm_iterations, ..GmmConfig::default() }
}

fn stack_rows(parts: &[Descriptors], dim: usize) -> Result<Descriptors> {
    let mut out = Descriptors::with_capacity(dim, parts.iter().map(|p| p.len()).sum());
    for p in parts {
        out.extend(p)?;
    }
    Ok(out)
}

/// Learned dictionaries and models shared by training and evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Artifacts {
    pub dictionaries: BTreeMap<DescriptorKind, TextonDictionary>,
    pub pca: Option<PcaModel>,
    pub gmm_fv: Option<GmmModel>,
    pub gmm_fvn: Option<GmmModel>,
}

impl Artifacts {
    /// Fit everything the configured features need from labeled training
    /// patches. Each component draws from its own seed stream, so fitting a
    /// union of features gives the same components as fitting each alone.
    pub fn fit(config: &RunConfig, patches: &[PatchBundle], num_classes: usize) -> Result<Self> {
        let labels = patch_labels(patches, num_classes)?;
        let mut counts = vec![0usize; num_classes];
        labels.iter().for_each(|&c| counts[c] += 1);
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::invalid(format!("category {c} has no training patches")));
        }
        let kinds = texton_kinds(config);
        let plan = filter_plan(config)?;
        let sift_cfg = SiftConfig::from(&config.sift);
        let use_sift = needs_sift(config);
        let want_fvn = wants(config, FeatureKind::FvN);
        let sift_budget = config.pca_samples.div_ceil(patches.len());
        let geometry = config.needs_geometry();

        info!("fitting artifacts from {} patches", patches.len());
        // Per patch: a seeded pixel subset for every dictionary, plus raw SIFT rows.
        let collected: Vec<(Vec<Descriptors>, Option<Descriptors>)> = patches
            .par_iter()
            .enumerate()
            .map(|(i, b)| {
                let p = prepare_patch(b, config.rectify, geometry)?;
                let mut r = Responses::new(plan.as_ref());
                let subsets = kinds
                    .iter()
                    .map(|&kind| {
                        let budget = config.texton_samples.div_ceil(counts[labels[i]]);
                        let seed = mix_seed(mix_seed(config.seed, STREAM_DICT + kind as u64), i as u64);
                        Ok(subsample(&r.pixels(kind, &p, config.normal_alpha)?, budget, seed))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let sift = if use_sift {
                    let set = r.sift(&p, &sift_cfg)?;
                    let seed = mix_seed(mix_seed(config.seed, STREAM_SIFT), i as u64);
                    Some(subsample(&set.descriptors, sift_budget, seed))
                } else {
                    None
                };
                Ok((subsets, sift))
            })
            .collect::<Result<_>>()?;

        let mut out = Artifacts::default();
        for (j, &kind) in kinds.iter().enumerate() {
            let per_class = (0..num_classes)
                .map(|c| {
                    let rows: Vec<Descriptors> = collected
                        .iter()
                        .zip(&labels)
                        .filter(|(_, &l)| l == c)
                        .map(|(s, _)| s.0[j].clone())
                        .collect();
                    let all = stack_rows(&rows, kind.dim())?;
                    Ok(subsample(&all, config.texton_samples, mix_seed(config.seed, STREAM_DICT + 50 + kind as u64)))
                })
                .collect::<Result<Vec<_>>>()?;
            let dict = build_dictionary(&per_class, kind.default_k(), kind, mix_seed(config.seed, STREAM_DICT + kind as u64))?;
            debug!("{} dictionary: {} centers", kind.name(), dict.len());
            out.dictionaries.insert(kind, dict.quantized());
        }

        if use_sift {
            let raw: Vec<Descriptors> = collected.into_iter().filter_map(|c| c.1).collect();
            let raw = stack_rows(&raw, crate::fisher::SIFT_DIM)?;
            let raw = subsample(&raw, config.pca_samples, mix_seed(config.seed, STREAM_PCA));
            let pca = pca_fit(&raw, config.pca_dim)?.quantized();
            info!("PCA {} -> {} from {} descriptors", pca.in_dim(), pca.out_dim(), raw.len());

            // Second pass: reduced (and normal-augmented) descriptors for the mixtures.
            let gmm_budget = config.gmm_samples.div_ceil(patches.len());
            let want_fv = wants(config, FeatureKind::Fv);
            let reduced: Vec<(Option<Descriptors>, Option<Descriptors>)> = patches
                .par_iter()
                .enumerate()
                .map(|(i, b)| {
                    let p = prepare_patch(b, config.rectify, geometry)?;
                    let mut r = Responses::new(None);
                    let set = r.sift(&p, &sift_cfg)?;
                    let red = pca.apply(&set.descriptors)?;
                    let fv = if want_fv {
                        Some(subsample(&red, gmm_budget, mix_seed(mix_seed(config.seed, STREAM_GMM_FV), i as u64)))
                    } else {
                        None
                    };
                    let fvn = if want_fvn {
                        let n = need(&p.texture_normals, "normal map")?;
                        let aug = fvn_descriptors(&red, n, &set.locations)?;
                        Some(subsample(&aug, gmm_budget, mix_seed(mix_seed(config.seed, STREAM_GMM_FVN), i as u64)))
                    } else {
                        None
                    };
                    Ok((fv, fvn))
                })
                .collect::<Result<_>>()?;
            let gcfg = gmm_config(config);
            if want_fv {
                let rows: Vec<Descriptors> = reduced.iter().filter_map(|r| r.0.clone()).collect();
                let data = subsample(&stack_rows(&rows, pca.out_dim())?, config.gmm_samples, mix_seed(config.seed, STREAM_GMM_FV));
                let fit = gmm_fit_em(&data, config.gmm_modes, mix_seed(config.seed, STREAM_GMM_FV), &gcfg)?;
                info!("FV mixture: {} modes, {} iterations", config.gmm_modes, fit.iterations);
                out.gmm_fv = Some(fit.model.quantized());
            }
            if want_fvn {
                let rows: Vec<Descriptors> = reduced.iter().filter_map(|r| r.1.clone()).collect();
                let data =
                    subsample(&stack_rows(&rows, pca.out_dim() + 3)?, config.gmm_samples, mix_seed(config.seed, STREAM_GMM_FVN));
                let fit = gmm_fit_em(&data, config.gmm_modes, mix_seed(config.seed, STREAM_GMM_FVN), &gcfg)?;
                info!("FV-N mixture: {} modes, {} iterations", config.gmm_modes, fit.iterations);
                out.gmm_fvn = Some(fit.model.quantized());
            }
            out.pca = Some(pca);
        }
        Ok(out)
    }

    /// File names this set of artifacts writes.
    pub fn file_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.dictionaries.keys().map(|k| format!("dict_{}.bin", k.name())).collect();
        if self.pca.is_some() {
            names.push("pca.bin".into());
        }
        if self.gmm_fv.is_some() {
            names.push("gmm_fv.bin".into());
        }
        if self.gmm_fvn.is_some() {
            names.push("gmm_fvn.bin".into());
        }
        names
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for (kind, dict) in &self.dictionaries {
            write_binary(&dir.join(format!("dict_{}.bin", kind.name())), |w| dict.write(w))?;
        }
        if let Some(pca) = &self.pca {
            write_binary(&dir.join("pca.bin"), |w| pca.write(w))?;
        }
        if let Some(g) = &self.gmm_fv {
            write_binary(&dir.join("gmm_fv.bin"), |w| g.write(w))?;
        }
        if let Some(g) = &self.gmm_fvn {
            write_binary(&dir.join("gmm_fvn.bin"), |w| g.write(w))?;
        }
        Ok(())
    }

    /// Load the artifacts `config` needs from `dir`.
    pub fn load(dir: &Path, config: &RunConfig) -> Result<Self> {
        let mut out = Artifacts::default();
        for kind in texton_kinds(config) {
            let dict = read_binary(&dir.join(format!("dict_{}.bin", kind.name())), |r| TextonDictionary::read(r))?;
            if dict.kind() != kind {
                return Err(Error::format("dictionary", format!("expected {} centers", kind.name())));
            }
            out.dictionaries.insert(kind, dict);
        }
        if needs_sift(config) {
            out.pca = Some(read_binary(&dir.join("pca.bin"), |r| PcaModel::read(r))?);
        }
        if wants(config, FeatureKind::Fv) {
            out.gmm_fv = Some(read_binary(&dir.join("gmm_fv.bin"), |r| GmmModel::read(r))?);
        }
        if wants(config, FeatureKind::FvN) {
            out.gmm_fvn = Some(read_binary(&dir.join("gmm_fvn.bin"), |r| GmmModel::read(r))?);
        }
        Ok(out)
    }
}

pub(crate) fn write_binary(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_binary<T>(path: &Path, f: impl FnOnce(&mut BufReader<File>) -> Result<T>) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    f(&mut BufReader::new(file))
}

pub(crate) fn patch_labels(patches: &[PatchBundle], num_classes: usize) -> Result<Vec<usize>> {
    patches
        .iter()
        .map(|b| match b.category {
            Some(c) if c < num_classes => Ok(c),
            Some(c) => Err(Error::invalid(format!("patch category {c} out of range"))),
            None => Err(Error::invalid(format!("patch from surface {} has no category", b.surface))),
        })
        .collect()
}

/// Per-patch embedding file name inside the embeddings directory.
pub fn embedding_file_name(bundle: &PatchBundle) -> String {
    let r = bundle.rect;
    format!("s{:03}_i{:02}_x{}_y{}_w{}_h{}.feat", bundle.surface, bundle.image, r.x, r.y, r.width, r.height)
}

fn read_embedding(dir: &Path, bundle: &PatchBundle) -> Result<Vec<f64>> {
    let path: PathBuf = dir.join(embedding_file_name(bundle));
    let (spec, parts) = read_binary(&path, |r| read_feature_cache_any(r))?;
    if spec.parts().len() != 1 || spec.parts()[0].kind != PartKind::Vector {
        return Err(Error::format("embedding", format!("{} must hold exactly one vector part", path.display())));
    }
    Ok(parts.into_iter().next().unwrap())
}

/// Features of one patch, in configured feature order.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchFeatures {
    pub parts: Vec<Vec<f64>>,
    pub incidence: Option<f64>,
    pub scale: u32,
}

/// Turns patches into feature parts with fitted artifacts.
pub struct FeatureExtractor<'a> {
    config: &'a RunConfig,
    artifacts: &'a Artifacts,
    plan: Option<FilterPlan>,
    sift: SiftConfig,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(config: &'a RunConfig, artifacts: &'a Artifacts) -> Result<Self> {
        Ok(Self { config, artifacts, plan: filter_plan(config)?, sift: SiftConfig::from(&config.sift) })
    }

    fn dict(&self, kind: DescriptorKind) -> Result<&TextonDictionary> {
        self.artifacts
            .dictionaries
            .get(&kind)
            .ok_or_else(|| Error::MissingData(format!("no {} dictionary", kind.name())))
    }

    pub fn extract(&self, bundle: &PatchBundle) -> Result<PatchFeatures> {
        let p = prepare_patch(bundle, self.config.rectify, self.config.needs_geometry())?;
        let mut r = Responses::new(self.plan.as_ref());
        let mut parts = Vec::with_capacity(self.config.features.len());
        for &f in &self.config.features {
            let v = match f {
                FeatureKind::Fv | FeatureKind::FvN => {
                    let pca = need(&self.artifacts.pca, "PCA model")?;
                    let set = r.sift(&p, &self.sift)?;
                    let red = pca.apply(&set.descriptors)?;
                    if f == FeatureKind::Fv {
                        encode_ifv(&red, need(&self.artifacts.gmm_fv, "FV mixture")?)?.values
                    } else {
                        let aug = fvn_descriptors(&red, need(&p.texture_normals, "normal map")?, &set.locations)?;
                        encode_ifv(&aug, need(&self.artifacts.gmm_fvn, "FV-N mixture")?)?.values
                    }
                }
                FeatureKind::Emb => {
                    let dir = self.config.embeddings.as_deref().ok_or_else(|| Error::invalid("no embeddings directory"))?;
                    read_embedding(dir, bundle)?
                }
                _ => {
                    let kind = f.texton_kind().unwrap();
                    encode_histogram(&r.pixels(kind, &p, self.config.normal_alpha)?, self.dict(kind)?)?.bins
                }
            };
            parts.push(v);
        }
        Ok(PatchFeatures { parts, incidence: p.incidence, scale: bundle.source_scale() })
    }

    pub fn extract_all(&self, bundles: &[PatchBundle]) -> Result<Vec<PatchFeatures>> {
        bundles.par_iter().map(|b| self.extract(b)).collect()
    }

    /// Part table for features extracted by this extractor.
    pub fn spec(&self, sample: &PatchFeatures) -> Result<FeatureSetSpec> {
        feature_spec(&self.config.features, sample)
    }
}

/// Part table naming each part after its feature.
pub fn feature_spec(features: &[FeatureKind], sample: &PatchFeatures) -> Result<FeatureSetSpec> {
    if sample.parts.len() != features.len() {
        return Err(Error::invalid("feature list and extracted parts differ in length"));
    }
    FeatureSetSpec::new(
        features
            .iter()
            .zip(&sample.parts)
            .map(|(f, v)| {
                if f.is_histogram() {
                    FeaturePart::histogram(f.name(), v.len())
                } else {
                    FeaturePart::vector(f.name(), v.len())
                }
            })
            .collect(),
    )
}
