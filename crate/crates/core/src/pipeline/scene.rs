use std::fs;
use std::io::BufReader;
use std::path::Path;

use image::RgbImage;
use log::{info, warn};

use super::model::TrainedModel;
use crate::camera::CameraModel;
use crate::dataset::{Manifest, SceneRecord};
use crate::error::{Error, Result};
use crate::geometry::{NormalSample, SparseNormalMap};
use crate::scene::{
    backproject_point_labels, evaluate_pixel_accuracy, read_ply, slic_segment, superpixel_patch, LabeledPoint,
    PixelAccuracy, PixelTally, PlyVertex, SuperpixelMap,
};

/// Fewer labeled pixels than this in one image suggests a camera that is not
/// registered to the cloud.
pub const MIN_GT_PIXELS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSettings {
    /// Superpixel target; `None` uses each scene's recorded count.
    pub superpixels: Option<usize>,
    pub compactness: f64,
}

impl Default for SceneSettings {
    fn default() -> Self {
        Self { superpixels: None, compactness: 10.0 }
    }
}

/// Label given to superpixels too thin to classify.
pub const SKIPPED: usize = usize::MAX;

#[derive(Clone, Debug)]
pub struct SceneImageResult {
    pub scene: String,
    pub image: usize,
    pub map: SuperpixelMap,
    /// Predicted category per superpixel, [`SKIPPED`] where none was made.
    pub labels: Vec<usize>,
    /// Largest one-vs-all decision value per superpixel.
    pub confidences: Vec<Option<f64>>,
    pub gt_pixels: usize,
    /// `None` when no labeled point lands in the image.
    pub tally: Option<PixelTally>,
}

#[derive(Clone, Debug)]
pub struct SceneEvaluation {
    pub categories: Vec<String>,
    pub images: Vec<SceneImageResult>,
    pub tally: PixelTally,
    pub accuracy: PixelAccuracy,
}

/// Ground truth and normal samples from projecting the cloud into `cam`.
pub fn project_cloud(cloud: &[PlyVertex], cam: &CameraModel, num_classes: usize) -> (crate::scene::SparseLabelImage, SparseNormalMap) {
    let points: Vec<LabeledPoint> =
        cloud.iter().enumerate().map(|(i, v)| LabeledPoint { p: v.p, label: Some(i) }).collect();
    let mut gt = backproject_point_labels(&points, cam);
    let mut samples = Vec::new();
    for px in &mut gt.pixels {
        let v = &cloud[px.label.unwrap()];
        if let Some(n) = v.n {
            if n.norm() > 0.0 {
                samples.push(NormalSample { u: px.uv.0, v: px.uv.1, n: n.normalize() });
            }
        }
        px.label = usize::try_from(v.label).ok().filter(|&l| l < num_classes);
    }
    (gt, SparseNormalMap::new(samples).expect("projected normals are finite"))
}

/// Segment one scene image, classify every superpixel and score it against
/// the back-projected cloud labels.
pub fn evaluate_scene_image(
    model: &TrainedModel,
    rgb: &RgbImage,
    cam: &CameraModel,
    cloud: &[PlyVertex],
    n_superpixels: usize,
    compactness: f64,
) -> Result<(SuperpixelMap, Vec<usize>, Vec<Option<f64>>, crate::scene::SparseLabelImage)> {
    if (rgb.width(), rgb.height()) != (cam.width(), cam.height()) {
        return Err(Error::invalid(format!(
            "image is {}x{} but its camera is {}x{}",
            rgb.width(),
            rgb.height(),
            cam.width(),
            cam.height()
        )));
    }
    let k = model.categories.len();
    let (gt, normals) = project_cloud(cloud, cam, k);
    if normals.is_empty() && model.config.needs_geometry() {
        return Err(Error::invalid("the scene cloud gives no normals in this image but the model needs geometry"));
    }
    let map = slic_segment(rgb, n_superpixels, compactness)?;
    let mut ids = Vec::new();
    let mut patches = Vec::new();
    for id in 0..map.len() {
        if let Some(b) = superpixel_patch(rgb, &normals, cam, &map, id, 0)? {
            ids.push(id);
            patches.push(b);
        }
    }
    let mut labels = vec![SKIPPED; map.len()];
    let mut confidences = vec![None; map.len()];
    for (id, (_, p)) in ids.into_iter().zip(model.classify(&patches)?) {
        labels[id] = p.label;
        confidences[id] = p.scores.iter().copied().reduce(f64::max);
    }
    Ok((map, labels, confidences, gt))
}

/// Run every scene image in the manifest and pool the per-pixel counts.
pub fn evaluate_scenes(model: &TrainedModel, manifest: &Manifest, settings: &SceneSettings) -> Result<SceneEvaluation> {
    if manifest.scenes.is_empty() {
        return Err(Error::MissingData("the manifest lists no scenes".into()));
    }
    evaluate_scene_records(model, manifest.base_dir(), &manifest.scenes, settings)
}

/// As [`evaluate_scenes`] for scene records whose paths are relative to `base`.
pub fn evaluate_scene_records(
    model: &TrainedModel,
    base: &Path,
    scenes: &[SceneRecord],
    settings: &SceneSettings,
) -> Result<SceneEvaluation> {
    let k = model.categories.len();
    let mut images = Vec::new();
    let mut tally = PixelTally::new(k);
    for scene in scenes {
        let cloud_path = base.join(&scene.cloud);
        let file = fs::File::open(&cloud_path).map_err(|e| Error::io(&cloud_path, e))?;
        let cloud = read_ply(BufReader::new(file))?;
        for (i, view) in scene.images.iter().enumerate() {
            let img_path = base.join(&view.image);
            let rgb = image::open(&img_path)
                .map_err(|e| match e {
                    image::ImageError::IoError(io) => Error::io(&img_path, io),
                    other => Error::Image(other),
                })?
                .to_rgb8();
            let cam_path = base.join(&view.camera);
            let cam = CameraModel::from_text(&fs::read_to_string(&cam_path).map_err(|e| Error::io(&cam_path, e))?)?;
            let n_sp = settings.superpixels.unwrap_or(scene.superpixels);
            let (map, labels, confidences, gt) =
                evaluate_scene_image(model, &rgb, &cam, &cloud, n_sp, settings.compactness)?;
            let gt_pixels = gt.labeled();
            let image_tally = if gt_pixels == 0 {
                warn!("{} image {i}: no labeled points project into the image; excluded", scene.name);
                None
            } else {
                if gt_pixels < MIN_GT_PIXELS {
                    warn!("{} image {i}: only {gt_pixels} labeled pixels; is the camera registered to the cloud?", scene.name);
                }
                let t = evaluate_pixel_accuracy(&map, &labels, &gt, k)?;
                tally.merge(&t);
                Some(t)
            };
            info!("{} image {i}: {} superpixels, {gt_pixels} labeled pixels", scene.name, map.len());
            images.push(SceneImageResult {
                scene: scene.name.clone(),
                image: i,
                map,
                labels,
                confidences,
                gt_pixels,
                tally: image_tally,
            });
        }
    }
    let accuracy = tally.accuracy()?;
    Ok(SceneEvaluation { categories: model.categories.clone(), images, tally, accuracy })
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format("csv", format!("{other:?}")),
    }
}

impl SceneEvaluation {
    /// Index-map PNGs and per-superpixel CSVs per image, plus accuracy tables.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for r in &self.images {
            let stem = format!("{}_{:02}", r.scene, r.image);
            let values: Vec<u16> = r.labels.iter().map(|&l| if l == SKIPPED { u16::MAX } else { l as u16 }).collect();
            r.map.index_image(&values)?.save(dir.join(format!("{stem}_labels.png")))?;
            let path = dir.join(format!("{stem}_superpixels.csv"));
            let mut w = csv::Writer::from_path(&path).map_err(csv_error(&path))?;
            w.write_record(["id", "label", "category", "confidence"]).map_err(csv_error(&path))?;
            for (id, (&l, c)) in r.labels.iter().zip(&r.confidences).enumerate() {
                let (label, name) = if l == SKIPPED {
                    (String::new(), String::new())
                } else {
                    (l.to_string(), self.categories[l].clone())
                };
                w.write_record([id.to_string(), label, name, c.map(fmt).unwrap_or_default()])
                    .map_err(csv_error(&path))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }

        let path = dir.join("scene_accuracy.csv");
        let mut w = csv::Writer::from_path(&path).map_err(csv_error(&path))?;
        let mut head = vec!["scene".to_string(), "image".into(), "gt_pixels".into(), "class_mean".into(), "pixel_mean".into()];
        head.extend(self.categories.iter().cloned());
        w.write_record(&head).map_err(csv_error(&path))?;
        let mut record = |scene: String, image: String, acc: &PixelAccuracy| {
            let mut row = vec![scene, image, acc.counts.iter().sum::<u64>().to_string(), fmt(acc.class_mean), fmt(acc.pixel_mean)];
            row.extend(acc.per_class.iter().map(|v| v.map(fmt).unwrap_or_default()));
            w.write_record(&row).map_err(csv_error(&path))
        };
        for r in &self.images {
            if let Some(t) = &r.tally {
                record(r.scene.clone(), r.image.to_string(), &t.accuracy()?)?;
            }
        }
        record("all".into(), String::new(), &self.accuracy)?;
        w.flush().map_err(|e| Error::io(&path, e))
    }
}
