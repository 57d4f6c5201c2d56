use std::f64::consts::{PI, TAU};
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::RgbImage;
use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{Category, Manifest, SceneImage, SceneRecord, Surface, SurfaceImage};
use super::polygon::clip_polygon_to_rect;
use super::sampling::split_by_surface_keyed;
use super::texture::{Albedo, HeightField, Wave};
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::geometry::{NormalSample, SparseNormalMap};
use crate::scene::{write_ply, PlyVertex};
use crate::textons::mix_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextureSpec {
    /// Smoothed sinusoidal stripes with a noisy wobble. Each surface draws a
    /// wavelength from the range, a random angle and phase, and one
    /// two-color palette.
    Stripes {
        wavelength: [f64; 2],
        waviness: f64,
        grain: f64,
        palettes: Vec<[[u8; 3]; 2]>,
    },
    /// Thresholded fractal noise at a feature size drawn from `scale`.
    Blobs {
        scale: [f64; 2],
        grain: f64,
        palettes: Vec<[[u8; 3]; 2]>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeometrySpec {
    Flat,
    /// `z = A sin(2 pi x' / wavelength)` along a direction `x'` at
    /// `angle_deg`, random per surface when absent.
    Corrugated {
        amplitude: f64,
        wavelength: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        angle_deg: Option<f64>,
    },
    /// Random sum of `components` sinusoids.
    Bumps {
        amplitude: f64,
        wavelength: f64,
        components: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightingSpec {
    pub direction: [f64; 3],
    pub ambient: f64,
    pub diffuse: f64,
}

impl Default for LightingSpec {
    fn default() -> Self {
        Self { direction: [0.3, -0.4, 1.0], ambient: 1.0, diffuse: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewPose {
    pub incidence_deg: f64,
    pub azimuth_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthClass {
    pub name: String,
    pub texture: TextureSpec,
    pub geometry: GeometrySpec,
    pub surfaces: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    /// Class index of each vertical band, left to right. Bands whose classes
    /// share a texture spec share one continuous texture field.
    pub bands: Vec<usize>,
    pub superpixels: usize,
    /// Cloud point spacing in world units.
    pub point_spacing: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub image_size: u32,
    pub focal: f64,
    /// Camera distance from the surface origin.
    pub distance: f64,
    /// Half side of the labeled square on each surface, in world units.
    pub region_half_size: f64,
    pub supersample: u32,
    /// Pixel spacing of the emitted sparse normals.
    pub normal_step: u32,
    pub train_fraction: f64,
    #[serde(default)]
    pub lighting: LightingSpec,
    pub views: Vec<ViewPose>,
    pub classes: Vec<SynthClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneSpec>,
}

impl SynthSpec {
    /// Four classes forming two texture-identical pairs that differ only in
    /// surface geometry. One palette per texture: with three training
    /// surfaces a class would otherwise meet unseen colors at test time.
    pub fn benchmark() -> Self {
        let stripes = TextureSpec::Stripes {
            wavelength: [14.0, 26.0],
            waviness: 0.6,
            grain: 0.15,
            palettes: vec![[[40, 60, 140], [220, 200, 120]]],
        };
        let blobs = TextureSpec::Blobs {
            scale: [14.0, 26.0],
            grain: 0.15,
            palettes: vec![[[90, 60, 30], [210, 170, 110]]],
        };
        // About 34 degrees of peak slope.
        let corrugated = GeometrySpec::Corrugated { amplitude: 7.0, wavelength: 64.0, angle_deg: None };
        let class = |name: &str, texture: &TextureSpec, geometry: &GeometrySpec| SynthClass {
            name: name.into(),
            texture: texture.clone(),
            geometry: geometry.clone(),
            surfaces: 4,
        };
        let views = [0.0, 15.0, 30.0]
            .iter()
            .flat_map(|&incidence_deg| {
                [0.0, 120.0, 240.0].map(|azimuth_deg| ViewPose { incidence_deg, azimuth_deg })
            })
            .collect();
        Self {
            seed: 7,
            image_size: 560,
            focal: 1000.0,
            distance: 1000.0,
            region_half_size: 260.0,
            supersample: 1,
            normal_step: 5,
            train_fraction: 0.7,
            lighting: LightingSpec::default(),
            views,
            classes: vec![
                class("stripes_flat", &stripes, &GeometrySpec::Flat),
                class("stripes_corrugated", &stripes, &corrugated),
                class("blobs_flat", &blobs, &GeometrySpec::Flat),
                class("blobs_corrugated", &blobs, &corrugated),
            ],
            scene: Some(SceneSpec {
                width: 3000,
                height: 1000,
                bands: vec![0, 1, 2],
                superpixels: 300,
                point_spacing: 4.0,
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::invalid("synth spec has no classes"));
        }
        if self.views.is_empty() {
            return Err(Error::invalid("synth spec has no camera poses"));
        }
        if self.image_size == 0 || self.supersample == 0 || self.normal_step == 0 {
            return Err(Error::invalid("image size, supersampling and normal step must be positive"));
        }
        if !(self.focal > 0.0 && self.distance > 0.0 && self.region_half_size > 0.0) {
            return Err(Error::invalid("focal length, distance and region size must be positive"));
        }
        for c in &self.classes {
            if c.surfaces < 2 {
                return Err(Error::invalid(format!("class '{}' needs at least 2 surfaces", c.name)));
            }
            let palettes = match &c.texture {
                TextureSpec::Stripes { wavelength: r, palettes, .. } | TextureSpec::Blobs { scale: r, palettes, .. } => {
                    if !(r[0] > 0.0 && r[0] <= r[1]) {
                        return Err(Error::invalid(format!("class '{}' has an invalid size range", c.name)));
                    }
                    palettes
                }
            };
            if palettes.is_empty() {
                return Err(Error::invalid(format!("class '{}' has no palette", c.name)));
            }
            match c.geometry {
                GeometrySpec::Corrugated { wavelength, .. } | GeometrySpec::Bumps { wavelength, .. } if wavelength <= 0.0 => {
                    return Err(Error::invalid(format!("class '{}' has a non-positive wavelength", c.name)));
                }
                GeometrySpec::Bumps { components: 0, .. } => {
                    return Err(Error::invalid(format!("class '{}' has no bump components", c.name)));
                }
                _ => {}
            }
        }
        if let Some(scene) = &self.scene {
            if scene.bands.is_empty() || scene.bands.iter().any(|&b| b >= self.classes.len()) {
                return Err(Error::invalid("scene bands must name existing classes"));
            }
            if scene.width == 0 || scene.height == 0 || scene.superpixels == 0 || scene.point_spacing <= 0.0 {
                return Err(Error::invalid("scene dimensions, superpixels and point spacing must be positive"));
            }
        }
        Ok(())
    }

    /// Camera on the upper hemisphere at the given incidence and azimuth,
    /// looking at the surface origin.
    pub fn view_camera(&self, pose: &ViewPose, width: u32, height: u32) -> Result<CameraModel> {
        if !(0.0..89.0).contains(&pose.incidence_deg) {
            return Err(Error::invalid(format!(
                "incidence {} deg puts the surface behind or edge-on to the camera",
                pose.incidence_deg
            )));
        }
        let (t, p) = (pose.incidence_deg.to_radians(), pose.azimuth_deg.to_radians());
        let center = Point3::new(t.sin() * p.cos(), t.sin() * p.sin(), t.cos()) * self.distance;
        let k = CameraModel::intrinsics(
            self.focal,
            self.focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
        );
        CameraModel::look_at(k, center, Point3::origin(), Vector3::new(-p.sin(), p.cos(), 0.0), width, height)
    }
}

fn color(c: [u8; 3]) -> [f64; 3] {
    c.map(|v| v as f64 / 255.0)
}

fn sample_albedo(spec: &TextureSpec, rng: &mut ChaCha8Rng) -> Albedo {
    match spec {
        TextureSpec::Stripes { wavelength, waviness, grain, palettes } => {
            let p = palettes[rng.random_range(0..palettes.len())];
            Albedo::Stripes {
                wavelength: rng.random_range(wavelength[0]..=wavelength[1]),
                angle: rng.random_range(0.0..PI),
                phase: rng.random_range(0.0..1.0),
                waviness: *waviness,
                grain: *grain,
                colors: [color(p[0]), color(p[1])],
                seed: rng.random(),
            }
        }
        TextureSpec::Blobs { scale, grain, palettes } => {
            let p = palettes[rng.random_range(0..palettes.len())];
            Albedo::Blobs {
                scale: rng.random_range(scale[0]..=scale[1]),
                grain: *grain,
                colors: [color(p[0]), color(p[1])],
                seed: rng.random(),
            }
        }
    }
}

fn sample_height(spec: &GeometrySpec, rng: &mut ChaCha8Rng) -> HeightField {
    match *spec {
        GeometrySpec::Flat => HeightField::Flat,
        GeometrySpec::Corrugated { amplitude, wavelength, angle_deg } => {
            let a = angle_deg.map(f64::to_radians).unwrap_or_else(|| rng.random_range(0.0..PI));
            let k = TAU / wavelength;
            HeightField::Waves(vec![Wave { amplitude, k: [k * a.cos(), k * a.sin()], phase: 0.0 }])
        }
        GeometrySpec::Bumps { amplitude, wavelength, components } => {
            let amp = amplitude / (components as f64).sqrt();
            HeightField::Waves(
                (0..components)
                    .map(|_| {
                        let a = rng.random_range(0.0..TAU);
                        let k = TAU / (wavelength * rng.random_range(0.7..1.3));
                        Wave { amplitude: amp, k: [k * a.cos(), k * a.sin()], phase: rng.random_range(0.0..TAU) }
                    })
                    .collect(),
            )
        }
    }
}

/// One physical surface: an albedo pattern painted on the base plane plus a
/// height field that only contributes normals.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceInstance {
    albedo: Albedo,
    height: HeightField,
}

impl SurfaceInstance {
    pub fn sample(class: &SynthClass, seed: u64) -> Self {
        Self::sample_split(class, seed, seed)
    }

    /// Albedo and height drawn from separate streams, so surfaces sharing an
    /// albedo seed and texture spec carry the same pattern.
    pub fn sample_split(class: &SynthClass, albedo_seed: u64, height_seed: u64) -> Self {
        let albedo = sample_albedo(&class.texture, &mut ChaCha8Rng::seed_from_u64(albedo_seed));
        let height = sample_height(&class.geometry, &mut ChaCha8Rng::seed_from_u64(height_seed));
        Self { albedo, height }
    }

    pub fn albedo(&self, x: f64, y: f64) -> [f64; 3] {
        self.albedo.eval(x, y)
    }

    /// World-frame unit normal facing +z.
    pub fn normal(&self, x: f64, y: f64) -> Vector3<f64> {
        self.height.normal(x, y)
    }
}

/// Closed-form normal of `z = A sin(2 pi x / wavelength)`.
pub fn corrugation_normal(amplitude: f64, wavelength: f64, x: f64) -> Vector3<f64> {
    let k = TAU / wavelength;
    Vector3::new(-amplitude * k * (k * x).cos(), 0.0, 1.0).normalize()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub rgb: RgbImage,
    /// World-frame normals on a regular pixel grid.
    pub normals: SparseNormalMap,
}

/// World point on the base plane seen through pixel `(u, v)`.
fn ray_to_plane(cam: &CameraModel, kinv: &nalgebra::Matrix3<f64>, c: &Point3<f64>, u: f64, v: f64) -> Option<(f64, f64)> {
    let d = cam.r().transpose() * (kinv * Vector3::new(u, v, 1.0));
    if d.z >= 0.0 {
        return None;
    }
    let t = -c.z / d.z;
    Some((c.x + t * d.x, c.y + t * d.y))
}

const BACKGROUND: [u8; 3] = [128, 128, 128];

/// Render a surface (given as albedo and normal per plane point) from a
/// camera with Lambertian shading and `ss x ss` supersampling.
pub fn render_view(
    albedo: &(dyn Fn(f64, f64) -> [f64; 3] + Sync),
    normal: &(dyn Fn(f64, f64) -> Vector3<f64> + Sync),
    cam: &CameraModel,
    lighting: &LightingSpec,
    supersample: u32,
    normal_step: u32,
) -> Result<RenderedView> {
    let c = cam.center();
    if c.z <= 0.0 {
        return Err(Error::invalid("camera is not above the surface"));
    }
    if supersample == 0 || normal_step == 0 {
        return Err(Error::invalid("supersampling and normal step must be positive"));
    }
    let kinv = cam.k().try_inverse().expect("intrinsics are invertible");
    let light = Vector3::from(lighting.direction);
    let light = if light.norm() > 0.0 { light.normalize() } else { Vector3::z() };
    let (w, h) = (cam.width(), cam.height());
    let ss = supersample as usize;
    let offsets: Vec<f64> = (0..ss).map(|i| (i as f64 + 0.5) / ss as f64 - 0.5).collect();
    let rows: Vec<Vec<u8>> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut row = Vec::with_capacity(3 * w as usize);
            for u in 0..w {
                let mut acc = [0.0; 3];
                let mut hits = 0usize;
                for &dy in &offsets {
                    for &dx in &offsets {
                        if let Some((x, y)) = ray_to_plane(cam, &kinv, &c, u as f64 + dx, v as f64 + dy) {
                            let a = albedo(x, y);
                            let shade = if lighting.diffuse != 0.0 {
                                lighting.ambient + lighting.diffuse * normal(x, y).dot(&light).max(0.0)
                            } else {
                                lighting.ambient
                            };
                            for ch in 0..3 {
                                acc[ch] += a[ch] * shade;
                            }
                            hits += 1;
                        }
                    }
                }
                if hits == 0 {
                    row.extend_from_slice(&BACKGROUND);
                } else {
                    for a in acc {
                        row.push((a / hits as f64 * 255.0).round().clamp(0.0, 255.0) as u8);
                    }
                }
            }
            row
        })
        .collect();
    let rgb = RgbImage::from_raw(w, h, rows.concat()).expect("buffer matches image size");

    let mut samples = Vec::new();
    for v in (0..h).step_by(normal_step as usize) {
        for u in (0..w).step_by(normal_step as usize) {
            if let Some((x, y)) = ray_to_plane(cam, &kinv, &c, u as f64, v as f64) {
                samples.push(NormalSample { u: u as f64, v: v as f64, n: normal(x, y) });
            }
        }
    }
    Ok(RenderedView { rgb, normals: SparseNormalMap::new(samples)? })
}

/// Projection of the labeled square `[-h, h]^2` clipped to the image.
fn region_polygon(cam: &CameraModel, half: f64) -> Vec<[f64; 2]> {
    let corners = [[-half, -half], [half, -half], [half, half], [-half, half]];
    let projected: Vec<[f64; 2]> = corners
        .iter()
        .filter_map(|&[x, y]| cam.project(&Point3::new(x, y, 0.0)).map(|(u, v, _)| [u, v]))
        .collect();
    if projected.len() < 4 {
        return Vec::new();
    }
    let (w, h) = (cam.width() as f64, cam.height() as f64);
    clip_polygon_to_rect(&projected, -0.5, -0.5, w - 0.5, h - 0.5)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let encoder = PngEncoder::new_with_quality(BufWriter::new(file), CompressionType::Fast, FilterType::Adaptive);
    img.write_with_encoder(encoder).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Render every surface of every class from every pose, plus the optional
/// scene, into `out_dir`, and write `manifest.json` there.
pub fn synth_generate(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let cams: Vec<CameraModel> = spec
        .views
        .iter()
        .map(|p| spec.view_camera(p, spec.image_size, spec.image_size))
        .collect::<Result<_>>()?;
    let regions: Vec<Vec<[f64; 2]>> = cams.iter().map(|c| region_polygon(c, spec.region_half_size)).collect();
    if regions.iter().any(|r| r.len() < 3) {
        return Err(Error::invalid("labeled region does not project into the image"));
    }
    create_dir(&out_dir.join("surfaces"))?;

    // Classes with equal texture specs form a group; the k-th surface of every
    // class in a group shares one albedo, so only geometry tells them apart.
    let groups: Vec<u64> = spec
        .classes
        .iter()
        .map(|c| spec.classes.iter().position(|o| o.texture == c.texture).unwrap() as u64)
        .collect();
    let jobs: Vec<(usize, usize, usize)> = spec
        .classes
        .iter()
        .enumerate()
        .flat_map(|(c, class)| (0..class.surfaces).map(move |k| (c, k)))
        .enumerate()
        .map(|(id, (c, k))| (id, c, k))
        .collect();
    let surfaces: Vec<Surface> = jobs
        .par_iter()
        .map(|&(id, category, k)| {
            let albedo_seed = mix_seed(mix_seed(spec.seed, 1 << 32 | groups[category]), k as u64);
            let inst = SurfaceInstance::sample_split(&spec.classes[category], albedo_seed, mix_seed(spec.seed, id as u64));
            let rel_dir = format!("surfaces/s{id:03}");
            create_dir(&out_dir.join(&rel_dir))?;
            let mut images = Vec::with_capacity(cams.len());
            for (j, (cam, region)) in cams.iter().zip(&regions).enumerate() {
                let view = render_view(
                    &|x, y| inst.albedo(x, y),
                    &|x, y| inst.normal(x, y),
                    cam,
                    &spec.lighting,
                    spec.supersample,
                    spec.normal_step,
                )?;
                let stem = format!("{rel_dir}/v{j:02}");
                let record = SurfaceImage {
                    image: format!("{stem}.png"),
                    camera: format!("{stem}.cam"),
                    normals: Some(format!("{stem}.nrm")),
                    regions: vec![region.clone()],
                };
                write_png(&out_dir.join(&record.image), &view.rgb)?;
                write_file(&out_dir.join(&record.camera), &cam.to_text())?;
                write_file(&out_dir.join(record.normals.as_ref().unwrap()), &view.normals.to_text())?;
                images.push(record);
            }
            Ok(Surface { id, category, marker_scale: None, images })
        })
        .collect::<Result<_>>()?;

    let categories = spec
        .classes
        .iter()
        .enumerate()
        .map(|(id, c)| Category { id, name: c.name.clone() })
        .collect();
    let mut manifest = Manifest::new(categories, surfaces)?;
    manifest.split = Some(split_by_surface_keyed(&manifest, spec.train_fraction, spec.seed, &groups)?);
    if let Some(scene) = &spec.scene {
        manifest.scenes.push(generate_scene(spec, scene, out_dir)?);
    }
    manifest.set_base_dir(out_dir);
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Frontal view of side-by-side bands plus a labeled cloud sampled on the
/// base plane.
fn generate_scene(spec: &SynthSpec, scene: &SceneSpec, out_dir: &Path) -> Result<SceneRecord> {
    let dir = out_dir.join("scene");
    create_dir(&dir)?;
    let pose = ViewPose { incidence_deg: 0.0, azimuth_deg: 0.0 };
    let cam = spec.view_camera(&pose, scene.width, scene.height)?;
    let world_per_px = spec.distance / spec.focal;
    let half_w = scene.width as f64 / 2.0 * world_per_px;
    let half_h = scene.height as f64 / 2.0 * world_per_px;
    let band_w = 2.0 * half_w / scene.bands.len() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, u64::MAX));
    let mut textures: Vec<(TextureSpec, Albedo)> = Vec::new();
    let mut bands: Vec<(Albedo, HeightField)> = Vec::new();
    for &b in &scene.bands {
        let class = &spec.classes[b];
        let albedo = match textures.iter().find(|(t, _)| *t == class.texture) {
            Some((_, a)) => a.clone(),
            None => {
                let a = sample_albedo(&class.texture, &mut rng);
                textures.push((class.texture.clone(), a.clone()));
                a
            }
        };
        bands.push((albedo, sample_height(&class.geometry, &mut rng)));
    }
    let band_at = |x: f64| (((x + half_w) / band_w).floor().max(0.0) as usize).min(bands.len() - 1);

    let view = render_view(
        &|x, y| bands[band_at(x)].0.eval(x, y),
        &|x, y| bands[band_at(x)].1.normal(x, y),
        &cam,
        &spec.lighting,
        spec.supersample,
        spec.normal_step,
    )?;
    write_png(&dir.join("scene.png"), &view.rgb)?;
    write_file(&dir.join("scene.cam"), &cam.to_text())?;

    let sp = scene.point_spacing;
    let (nx, ny) = ((2.0 * half_w / sp).floor() as usize, (2.0 * half_h / sp).floor() as usize);
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = -half_w + (i as f64 + 0.5) * sp;
            let y = -half_h + (j as f64 + 0.5) * sp;
            let b = band_at(x);
            vertices.push(PlyVertex {
                p: Point3::new(x, y, 0.0),
                n: Some(bands[b].1.normal(x, y)),
                label: scene.bands[b] as i32,
            });
        }
    }
    let ply_path = dir.join("scene.ply");
    let file = fs::File::create(&ply_path).map_err(|e| Error::io(&ply_path, e))?;
    let mut out = BufWriter::new(file);
    write_ply(&mut out, &vertices)
        .and_then(|_| std::io::Write::flush(&mut out))
        .map_err(|e| Error::io(&ply_path, e))?;

    Ok(SceneRecord {
        name: "scene".into(),
        cloud: "scene/scene.ply".into(),
        images: vec![SceneImage { image: "scene/scene.png".into(), camera: "scene/scene.cam".into() }],
        superpixels: scene.superpixels,
    })
}
