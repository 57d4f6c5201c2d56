use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::manifest::{Manifest, Split, SurfaceImage};
use super::polygon::square_inside_polygon;
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::geometry::SparseNormalMap;
use crate::patch::{extract_patch, PatchBundle, PatchRect};
use crate::textons::mix_seed;

/// Assign `round(train_fraction * n)` surfaces of every category to
/// training (at least one on each side) and the rest to testing.
pub fn split_by_surface(manifest: &Manifest, train_fraction: f64, seed: u64) -> Result<Split> {
    let keys: Vec<u64> = manifest.categories.iter().map(|c| c.id as u64).collect();
    split_by_surface_keyed(manifest, train_fraction, seed, &keys)
}

/// As [`split_by_surface`], with the shuffle of each category seeded by
/// `keys[category]`. Categories sharing a key and a surface count get the
/// same positional split.
pub fn split_by_surface_keyed(manifest: &Manifest, train_fraction: f64, seed: u64, keys: &[u64]) -> Result<Split> {
    if keys.len() != manifest.categories.len() {
        return Err(Error::invalid("one split key per category is required"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for cat in &manifest.categories {
        let mut ids: Vec<usize> = manifest.surfaces_of(cat.id).map(|s| s.id).collect();
        let n = ids.len();
        if n < 2 {
            return Err(Error::invalid(format!(
                "category '{}' has {n} surfaces; a split needs at least 2",
                cat.name
            )));
        }
        let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, keys[cat.id]));
        ids.shuffle(&mut rng);
        train.extend_from_slice(&ids[..n_train]);
        test.extend_from_slice(&ids[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { seed, train_fraction, train, test })
}

/// Patch counts per surface and, within each surface, per image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Allocation {
    pub per_surface: Vec<usize>,
    pub per_image: Vec<Vec<usize>>,
}

fn spread(total: usize, slots: &[bool]) -> Vec<usize> {
    let open = slots.iter().filter(|&&s| s).count();
    let mut out = vec![0; slots.len()];
    if open == 0 {
        return out;
    }
    let (base, mut extra) = (total / open, total % open);
    for (o, &s) in out.iter_mut().zip(slots) {
        if s {
            *o = base + usize::from(extra > 0);
            extra = extra.saturating_sub(1);
        }
    }
    out
}

/// Split `total` evenly across surfaces, then across each surface's usable
/// images. Remainders go one each to the earliest slots. Images marked
/// unusable get nothing; a surface with no usable image drops out.
pub fn allocate(total: usize, usable: &[Vec<bool>]) -> Allocation {
    let surface_open: Vec<bool> = usable.iter().map(|imgs| imgs.iter().any(|&u| u)).collect();
    let per_surface = spread(total, &surface_open);
    let per_image = per_surface
        .iter()
        .zip(usable)
        .map(|(&n, imgs)| spread(n, imgs))
        .collect();
    Allocation { per_surface, per_image }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRequest {
    /// Patches per category at every scale.
    pub per_category: usize,
    pub scales: Vec<u32>,
    pub seed: u64,
}

impl Default for SampleRequest {
    fn default() -> Self {
        Self { per_category: 100, scales: vec![100, 200, 400, 800], seed: 0 }
    }
}

/// Read the image, camera and (optional) normal file of one surface view.
pub fn load_view(manifest: &Manifest, view: &SurfaceImage) -> Result<(RgbImage, SparseNormalMap, CameraModel)> {
    let cam = load_camera(manifest, view)?;
    let path = manifest.resolve(&view.image);
    let rgb = image::open(&path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(&path, io),
            other => Error::Image(other),
        })?
        .to_rgb8();
    if rgb.dimensions() != (cam.width(), cam.height()) {
        return Err(Error::format(
            "camera file",
            format!("{} is {:?} but its camera says {}x{}", view.image, rgb.dimensions(), cam.width(), cam.height()),
        ));
    }
    let normals = match &view.normals {
        Some(rel) => {
            let path = manifest.resolve(rel);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            SparseNormalMap::from_text(&text)?
        }
        None => SparseNormalMap::default(),
    };
    Ok((rgb, normals, cam))
}

fn load_camera(manifest: &Manifest, view: &SurfaceImage) -> Result<CameraModel> {
    let path = manifest.resolve(&view.camera);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    CameraModel::from_text(&text)
}

/// Integer origins on a coarse grid whose `side`-pixel square lies inside
/// both the image and the polygon.
fn scan_origins(poly: &[[f64; 2]], width: u32, height: u32, side: u32) -> Vec<(u32, u32)> {
    if side > width || side > height || poly.len() < 3 {
        return Vec::new();
    }
    let step = (side / 20).max(1) as usize;
    let (lo, hi) = origin_bounds(poly, width, height, side);
    let mut out = Vec::new();
    for y in (lo.1..=hi.1).step_by(step) {
        for x in (lo.0..=hi.0).step_by(step) {
            if square_inside_polygon(poly, x as f64 - 0.5, y as f64 - 0.5, side as f64) {
                out.push((x, y));
            }
        }
    }
    out
}

fn origin_bounds(poly: &[[f64; 2]], width: u32, height: u32, side: u32) -> ((u32, u32), (u32, u32)) {
    let min_x = poly.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let min_y = poly.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let max_x = poly.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let max_y = poly.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let clamp = |v: f64, hi: u32| v.clamp(0.0, hi as f64) as u32;
    let (x_hi, y_hi) = (width - side, height - side);
    (
        (clamp((min_x + 0.5).ceil(), x_hi), clamp((min_y + 0.5).ceil(), y_hi)),
        (clamp((max_x + 0.5 - side as f64).floor(), x_hi), clamp((max_y + 0.5 - side as f64).floor(), y_hi)),
    )
}

const MAX_REJECTION_TRIES: usize = 1000;

/// Uniform origin within one region, falling back to the scanned grid when
/// rejection sampling keeps missing.
fn draw_origin(rng: &mut ChaCha8Rng, poly: &[[f64; 2]], scanned: &[(u32, u32)], w: u32, h: u32, side: u32) -> (u32, u32) {
    let (lo, hi) = origin_bounds(poly, w, h, side);
    if lo.0 <= hi.0 && lo.1 <= hi.1 {
        for _ in 0..MAX_REJECTION_TRIES {
            let x = rng.random_range(lo.0..=hi.0);
            let y = rng.random_range(lo.1..=hi.1);
            if square_inside_polygon(poly, x as f64 - 0.5, y as f64 - 0.5, side as f64) {
                return (x, y);
            }
        }
    }
    scanned[rng.random_range(0..scanned.len())]
}

struct ViewTask {
    surface: usize,
    image: usize,
    /// (scale index, count)
    counts: Vec<(usize, usize)>,
}

/// Multi-scale patches for the given surfaces. Each category receives
/// `per_category` patches at every scale, spread evenly across its surfaces
/// and their images; views whose regions cannot hold a scale are skipped with
/// a warning and their share goes to the others.
pub fn sample_patches(manifest: &Manifest, surfaces: &[usize], request: &SampleRequest) -> Result<Vec<PatchBundle>> {
    let mut surfaces = surfaces.to_vec();
    surfaces.sort_unstable();
    surfaces.dedup();
    if let Some(&bad) = surfaces.iter().find(|&&s| s >= manifest.surfaces.len()) {
        return Err(Error::invalid(format!("surface {bad} is not in the manifest")));
    }
    if request.scales.iter().any(|&s| s == 0) {
        return Err(Error::invalid("patch scale must be positive"));
    }

    // Feasibility per (surface, image, scale).
    let views: Vec<(usize, usize)> = surfaces
        .iter()
        .flat_map(|&s| (0..manifest.surfaces[s].images.len()).map(move |i| (s, i)))
        .collect();
    let feasible: Vec<Vec<bool>> = views
        .par_iter()
        .map(|&(s, i)| {
            let view = &manifest.surfaces[s].images[i];
            let cam = load_camera(manifest, view)?;
            Ok(request
                .scales
                .iter()
                .map(|&side| {
                    view.regions
                        .iter()
                        .any(|poly| !scan_origins(poly, cam.width(), cam.height(), side).is_empty())
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut tasks: Vec<ViewTask> = views
        .iter()
        .map(|&(surface, image)| ViewTask { surface, image, counts: Vec::new() })
        .collect();
    for cat in &manifest.categories {
        let cat_surfaces: Vec<usize> = surfaces
            .iter()
            .copied()
            .filter(|&s| manifest.surfaces[s].category == cat.id)
            .collect();
        if cat_surfaces.is_empty() {
            continue;
        }
        for (si, &side) in request.scales.iter().enumerate() {
            let usable: Vec<Vec<bool>> = cat_surfaces
                .iter()
                .map(|&s| {
                    views
                        .iter()
                        .zip(&feasible)
                        .filter(|((vs, _), _)| *vs == s)
                        .map(|(_, f)| f[si])
                        .collect()
                })
                .collect();
            for (&s, u) in cat_surfaces.iter().zip(&usable) {
                let skipped = u.iter().filter(|&&ok| !ok).count();
                if skipped > 0 {
                    log::warn!("surface {s}: {skipped} image(s) have no region that fits a {side}px patch");
                }
            }
            let alloc = allocate(request.per_category, &usable);
            if alloc.per_surface.iter().sum::<usize>() < request.per_category {
                log::warn!("category '{}': no region fits a {side}px patch", cat.name);
            }
            for (&s, counts) in cat_surfaces.iter().zip(&alloc.per_image) {
                for (i, &n) in counts.iter().enumerate() {
                    if n > 0 {
                        let task = tasks.iter_mut().find(|t| t.surface == s && t.image == i).unwrap();
                        task.counts.push((si, n));
                    }
                }
            }
        }
    }

    let per_view: Vec<Vec<PatchBundle>> = tasks
        .par_iter()
        .filter(|t| !t.counts.is_empty())
        .map(|t| sample_view(manifest, t, request))
        .collect::<Result<_>>()?;
    Ok(per_view.into_iter().flatten().collect())
}

fn sample_view(manifest: &Manifest, task: &ViewTask, request: &SampleRequest) -> Result<Vec<PatchBundle>> {
    let surface = &manifest.surfaces[task.surface];
    let view = &surface.images[task.image];
    let (rgb, normals, cam) = load_view(manifest, view)?;
    let (w, h) = (cam.width(), cam.height());
    let mut out = Vec::new();
    for &(si, count) in &task.counts {
        let side = request.scales[si];
        let stream = ((task.surface as u64) << 32) | ((task.image as u64) << 8) | si as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(request.seed, stream));
        let scanned: Vec<Vec<(u32, u32)>> = view.regions.iter().map(|p| scan_origins(p, w, h, side)).collect();
        let total: usize = scanned.iter().map(Vec::len).sum();
        for _ in 0..count {
            // Regions are chosen in proportion to their usable area.
            let mut pick = rng.random_range(0..total);
            let r = scanned.iter().position(|s| {
                if pick < s.len() {
                    true
                } else {
                    pick -= s.len();
                    false
                }
            });
            let r = r.expect("pick is below the total");
            let (x, y) = draw_origin(&mut rng, &view.regions[r], &scanned[r], w, h, side);
            let rect = PatchRect::square(x, y, side);
            let (patch, sparse, camera) = extract_patch(&rgb, &normals, &cam, rect)?;
            out.push(PatchBundle {
                rgb: patch,
                normals: sparse,
                camera,
                rect,
                category: Some(surface.category),
                surface: task.surface,
                image: task.image,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::manifest::{Category, Surface};
    use super::*;

    fn manifest_with(counts: &[usize]) -> Manifest {
        let surfaces = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat(c).take(n))
            .enumerate()
            .map(|(id, category)| Surface { id, category, marker_scale: None, images: Vec::new() })
            .collect();
        let cats = (0..counts.len()).map(|id| Category { id, name: format!("c{id}") }).collect();
        Manifest::new(cats, surfaces).unwrap()
    }

    #[test]
    fn split_counts_follow_worked_examples() {
        let m = manifest_with(&[3, 23, 2]);
        let split = split_by_surface(&m, 0.7, 11).unwrap();
        let count = |side: &[usize], c: usize| side.iter().filter(|&&s| m.surfaces[s].category == c).count();
        assert_eq!((count(&split.train, 0), count(&split.test, 0)), (2, 1));
        assert_eq!((count(&split.train, 1), count(&split.test, 1)), (16, 7));
        assert_eq!((count(&split.train, 2), count(&split.test, 2)), (1, 1));
        assert!(split.train.iter().all(|s| !split.test.contains(s)));
        assert_eq!(split.train.len() + split.test.len(), 28);
    }

    #[test]
    fn split_is_seeded() {
        let m = manifest_with(&[10, 10]);
        assert_eq!(split_by_surface(&m, 0.7, 3).unwrap(), split_by_surface(&m, 0.7, 3).unwrap());
        let differs = (0..10).any(|s| split_by_surface(&m, 0.7, s).unwrap().train != split_by_surface(&m, 0.7, 3).unwrap().train);
        assert!(differs);
    }

    #[test]
    fn split_rejects_single_surface_category() {
        let m = manifest_with(&[3, 1]);
        assert!(matches!(split_by_surface(&m, 0.7, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn allocation_worked_example() {
        let a = allocate(200, &vec![vec![true; 10]; 10]);
        assert_eq!(a.per_surface, vec![20; 10]);
        assert!(a.per_image.iter().all(|imgs| imgs == &vec![2; 10]));
    }

    #[test]
    fn allocation_remainders_and_skips() {
        let a = allocate(10, &[vec![true, true], vec![false, false], vec![true, false, true]]);
        assert_eq!(a.per_surface, vec![5, 0, 5]);
        assert_eq!(a.per_image[2], vec![3, 0, 2]);
        let a = allocate(7, &[vec![true], vec![true], vec![true]]);
        assert_eq!(a.per_surface, vec![3, 2, 2]);
    }

    #[test]
    fn origin_bounds_keep_square_inside() {
        let poly = [[10.0, 20.0], [200.0, 20.0], [200.0, 180.0], [10.0, 180.0]];
        let scanned = scan_origins(&poly, 300, 300, 100);
        assert!(!scanned.is_empty());
        for &(x, y) in &scanned {
            assert!(x as f64 - 0.5 >= 10.0 && (x + 100) as f64 - 0.5 <= 200.0);
            assert!(y as f64 - 0.5 >= 20.0 && (y + 100) as f64 - 0.5 <= 180.0);
        }
        assert!(scan_origins(&poly, 300, 300, 170).is_empty());
    }
}
