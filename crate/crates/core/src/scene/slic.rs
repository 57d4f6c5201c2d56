use std::collections::VecDeque;

use image::{ImageBuffer, Luma, RgbImage};
use rayon::prelude::*;

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::geometry::SparseNormalMap;
use crate::patch::{extract_patch, PatchBundle, PatchRect};

pub const SLIC_ITERATIONS: usize = 10;

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// sRGB to CIE Lab under the D65 white point.
pub fn rgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|c| srgb_to_linear(c as f64 / 255.0));
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let (fx, fy, fz) = (lab_f(x / 0.950_47), lab_f(y), lab_f(z / 1.088_83));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Superpixel {
    pub rect: PatchRect,
    /// Mean pixel position (pixel centers at integer coordinates).
    pub centroid: (f64, f64),
    pub area: usize,
}

/// Partition of an image into labeled regions `0..len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    superpixels: Vec<Superpixel>,
}

impl SuperpixelMap {
    /// Labels must be exactly `0..n` with every value used.
    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::invalid("label buffer does not match the image size"));
        }
        let n = labels.iter().max().map_or(0, |&m| m as usize + 1);
        let mut acc = vec![(u32::MAX, u32::MAX, 0u32, 0u32, 0.0, 0.0, 0usize); n];
        for (i, &l) in labels.iter().enumerate() {
            let (x, y) = ((i % width) as u32, (i / width) as u32);
            let a = &mut acc[l as usize];
            a.0 = a.0.min(x);
            a.1 = a.1.min(y);
            a.2 = a.2.max(x);
            a.3 = a.3.max(y);
            a.4 += x as f64;
            a.5 += y as f64;
            a.6 += 1;
        }
        if acc.iter().any(|a| a.6 == 0) {
            return Err(Error::invalid("superpixel labels are not contiguous"));
        }
        let superpixels = acc
            .iter()
            .map(|&(x0, y0, x1, y1, sx, sy, n)| Superpixel {
                rect: PatchRect {
                    x: x0,
                    y: y0,
                    width: x1 - x0 + 1,
                    height: y1 - y0 + 1,
                },
                centroid: (sx / n as f64, sy / n as f64),
                area: n,
            })
            .collect();
        Ok(Self {
            width,
            height,
            labels,
            superpixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.superpixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.superpixels.is_empty()
    }

    pub fn label(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn superpixel(&self, id: usize) -> &Superpixel {
        &self.superpixels[id]
    }

    pub fn superpixels(&self) -> &[Superpixel] {
        &self.superpixels
    }

    /// Whether superpixel `id` is a single 4-connected region.
    pub fn is_connected(&self, id: usize) -> bool {
        let sp = &self.superpixels[id];
        let start = (sp.rect.y as usize..(sp.rect.y + sp.rect.height) as usize)
            .flat_map(|y| (sp.rect.x as usize..(sp.rect.x + sp.rect.width) as usize).map(move |x| (x, y)))
            .find(|&(x, y)| self.label(x, y) == id);
        let Some(start) = start else { return false };
        let mut seen = vec![false; self.labels.len()];
        let mut queue = VecDeque::from([start]);
        seen[start.1 * self.width + start.0] = true;
        let mut count = 0;
        while let Some((x, y)) = queue.pop_front() {
            count += 1;
            for (nx, ny) in neighbors(x, y, self.width, self.height) {
                let i = ny * self.width + nx;
                if !seen[i] && self.labels[i] as usize == id {
                    seen[i] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
        count == sp.area
    }

    /// 16-bit index image with each pixel set to `values[label]`.
    pub fn index_image(&self, values: &[u16]) -> Result<ImageBuffer<Luma<u16>, Vec<u16>>> {
        if values.len() != self.len() {
            return Err(Error::invalid(format!(
                "{} values for {} superpixels",
                values.len(),
                self.len()
            )));
        }
        Ok(ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([values[self.label(x as usize, y as usize)]])
        }))
    }
}

fn neighbors(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let mut out = [(usize::MAX, usize::MAX); 4];
    if x > 0 {
        out[0] = (x - 1, y);
    }
    if x + 1 < w {
        out[1] = (x + 1, y);
    }
    if y > 0 {
        out[2] = (x, y - 1);
    }
    if y + 1 < h {
        out[3] = (x, y + 1);
    }
    out.into_iter().filter(|p| p.0 != usize::MAX)
}

#[derive(Clone, Copy, Debug)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

/// SLIC: k-means over (L, a, b, x, y) with grid-seeded centers at spacing
/// `S = sqrt(N / n_target)`, distance `d_lab^2 + (d_xy / S)^2 m^2`, a
/// `2S x 2S` search window, ten iterations, then connectivity enforcement
/// that merges stray fragments into their largest adjacent superpixel.
pub fn slic_segment(rgb: &RgbImage, n_target: usize, compactness: f64) -> Result<SuperpixelMap> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::invalid("SLIC on an empty image"));
    }
    if n_target == 0 || n_target > w * h {
        return Err(Error::invalid(format!(
            "cannot make {n_target} superpixels from {} pixels",
            w * h
        )));
    }
    if !(compactness > 0.0) {
        return Err(Error::invalid("SLIC compactness must be positive"));
    }
    let lab: Vec<[f64; 3]> = rgb.pixels().map(|p| rgb_to_lab(p.0)).collect();
    let s = ((w * h) as f64 / n_target as f64).sqrt();
    let nx = ((w as f64 / s).round() as usize).clamp(1, w);
    let ny = ((h as f64 / s).round() as usize).clamp(1, h);

    let grad = |x: usize, y: usize| -> f64 {
        let at = |x: usize, y: usize| lab[y * w + x];
        let d = |a: [f64; 3], b: [f64; 3]| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>();
        let gx = d(at((x + 1).min(w - 1), y), at(x.saturating_sub(1), y));
        let gy = d(at(x, (y + 1).min(h - 1)), at(x, y.saturating_sub(1)));
        gx + gy
    };
    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let cx = ((i as f64 + 0.5) * w as f64 / nx as f64).floor() as usize;
            let cy = ((j as f64 + 0.5) * h as f64 / ny as f64).floor() as usize;
            let (cx, cy) = (cx.min(w - 1), cy.min(h - 1));
            // Move the seed to the lowest-gradient pixel of its 3x3 block.
            let mut best = (grad(cx, cy), cx, cy);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (px, py) = (cx as i64 + dx, cy as i64 + dy);
                    if px < 0 || py < 0 || px >= w as i64 || py >= h as i64 {
                        continue;
                    }
                    let g = grad(px as usize, py as usize);
                    if g < best.0 {
                        best = (g, px as usize, py as usize);
                    }
                }
            }
            let (bx, by) = if best.1 == cx && best.2 == cy {
                ((i as f64 + 0.5) * w as f64 / nx as f64, (j as f64 + 0.5) * h as f64 / ny as f64)
            } else {
                (best.1 as f64 + 0.5, best.2 as f64 + 0.5)
            };
            centers.push(Center {
                lab: lab[best.2 * w + best.1],
                x: bx,
                y: by,
            });
        }
    }

    let mut labels: Vec<u32> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let gi = (x * nx / w).min(nx - 1);
            let gj = (y * ny / h).min(ny - 1);
            (gj * nx + gi) as u32
        })
        .collect();
    let m2 = compactness * compactness;
    let inv_s2 = 1.0 / (s * s);
    for _ in 0..SLIC_ITERATIONS {
        let cell = s.max(1.0);
        let (gw, gh) = ((w as f64 / cell).ceil() as usize + 1, (h as f64 / cell).ceil() as usize + 1);
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); gw * gh];
        for (k, c) in centers.iter().enumerate() {
            let bx = ((c.x / cell).floor() as usize).min(gw - 1);
            let by = ((c.y / cell).floor() as usize).min(gh - 1);
            buckets[by * gw + bx].push(k);
        }
        labels = labels
            .par_chunks(w)
            .enumerate()
            .flat_map_iter(|(y, row)| {
                let py = y as f64 + 0.5;
                let by = ((py / cell).floor() as usize).min(gh - 1);
                let (centers, buckets, lab) = (&centers, &buckets, &lab);
                row.iter().enumerate().map(move |(x, &prev)| {
                    let px = x as f64 + 0.5;
                    let bx = ((px / cell).floor() as usize).min(gw - 1);
                    let p = lab[y * w + x];
                    let mut best = (prev, f64::INFINITY);
                    for cy in by.saturating_sub(1)..=(by + 1).min(gh - 1) {
                        for cx in bx.saturating_sub(1)..=(bx + 1).min(gw - 1) {
                            for &k in &buckets[cy * gw + cx] {
                                let c = &centers[k];
                                let (dx, dy) = (px - c.x, py - c.y);
                                if dx.abs() > s || dy.abs() > s {
                                    continue;
                                }
                                let dc = (0..3).map(|i| (p[i] - c.lab[i]).powi(2)).sum::<f64>();
                                let d = dc + (dx * dx + dy * dy) * inv_s2 * m2;
                                if d < best.1 || (d == best.1 && (k as u32) < best.0) {
                                    best = (k as u32, d);
                                }
                            }
                        }
                    }
                    best.0
                })
            })
            .collect();

        let mut sums = vec![[0.0f64; 6]; centers.len()];
        for (i, &l) in labels.iter().enumerate() {
            let a = &mut sums[l as usize];
            let p = lab[i];
            a[0] += p[0];
            a[1] += p[1];
            a[2] += p[2];
            a[3] += (i % w) as f64 + 0.5;
            a[4] += (i / w) as f64 + 0.5;
            a[5] += 1.0;
        }
        for (c, a) in centers.iter_mut().zip(&sums) {
            if a[5] > 0.0 {
                *c = Center {
                    lab: [a[0] / a[5], a[1] / a[5], a[2] / a[5]],
                    x: a[3] / a[5],
                    y: a[4] / a[5],
                };
            }
        }
    }

    let labels = enforce_connectivity(&labels, w, h);
    let map = SuperpixelMap::from_labels(w, h, labels)?;
    let ratio = map.len() as f64 / n_target as f64;
    if !(0.9..=1.1).contains(&ratio) {
        log::warn!("SLIC produced {} superpixels for a target of {n_target}", map.len());
    }
    Ok(map)
}

/// Split labels into 4-connected components. The largest component of each
/// label survives; every other component is merged into the largest
/// surviving neighbor. Output labels are renumbered in raster order of
/// first appearance.
fn enforce_connectivity(labels: &[u32], w: usize, h: usize) -> Vec<u32> {
    let n = w * h;
    let mut comp = vec![usize::MAX; n];
    let mut comp_label = Vec::new();
    let mut comp_size = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_label.len();
        let l = labels[start];
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            for (nx, ny) in neighbors(i % w, i / w, w, h) {
                let j = ny * w + nx;
                if comp[j] == usize::MAX && labels[j] == l {
                    comp[j] = id;
                    queue.push_back(j);
                }
            }
        }
        comp_label.push(l);
        comp_size.push(size);
    }
    let nc = comp_label.len();
    let mut largest: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
    for c in 0..nc {
        let e = largest.entry(comp_label[c]).or_insert(c);
        if comp_size[c] > comp_size[*e] {
            *e = c;
        }
    }
    let mut kept: Vec<bool> = (0..nc).map(|c| largest[&comp_label[c]] == c).collect();

    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for i in 0..n {
        let (x, y) = (i % w, i / w);
        for (nx, ny) in [(x + 1, y), (x, y + 1)] {
            if nx < w && ny < h {
                let (a, b) = (comp[i], comp[ny * w + nx]);
                if a != b {
                    adjacency[a].push(b);
                    adjacency[b].push(a);
                }
            }
        }
    }
    adjacency.iter_mut().for_each(|a| {
        a.sort_unstable();
        a.dedup();
    });

    // Union-find over components; orphans attach to a surviving root.
    let mut parent: Vec<usize> = (0..nc).collect();
    fn find(parent: &mut [usize], mut c: usize) -> usize {
        while parent[c] != c {
            parent[c] = parent[parent[c]];
            c = parent[c];
        }
        c
    }
    let mut size = comp_size.clone();
    let mut pending: Vec<usize> = (0..nc).filter(|&c| !kept[c]).collect();
    while !pending.is_empty() {
        let mut next = Vec::new();
        for &c in &pending {
            let mut best: Option<(usize, usize)> = None;
            for &nb in &adjacency[c] {
                let r = find(&mut parent, nb);
                if !kept[r] || r == c {
                    continue;
                }
                if best.is_none_or(|(bs, br)| size[r] > bs || (size[r] == bs && r < br)) {
                    best = Some((size[r], r));
                }
            }
            match best {
                Some((_, r)) => {
                    parent[c] = r;
                    size[r] += comp_size[c];
                }
                None => next.push(c),
            }
        }
        if next.len() == pending.len() {
            // Only reachable through other orphans; promote the first.
            kept[next[0]] = true;
            next.remove(0);
        }
        pending = next;
    }

    let mut remap = vec![u32::MAX; nc];
    let mut count = 0u32;
    let mut out = vec![0u32; n];
    for i in 0..n {
        let r = find(&mut parent, comp[i]);
        if remap[r] == u32::MAX {
            remap[r] = count;
            count += 1;
        }
        out[i] = remap[r];
    }
    out
}

/// The bounding rectangle of superpixel `id` cut out as a patch, or `None`
/// when the rectangle is at most one pixel wide or tall.
pub fn superpixel_patch(
    rgb: &RgbImage,
    normals: &SparseNormalMap,
    cam: &CameraModel,
    map: &SuperpixelMap,
    id: usize,
    image: usize,
) -> Result<Option<PatchBundle>> {
    if id >= map.len() {
        return Err(Error::invalid(format!("superpixel {id} out of range")));
    }
    let rect = map.superpixel(id).rect;
    if rect.width <= 1 || rect.height <= 1 {
        return Ok(None);
    }
    let (rgb, normals, camera) = extract_patch(rgb, normals, cam, rect)?;
    Ok(Some(PatchBundle {
        rgb,
        normals,
        camera,
        rect,
        category: None,
        surface: 0,
        image,
    }))
}
