//! Per-category texton dictionaries and normalized assignment histograms.

use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binio;
use crate::descriptors::Descriptors;
use crate::error::{Error, Result};
use crate::filterbank::ResponseStack;
use crate::geometry::DenseNormalMap;
use crate::kmeans::{kmeans_fit, nearest_center};

/// What the texton centers were clustered from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DescriptorKind {
    Rfs,
    Mr8,
    RfsN,
    Mr8N,
    Hsv,
    Normal,
}

impl DescriptorKind {
    pub const ALL: [DescriptorKind; 6] = [
        DescriptorKind::Rfs,
        DescriptorKind::Mr8,
        DescriptorKind::RfsN,
        DescriptorKind::Mr8N,
        DescriptorKind::Hsv,
        DescriptorKind::Normal,
    ];

    pub fn dim(self) -> usize {
        match self {
            DescriptorKind::Rfs => 38,
            DescriptorKind::Mr8 => 8,
            DescriptorKind::RfsN => 41,
            DescriptorKind::Mr8N => 11,
            DescriptorKind::Hsv | DescriptorKind::Normal => 3,
        }
    }

    /// Clusters per category: ten for filter textons, five for color and
    /// normal textons.
    pub fn default_k(self) -> usize {
        match self {
            DescriptorKind::Hsv | DescriptorKind::Normal => 5,
            _ => 10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DescriptorKind::Rfs => "rfs",
            DescriptorKind::Mr8 => "mr8",
            DescriptorKind::RfsN => "rfs_n",
            DescriptorKind::Mr8N => "mr8_n",
            DescriptorKind::Hsv => "hsv",
            DescriptorKind::Normal => "n3d",
        }
    }

    fn tag(self) -> u32 {
        self as u32
    }

    fn from_tag(t: u32) -> Option<Self> {
        Self::ALL.get(t as usize).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextonDictionary {
    kind: DescriptorKind,
    k_per_category: usize,
    num_categories: usize,
    centers: Descriptors,
}

impl TextonDictionary {
    pub fn new(kind: DescriptorKind, k_per_category: usize, centers: Descriptors) -> Result<Self> {
        if centers.dim() != kind.dim() {
            return Err(Error::invalid(format!(
                "{} dictionary needs {}-dim centers, got {}",
                kind.name(),
                kind.dim(),
                centers.dim()
            )));
        }
        if k_per_category == 0 || centers.is_empty() || centers.len() % k_per_category != 0 {
            return Err(Error::invalid("center count is not a multiple of k_per_category"));
        }
        if centers.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite texton center"));
        }
        Ok(Self {
            kind,
            k_per_category,
            num_categories: centers.len() / k_per_category,
            centers,
        })
    }

    pub fn kind(&self) -> DescriptorKind {
        self.kind
    }

    pub fn k_per_category(&self) -> usize {
        self.k_per_category
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn centers(&self) -> &Descriptors {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn category_of(&self, center: usize) -> usize {
        center / self.k_per_category
    }

    /// Float32 binary form: magic, kind, dim, count, k_per_category,
    /// num_categories, then centers row-major.
    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(DICT_MAGIC)?;
        binio::write_u32(out, self.kind.tag())?;
        binio::write_u32(out, self.centers.dim() as u32)?;
        binio::write_u32(out, self.centers.len() as u32)?;
        binio::write_u32(out, self.k_per_category as u32)?;
        binio::write_u32(out, self.num_categories as u32)?;
        binio::write_f32s(out, self.centers.data())
    }

    pub fn read<R: Read>(input: &mut R) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::format("texton dictionary", e.to_string());
        binio::expect_magic(input, DICT_MAGIC).map_err(fmt)?;
        let kind = DescriptorKind::from_tag(binio::read_u32(input).map_err(fmt)?)
            .ok_or_else(|| Error::format("texton dictionary", "unknown kind"))?;
        let dim = binio::read_u32(input).map_err(fmt)? as usize;
        let count = binio::read_u32(input).map_err(fmt)? as usize;
        let k = binio::read_u32(input).map_err(fmt)? as usize;
        let cats = binio::read_u32(input).map_err(fmt)? as usize;
        if k * cats != count {
            return Err(Error::format("texton dictionary", "inconsistent header"));
        }
        let data = binio::read_f32_vec(input, dim * count).map_err(fmt)?;
        Self::new(kind, k, Descriptors::new(dim, data)?)
            .map_err(|e| Error::format("texton dictionary", e.to_string()))
    }

    /// The dictionary exactly as it would be read back from disk.
    pub fn quantized(&self) -> Self {
        let data = self.centers.data().iter().map(|&v| binio::f32_round(v)).collect();
        Self {
            centers: Descriptors::new(self.centers.dim(), data).unwrap(),
            ..self.clone()
        }
    }
}

const DICT_MAGIC: &[u8; 8] = b"GMDICT01";

/// Derive an independent per-stream seed.
pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform seeded subsample of at most `max` rows, in ascending row order.
pub fn subsample(points: &Descriptors, max: usize, seed: u64) -> Descriptors {
    if points.len() <= max {
        return points.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, points.len(), max).into_vec();
    idx.sort_unstable();
    points.select(&idx)
}

/// Cluster each category independently and concatenate the centers in
/// category order.
pub fn build_dictionary(
    per_category: &[Descriptors],
    k_per_category: usize,
    kind: DescriptorKind,
    seed: u64,
) -> Result<TextonDictionary> {
    if per_category.is_empty() {
        return Err(Error::invalid("no categories to build a dictionary from"));
    }
    for (c, d) in per_category.iter().enumerate() {
        if d.dim() != kind.dim() {
            return Err(Error::invalid(format!(
                "category {c}: descriptors are {}-dim, {} needs {}",
                d.dim(),
                kind.name(),
                kind.dim()
            )));
        }
        if d.len() < k_per_category {
            return Err(Error::invalid(format!(
                "category {c} has {} descriptors, needs at least {}",
                d.len(),
                k_per_category
            )));
        }
    }
    let fits: Vec<Descriptors> = per_category
        .par_iter()
        .enumerate()
        .map(|(c, d)| kmeans_fit(d, k_per_category, mix_seed(seed, c as u64)).map(|f| f.centers))
        .collect::<Result<_>>()?;
    let mut centers = Descriptors::with_capacity(kind.dim(), k_per_category * fits.len());
    for f in &fits {
        centers.extend(f)?;
    }
    TextonDictionary::new(kind, k_per_category, centers)
}

/// Normalized texton histogram.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub kind: DescriptorKind,
    pub bins: Vec<f64>,
}

/// Assign every descriptor to its nearest center (ties to the lowest index)
/// and normalize the counts to sum to one.
pub fn encode_histogram(descriptors: &Descriptors, dict: &TextonDictionary) -> Result<Histogram> {
    if descriptors.is_empty() {
        return Err(Error::invalid("cannot encode an empty descriptor set"));
    }
    if descriptors.dim() != dict.centers.dim() {
        return Err(Error::invalid(format!(
            "descriptor dimension {} does not match dictionary dimension {}",
            descriptors.dim(),
            dict.centers.dim()
        )));
    }
    let mut counts = vec![0usize; dict.len()];
    for row in descriptors.rows() {
        counts[nearest_center(row, &dict.centers).0] += 1;
    }
    let n = descriptors.len() as f64;
    Ok(Histogram {
        kind: dict.kind,
        bins: counts.iter().map(|&c| c as f64 / n).collect(),
    })
}

/// Concatenate `alpha * n_cam` onto every pixel's filter responses.
pub fn augment_with_normals(
    stack: &ResponseStack,
    normals: &DenseNormalMap,
    alpha: f64,
) -> Result<Descriptors> {
    if stack.width() != normals.width() || stack.height() != normals.height() {
        return Err(Error::invalid(format!(
            "response stack {}x{} and normal map {}x{} differ in size",
            stack.width(),
            stack.height(),
            normals.width(),
            normals.height()
        )));
    }
    let d = stack.plane_count() + 3;
    let n = stack.width() * stack.height();
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        for p in 0..stack.plane_count() {
            data.push(stack.plane(p)[i]);
        }
        let nv = normals.normals()[i];
        data.extend([alpha * nv.x, alpha * nv.y, alpha * nv.z]);
    }
    Descriptors::new(d, data)
}

/// Camera-frame normals as 3-dim descriptors, one per pixel.
pub fn normal_descriptors(normals: &DenseNormalMap) -> Descriptors {
    let data = normals.normals().iter().flat_map(|n| [n.x, n.y, n.z]).collect();
    Descriptors::new(3, data).unwrap()
}

/// HSV pixels as descriptors with hue rescaled to `[0, 1)`.
pub fn hsv_descriptors(hsv: &crate::raster::HsvImage) -> Descriptors {
    let data = hsv
        .pixels()
        .iter()
        .flat_map(|p| [p[0] / 360.0, p[1], p[2]])
        .collect();
    Descriptors::new(3, data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filterbank::StackKind;
    use crate::geometry::NormalFrame;
    use nalgebra::Vector3;
    use rand::Rng;

    fn random_set(n: usize, dim: usize, lo: f64, hi: f64, seed: u64) -> Descriptors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * dim).map(|_| rng.random_range(lo..hi)).collect();
        Descriptors::new(dim, data).unwrap()
    }

    #[test]
    fn dictionary_sizes() {
        let cats: Vec<Descriptors> = (0..19).map(|c| random_set(40, 8, 0.0, 1.0, c)).collect();
        let d = build_dictionary(&cats, 10, DescriptorKind::Mr8, 1).unwrap();
        assert_eq!(d.len(), 190);
        let cats: Vec<Descriptors> = (0..19).map(|c| random_set(40, 3, 0.0, 1.0, c)).collect();
        let d = build_dictionary(&cats, DescriptorKind::Hsv.default_k(), DescriptorKind::Hsv, 1).unwrap();
        assert_eq!(d.len(), 95);
        assert_eq!(d.category_of(94), 18);
    }

    #[test]
    fn disjoint_categories_stay_in_their_support() {
        let cats = vec![
            random_set(200, 3, 0.0, 1.0, 1),
            random_set(200, 3, 5.0, 6.0, 2),
        ];
        let d = build_dictionary(&cats, 4, DescriptorKind::Normal, 3).unwrap();
        for (i, c) in d.centers().rows().enumerate() {
            let (lo, hi) = if d.category_of(i) == 0 { (0.0, 1.0) } else { (5.0, 6.0) };
            assert!(c.iter().all(|v| (lo..=hi).contains(v)));
        }
    }

    #[test]
    fn undersized_category_is_named() {
        let cats = vec![random_set(20, 3, 0.0, 1.0, 1), random_set(3, 3, 0.0, 1.0, 2)];
        let err = build_dictionary(&cats, 5, DescriptorKind::Hsv, 0).unwrap_err();
        assert!(err.to_string().contains("category 1"));
    }

    #[test]
    fn histogram_encoding() {
        let centers = Descriptors::new(1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let dict = TextonDictionary::new(DescriptorKind::Normal, 2, Descriptors::new(3, {
            let mut v = Vec::new();
            for c in centers.rows() {
                v.extend([c[0], 0.0, 0.0]);
            }
            v
        }).unwrap())
        .unwrap();
        let desc = Descriptors::new(3, vec![0.1, 0.0, 0.0, -0.2, 0.0, 0.0, 2.2, 0.0, 0.0]).unwrap();
        let h = encode_histogram(&desc, &dict).unwrap();
        assert_eq!(h.bins, vec![2.0 / 3.0, 0.0, 1.0 / 3.0, 0.0]);
        // exact hits give a one-hot histogram
        let hit = Descriptors::new(3, vec![3.0, 0.0, 0.0, 3.0, 0.0, 0.0]).unwrap();
        assert_eq!(encode_histogram(&hit, &dict).unwrap().bins, vec![0.0, 0.0, 0.0, 1.0]);
        // midpoint tie goes to the lower index
        let tie = Descriptors::new(3, vec![0.5, 0.0, 0.0]).unwrap();
        assert_eq!(encode_histogram(&tie, &dict).unwrap().bins[0], 1.0);
        assert!(encode_histogram(&Descriptors::empty(3), &dict).is_err());
        assert!(encode_histogram(&Descriptors::new(2, vec![0.0, 0.0]).unwrap(), &dict).is_err());
    }

    #[test]
    fn normal_augmentation() {
        let planes = vec![vec![0.0; 4]; 8];
        let stack = ResponseStack::new(2, 2, StackKind::Mr8, planes).unwrap();
        let normals = DenseNormalMap::constant(2, 2, NormalFrame::Camera, Vector3::new(0.0, 0.0, -1.0)).unwrap();
        let d = augment_with_normals(&stack, &normals, 1.0).unwrap();
        assert_eq!(d.dim(), 11);
        assert_eq!(d.row(3), &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0]);
        let rfs = ResponseStack::new(2, 2, StackKind::Rfs, vec![vec![1.0; 4]; 38]).unwrap();
        assert_eq!(augment_with_normals(&rfs, &normals, 1.0).unwrap().dim(), 41);
        let small = DenseNormalMap::constant(1, 2, NormalFrame::Camera, Vector3::new(0.0, 0.0, -1.0)).unwrap();
        assert!(augment_with_normals(&stack, &small, 1.0).is_err());
    }

    #[test]
    fn dictionary_binary_roundtrip_and_determinism() {
        let cats: Vec<Descriptors> = (0..3).map(|c| random_set(60, 11, -1.0, 1.0, c)).collect();
        let a = build_dictionary(&cats, 10, DescriptorKind::Mr8N, 7).unwrap();
        let b = build_dictionary(&cats, 10, DescriptorKind::Mr8N, 7).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        a.write(&mut buf).unwrap();
        assert_eq!(TextonDictionary::read(&mut &buf[..]).unwrap(), a.quantized());
    }

    proptest::proptest! {
        #[test]
        fn histograms_sum_to_one(seed in 0u64..1000, n in 1usize..200) {
            let dict = TextonDictionary::new(DescriptorKind::Hsv, 5, random_set(10, 3, 0.0, 1.0, seed)).unwrap();
            let h = encode_histogram(&random_set(n, 3, 0.0, 1.0, seed + 1), &dict).unwrap();
            proptest::prop_assert!((h.bins.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            proptest::prop_assert!(h.bins.iter().all(|&b| b >= 0.0));
        }
    }
}
