use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use crate::binio;
use crate::descriptors::l2_norm;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PartKind {
    /// Weighted, compared by chi-squared distance.
    Histogram,
    /// L2-normalized, compared by dot product.
    Vector,
}

impl PartKind {
    fn tag(self) -> u32 {
        match self {
            PartKind::Histogram => 0,
            PartKind::Vector => 1,
        }
    }

    fn from_tag(t: u32) -> Option<Self> {
        match t {
            0 => Some(PartKind::Histogram),
            1 => Some(PartKind::Vector),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePart {
    pub name: String,
    pub kind: PartKind,
    pub dim: usize,
    /// Multiplier for histogram parts; ignored for vector parts.
    pub weight: f64,
}

impl FeaturePart {
    pub fn histogram(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            kind: PartKind::Histogram,
            dim,
            weight: 1.0,
        }
    }

    pub fn vector(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            kind: PartKind::Vector,
            dim,
            weight: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSetSpec {
    parts: Vec<FeaturePart>,
}

impl FeatureSetSpec {
    pub fn new(parts: Vec<FeaturePart>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::invalid("a feature set needs at least one part"));
        }
        for p in &parts {
            if p.dim == 0 {
                return Err(Error::invalid(format!("feature part '{}' has dimension 0", p.name)));
            }
            if !(p.weight >= 0.0) || !p.weight.is_finite() {
                return Err(Error::invalid(format!("feature part '{}' has weight {}", p.name, p.weight)));
            }
        }
        Ok(Self { parts })
    }

    pub fn parts(&self) -> &[FeaturePart] {
        &self.parts
    }

    pub fn histogram_parts(&self) -> impl Iterator<Item = (usize, &FeaturePart)> {
        self.parts.iter().enumerate().filter(|(_, p)| p.kind == PartKind::Histogram)
    }

    pub fn vector_parts(&self) -> impl Iterator<Item = (usize, &FeaturePart)> {
        self.parts.iter().enumerate().filter(|(_, p)| p.kind == PartKind::Vector)
    }

    /// Replace the histogram weights, in histogram-part order.
    pub fn with_weights(&self, weights: &[f64]) -> Result<Self> {
        let count = self.histogram_parts().count();
        if weights.len() != count {
            return Err(Error::invalid(format!(
                "{} weights for {count} histogram parts",
                weights.len()
            )));
        }
        let mut parts = self.parts.clone();
        let mut w = weights.iter();
        for p in parts.iter_mut().filter(|p| p.kind == PartKind::Histogram) {
            p.weight = *w.next().unwrap();
        }
        Self::new(parts)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.histogram_parts().map(|(_, p)| p.weight).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.parts.iter().map(|p| p.dim).sum()
    }

    /// Offset ranges of each part inside the concatenated vector.
    pub fn ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.parts
            .iter()
            .map(|p| {
                start += p.dim;
                start - p.dim..start
            })
            .collect()
    }

    /// SHA-256 over part names, kinds and dimensions (not weights).
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for p in &self.parts {
            h.update(p.name.as_bytes());
            h.update([0u8]);
            h.update(p.kind.tag().to_le_bytes());
            h.update((p.dim as u64).to_le_bytes());
        }
        h.finalize().into()
    }

    pub(crate) fn check_parts<P: AsRef<[f64]>>(&self, parts: &[P]) -> Result<()> {
        if parts.len() != self.parts.len() {
            return Err(Error::invalid(format!(
                "expected {} feature parts, got {}",
                self.parts.len(),
                parts.len()
            )));
        }
        for (p, v) in self.parts.iter().zip(parts) {
            if v.as_ref().len() != p.dim {
                return Err(Error::invalid(format!(
                    "feature part '{}' should have {} values, got {}",
                    p.name,
                    p.dim,
                    v.as_ref().len()
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        binio::write_u32(out, self.parts.len() as u32)?;
        for p in &self.parts {
            binio::write_str(out, &p.name)?;
            binio::write_u32(out, p.kind.tag())?;
            binio::write_u32(out, p.dim as u32)?;
            binio::write_f64s(out, &[p.weight])?;
        }
        Ok(())
    }

    pub(crate) fn read<R: Read>(input: &mut R) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::format("feature spec", e.to_string());
        let count = binio::read_u32(input).map_err(fmt)? as usize;
        if count > 1024 {
            return Err(Error::format("feature spec", "too many parts"));
        }
        let mut parts = Vec::with_capacity(count);
        for _ in 0..count {
            let name = binio::read_str(input).map_err(fmt)?;
            let kind = PartKind::from_tag(binio::read_u32(input).map_err(fmt)?)
                .ok_or_else(|| Error::format("feature spec", "unknown part kind"))?;
            let dim = binio::read_u32(input).map_err(fmt)? as usize;
            let weight = binio::read_f64_vec(input, 1).map_err(fmt)?[0];
            parts.push(FeaturePart { name, kind, dim, weight });
        }
        Self::new(parts).map_err(|e| Error::format("feature spec", e.to_string()))
    }
}

/// Histogram parts times their weights and vector parts scaled to unit L2
/// norm, concatenated in spec order. Zero vector parts stay zero.
pub fn concat_l2<P: AsRef<[f64]>>(parts: &[P], spec: &FeatureSetSpec) -> Result<Vec<f64>> {
    spec.check_parts(parts)?;
    let mut out = Vec::with_capacity(spec.total_dim());
    for (p, v) in spec.parts.iter().zip(parts) {
        let v = v.as_ref();
        match p.kind {
            PartKind::Histogram => out.extend(v.iter().map(|x| x * p.weight)),
            PartKind::Vector => {
                let n = l2_norm(v);
                if n > 0.0 {
                    out.extend(v.iter().map(|x| x / n));
                } else {
                    log::warn!("feature part '{}' is all zeros", p.name);
                    out.extend(std::iter::repeat_n(0.0, v.len()));
                }
            }
        }
    }
    Ok(out)
}

const CACHE_MAGIC: &[u8; 8] = b"GMFEAT01";

/// One example's parts: magic, spec hash, part table (name, kind, dim),
/// then float32 payloads in part order.
pub fn write_feature_cache<W: Write, P: AsRef<[f64]>>(
    out: &mut W,
    spec: &FeatureSetSpec,
    parts: &[P],
) -> Result<()> {
    spec.check_parts(parts)?;
    let io = |e: std::io::Error| Error::format("feature cache", e.to_string());
    out.write_all(CACHE_MAGIC).map_err(io)?;
    out.write_all(&spec.hash()).map_err(io)?;
    binio::write_u32(out, spec.parts.len() as u32).map_err(io)?;
    for p in &spec.parts {
        binio::write_str(out, &p.name).map_err(io)?;
        binio::write_u32(out, p.kind.tag()).map_err(io)?;
        binio::write_u32(out, p.dim as u32).map_err(io)?;
    }
    for v in parts {
        binio::write_f32s(out, v.as_ref()).map_err(io)?;
    }
    Ok(())
}

/// Read a cache entry, checking it was written for `spec`.
pub fn read_feature_cache<R: Read>(input: &mut R, spec: &FeatureSetSpec) -> Result<Vec<Vec<f64>>> {
    let (found, parts) = read_feature_cache_any(input)?;
    if found.hash() != spec.hash() {
        return Err(Error::format("feature cache", "written for a different feature set"));
    }
    Ok(parts)
}

/// Read a cache entry along with the part table it was written with.
pub fn read_feature_cache_any<R: Read>(input: &mut R) -> Result<(FeatureSetSpec, Vec<Vec<f64>>)> {
    let fmt = |e: std::io::Error| Error::format("feature cache", e.to_string());
    binio::expect_magic(input, CACHE_MAGIC).map_err(fmt)?;
    let mut hash = [0u8; 32];
    input.read_exact(&mut hash).map_err(fmt)?;
    let count = binio::read_u32(input).map_err(fmt)? as usize;
    if count == 0 || count > 1 << 16 {
        return Err(Error::format("feature cache", format!("implausible part count {count}")));
    }
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let name = binio::read_str(input).map_err(fmt)?;
        let kind = PartKind::from_tag(binio::read_u32(input).map_err(fmt)?)
            .ok_or_else(|| Error::format("feature cache", format!("unknown part kind for '{name}'")))?;
        let dim = binio::read_u32(input).map_err(fmt)? as usize;
        table.push(FeaturePart { name, kind, dim, weight: 1.0 });
    }
    let spec = FeatureSetSpec::new(table).map_err(|e| Error::format("feature cache", e.to_string()))?;
    if hash != spec.hash() {
        return Err(Error::format("feature cache", "header hash does not match its part table"));
    }
    let parts = spec
        .parts
        .iter()
        .map(|p| binio::read_f32_vec(input, p.dim).map_err(fmt))
        .collect::<Result<_>>()?;
    Ok((spec, parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> FeatureSetSpec {
        FeatureSetSpec::new(vec![
            FeaturePart::vector("fv", 3),
            FeaturePart::histogram("mr8", 2),
        ])
        .unwrap()
    }

    #[test]
    fn concatenation_rules() {
        let s = spec().with_weights(&[2.0]).unwrap();
        let out = concat_l2(&[vec![0.0, 3.0, 4.0], vec![0.5, 0.5]], &s).unwrap();
        assert_eq!(out, vec![0.0, 0.6, 0.8, 1.0, 1.0]);
        let scaled = concat_l2(&[vec![0.0, 15.0, 20.0], vec![0.5, 0.5]], &s).unwrap();
        assert_eq!(out, scaled);
        let zero = concat_l2(&[vec![0.0; 3], vec![0.5, 0.5]], &s).unwrap();
        assert_eq!(&zero[..3], &[0.0, 0.0, 0.0]);

        let unit = FeatureSetSpec::new(vec![FeaturePart::vector("v", 2)]).unwrap();
        assert_eq!(concat_l2(&[vec![0.6, 0.8]], &unit).unwrap(), vec![0.6, 0.8]);
        assert!(concat_l2(&[vec![0.6]], &unit).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(FeatureSetSpec::new(vec![]).is_err());
        let mut p = FeaturePart::histogram("h", 2);
        p.weight = -1.0;
        assert!(FeatureSetSpec::new(vec![p]).is_err());
        assert_eq!(spec().hash(), spec().with_weights(&[0.5]).unwrap().hash());
        let other = FeatureSetSpec::new(vec![FeaturePart::vector("fv", 4)]).unwrap();
        assert_ne!(spec().hash(), other.hash());
    }

    #[test]
    fn cache_roundtrip_and_staleness() {
        let parts = vec![vec![0.25, -1.0, 2.0], vec![0.5, 0.5]];
        let mut buf = Vec::new();
        write_feature_cache(&mut buf, &spec(), &parts).unwrap();
        assert_eq!(read_feature_cache(&mut buf.as_slice(), &spec()).unwrap(), parts);
        let other = FeatureSetSpec::new(vec![FeaturePart::vector("fv", 3), FeaturePart::histogram("hsv", 2)]).unwrap();
        assert!(matches!(read_feature_cache(&mut buf.as_slice(), &other), Err(Error::Format { .. })));
        assert!(read_feature_cache(&mut &buf[..20], &spec()).is_err());
    }

    #[test]
    fn spec_binary_roundtrip() {
        let s = spec().with_weights(&[0.75]).unwrap();
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        assert_eq!(FeatureSetSpec::read(&mut buf.as_slice()).unwrap(), s);
    }
}
