use crate::descriptors::{l2_norm, Descriptors};
use crate::error::{Error, Result};
use crate::geometry::DenseNormalMap;

use super::gmm::GmmModel;

#[derive(Clone, Debug, PartialEq)]
pub struct FisherVector {
    /// Mean-deviation block (K x D) followed by the variance-deviation block.
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl FisherVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Fisher statistics before signed square root and normalization:
/// `1/(N sqrt(pi_k)) sum gamma z` and `1/(N sqrt(2 pi_k)) sum gamma (z^2 - 1)`
/// with `z = (x - mu_k) / sigma_k`.
pub fn fisher_raw(vectors: &Descriptors, gmm: &GmmModel) -> Result<Vec<f64>> {
    if vectors.is_empty() {
        return Err(Error::invalid("Fisher encoding of an empty descriptor set"));
    }
    let (k, d) = (gmm.num_modes(), gmm.dim());
    if vectors.dim() != d {
        return Err(Error::invalid(format!(
            "GMM is {d}-dimensional, descriptors are {}",
            vectors.dim()
        )));
    }
    let sigma: Vec<f64> = gmm.variances.data().iter().map(|v| v.sqrt()).collect();
    let mut out = vec![0.0; 2 * k * d];
    let (gmu, gsig) = out.split_at_mut(k * d);
    let mut gamma = vec![0.0; k];
    for x in vectors.rows() {
        gmm.posteriors(x, &mut gamma);
        for (j, &g) in gamma.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let mu = gmm.means.row(j);
            let s = &sigma[j * d..(j + 1) * d];
            for t in 0..d {
                let z = (x[t] - mu[t]) / s[t];
                gmu[j * d + t] += g * z;
                gsig[j * d + t] += g * (z * z - 1.0);
            }
        }
    }
    let n = vectors.len() as f64;
    for j in 0..k {
        let a = 1.0 / (n * gmm.weights[j].sqrt());
        let b = 1.0 / (n * (2.0 * gmm.weights[j]).sqrt());
        gmu[j * d..(j + 1) * d].iter_mut().for_each(|v| *v *= a);
        gsig[j * d..(j + 1) * d].iter_mut().for_each(|v| *v *= b);
    }
    Ok(out)
}

/// Improved Fisher vector: raw statistics, signed square root, then L2
/// normalization. An all-zero vector stays zero and unnormalized.
pub fn encode_ifv(vectors: &Descriptors, gmm: &GmmModel) -> Result<FisherVector> {
    let mut values = fisher_raw(vectors, gmm)?;
    values.iter_mut().for_each(|v| *v = v.signum() * v.abs().sqrt());
    let norm = l2_norm(&values);
    let normalized = norm > 0.0;
    if normalized {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(FisherVector { values, normalized })
}

/// Append the normal at each descriptor's (rounded) pixel location.
pub fn fvn_descriptors(
    reduced: &Descriptors,
    normals: &DenseNormalMap,
    locations: &[(f64, f64)],
) -> Result<Descriptors> {
    if locations.len() != reduced.len() {
        return Err(Error::invalid(format!(
            "{} descriptors but {} locations",
            reduced.len(),
            locations.len()
        )));
    }
    let dim = reduced.dim() + 3;
    let mut out = Descriptors::with_capacity(dim, reduced.len());
    let mut row = Vec::with_capacity(dim);
    for (desc, &(x, y)) in reduced.rows().zip(locations) {
        let (px, py) = (x.round(), y.round());
        if !(px >= 0.0 && py >= 0.0 && (px as usize) < normals.width() && (py as usize) < normals.height()) {
            return Err(Error::invalid(format!(
                "descriptor location ({x}, {y}) outside the {}x{} normal map",
                normals.width(),
                normals.height()
            )));
        }
        let n = normals.get(px as usize, py as usize);
        row.clear();
        row.extend_from_slice(desc);
        row.extend_from_slice(&[n.x, n.y, n.z]);
        out.push(&row)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::NormalFrame;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_gmm() -> GmmModel {
        GmmModel::new(
            vec![0.3, 0.7],
            Descriptors::new(3, vec![0.0, 0.5, -1.0, 1.0, -0.5, 0.8]).unwrap(),
            Descriptors::new(3, vec![0.5, 1.2, 0.8, 1.5, 0.4, 0.9]).unwrap(),
        )
        .unwrap()
    }

    fn random_vectors(n: usize, d: usize, seed: u64) -> Descriptors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Descriptors::new(d, (0..n * d).map(|_| rng.random::<f64>() * 3.0 - 1.5).collect()).unwrap()
    }

    /// `(1/N) sum log p(x)` with the given means and standard deviations.
    fn mean_log_likelihood(x: &Descriptors, weights: &[f64], mu: &[f64], sd: &[f64]) -> f64 {
        let var: Vec<f64> = sd.iter().map(|s| s * s).collect();
        let g = GmmModel::new(
            weights.to_vec(),
            Descriptors::new(x.dim(), mu.to_vec()).unwrap(),
            Descriptors::new(x.dim(), var).unwrap(),
        )
        .unwrap();
        g.log_likelihood(x) / x.len() as f64
    }

    #[test]
    fn raw_statistics_match_finite_differences() {
        let gmm = small_gmm();
        let x = random_vectors(50, 3, 5);
        let raw = fisher_raw(&x, &gmm).unwrap();
        let (k, d) = (2, 3);
        let mu = gmm.means.data().to_vec();
        let sd: Vec<f64> = gmm.variances.data().iter().map(|v| v.sqrt()).collect();
        let h = 1e-5;
        for i in 0..k * d {
            let j = i / d;
            let (mut up, mut dn) = (mu.clone(), mu.clone());
            up[i] += h;
            dn[i] -= h;
            let dl = (mean_log_likelihood(&x, &gmm.weights, &up, &sd)
                - mean_log_likelihood(&x, &gmm.weights, &dn, &sd))
                / (2.0 * h);
            let want = sd[i] / gmm.weights[j].sqrt() * dl;
            assert!((raw[i] - want).abs() <= 1e-4 * want.abs().max(1e-3), "mu {i}: {} vs {want}", raw[i]);

            let (mut up, mut dn) = (sd.clone(), sd.clone());
            up[i] += h;
            dn[i] -= h;
            let dl = (mean_log_likelihood(&x, &gmm.weights, &mu, &up)
                - mean_log_likelihood(&x, &gmm.weights, &mu, &dn))
                / (2.0 * h);
            let want = sd[i] / (2.0 * gmm.weights[j]).sqrt() * dl;
            let got = raw[k * d + i];
            assert!((got - want).abs() <= 1e-4 * want.abs().max(1e-3), "sigma {i}: {got} vs {want}");
        }
    }

    #[test]
    fn vectors_at_mean_zero_mean_block() {
        let gmm = GmmModel::new(
            vec![1.0],
            Descriptors::new(2, vec![0.5, -0.5]).unwrap(),
            Descriptors::new(2, vec![1.0, 2.0]).unwrap(),
        )
        .unwrap();
        let x = Descriptors::from_rows(2, &[[0.5, -0.5]; 4]).unwrap();
        let fv = encode_ifv(&x, &gmm).unwrap();
        assert_eq!(fv.len(), 4);
        assert!(fv.values[..2].iter().all(|&v| v == 0.0));
        assert!(fv.values[2..].iter().all(|&v| v < 0.0));
        assert!((l2_norm(&fv.values) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        let gmm = small_gmm();
        assert!(encode_ifv(&Descriptors::empty(3), &gmm).is_err());
        assert!(encode_ifv(&random_vectors(4, 2, 0), &gmm).is_err());
    }

    #[test]
    fn fvn_appends_normals() {
        let reduced = Descriptors::new(80, vec![0.0; 80 * 3]).unwrap();
        let normals = DenseNormalMap::constant(20, 20, NormalFrame::Camera, Vector3::new(0.0, 0.0, -1.0)).unwrap();
        let out = fvn_descriptors(&reduced, &normals, &[(7.5, 7.5), (0.0, 19.4), (11.5, 3.5)]).unwrap();
        assert_eq!(out.dim(), 83);
        for row in out.rows() {
            assert!(row[..80].iter().all(|&v| v == 0.0));
            assert_eq!(&row[80..], &[0.0, 0.0, -1.0]);
        }
        assert!(fvn_descriptors(&reduced, &normals, &[(7.5, 7.5), (0.0, 19.6), (1.0, 1.0)]).is_err());
    }

    proptest! {
        #[test]
        fn permutation_and_duplication_invariance(seed in 0u64..1000, n in 2usize..30) {
            let gmm = small_gmm();
            let x = random_vectors(n, 3, seed);
            let base = encode_ifv(&x, &gmm).unwrap();
            prop_assert!((l2_norm(&base.values) - 1.0).abs() < 1e-9);

            let mut idx: Vec<usize> = (0..n).rev().collect();
            idx.rotate_left(seed as usize % n);
            let shuffled = encode_ifv(&x.select(&idx), &gmm).unwrap();
            let mut doubled = x.clone();
            doubled.extend(&x).unwrap();
            let doubled = encode_ifv(&doubled, &gmm).unwrap();
            for ((a, b), c) in base.values.iter().zip(&shuffled.values).zip(&doubled.values) {
                prop_assert!((a - b).abs() < 1e-10);
                prop_assert!((a - c).abs() < 1e-10);
            }

            let raw = fisher_raw(&x, &gmm).unwrap();
            for (r, v) in raw.iter().zip(&base.values) {
                prop_assert_eq!(r.signum() == v.signum() || *r == 0.0, true);
                prop_assert_eq!(*r == 0.0, *v == 0.0);
            }
        }
    }
}
