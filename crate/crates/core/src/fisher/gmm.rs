use std::io::{Read, Write};

use rayon::prelude::*;

use crate::binio;
use crate::descriptors::Descriptors;
use crate::error::{Error, Result};
use crate::kmeans::{kmeans_fit, nearest_center};

const GMM_MAGIC: &[u8; 8] = b"GMGMM001";
const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Points per reduction block. Blocks are summed in index order, so the
/// result does not depend on the thread count.
const BLOCK: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub struct GmmConfig {
    pub max_iterations: usize,
    /// Stop once the log-likelihood gain falls below `tolerance * N`.
    pub tolerance: f64,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub variance_floor: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-6,
            variance_floor: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Descriptors,
    pub variances: Descriptors,
}

#[derive(Clone, Debug)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Total log-likelihood of the fit set at each E-step.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
}

struct Stats {
    n: Vec<f64>,
    sx: Vec<f64>,
    sxx: Vec<f64>,
    ll: f64,
}

impl Stats {
    fn zeros(k: usize, d: usize) -> Self {
        Self {
            n: vec![0.0; k],
            sx: vec![0.0; k * d],
            sxx: vec![0.0; k * d],
            ll: 0.0,
        }
    }

    fn add(&mut self, other: &Stats) {
        self.ll += other.ll;
        for (a, b) in self.n.iter_mut().zip(&other.n) {
            *a += b;
        }
        for (a, b) in self.sx.iter_mut().zip(&other.sx) {
            *a += b;
        }
        for (a, b) in self.sxx.iter_mut().zip(&other.sxx) {
            *a += b;
        }
    }
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Descriptors, variances: Descriptors) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k || means.dim() != variances.dim() {
            return Err(Error::invalid("GMM parameter shapes disagree"));
        }
        if weights.iter().any(|&w| !(w > 0.0)) || variances.data().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::invalid("GMM weights and variances must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("GMM weights sum to {total}")));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    pub fn num_modes(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.dim()
    }

    /// Per-mode `log(pi_k) + log N(x | mu_k, diag sigma_k^2)`.
    pub fn component_log_densities(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim() as f64;
        for k in 0..self.num_modes() {
            let mu = self.means.row(k);
            let var = self.variances.row(k);
            let mut quad = 0.0;
            let mut logdet = 0.0;
            for ((xi, m), v) in x.iter().zip(mu).zip(var) {
                let r = xi - m;
                quad += r * r / v;
                logdet += v.ln();
            }
            out[k] = self.weights[k].ln() - 0.5 * (d * LN_2PI + logdet + quad);
        }
    }

    /// Fill `gamma` with posteriors and return `log p(x)`.
    pub fn posteriors(&self, x: &[f64], gamma: &mut [f64]) -> f64 {
        self.component_log_densities(x, gamma);
        let max = gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for g in gamma.iter_mut() {
            *g = (*g - max).exp();
            sum += *g;
        }
        for g in gamma.iter_mut() {
            *g /= sum;
        }
        max + sum.ln()
    }

    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.num_modes()];
        self.posteriors(x, &mut g);
        g
    }

    pub fn log_likelihood(&self, vectors: &Descriptors) -> f64 {
        self.sufficient_stats(vectors, false).ll
    }

    fn sufficient_stats(&self, vectors: &Descriptors, moments: bool) -> Stats {
        let (k, d) = (self.num_modes(), self.dim());
        let blocks: Vec<Stats> = (0..vectors.len().div_ceil(BLOCK))
            .into_par_iter()
            .map(|b| {
                let mut st = Stats::zeros(k, if moments { d } else { 0 });
                let mut gamma = vec![0.0; k];
                for i in b * BLOCK..((b + 1) * BLOCK).min(vectors.len()) {
                    let x = vectors.row(i);
                    st.ll += self.posteriors(x, &mut gamma);
                    if !moments {
                        continue;
                    }
                    for (j, &g) in gamma.iter().enumerate() {
                        st.n[j] += g;
                        if g < 1e-300 {
                            continue;
                        }
                        let sx = &mut st.sx[j * d..(j + 1) * d];
                        let sxx = &mut st.sxx[j * d..(j + 1) * d];
                        for ((a, b), &xi) in sx.iter_mut().zip(sxx.iter_mut()).zip(x) {
                            *a += g * xi;
                            *b += g * xi * xi;
                        }
                    }
                }
                st
            })
            .collect();
        let mut total = Stats::zeros(k, if moments { d } else { 0 });
        for b in &blocks {
            total.add(b);
        }
        total
    }

    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(GMM_MAGIC)?;
        binio::write_u32(out, self.num_modes() as u32)?;
        binio::write_u32(out, self.dim() as u32)?;
        binio::write_f32s(out, &self.weights)?;
        binio::write_f32s(out, self.means.data())?;
        binio::write_f32s(out, self.variances.data())
    }

    pub fn read<R: Read>(input: &mut R) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::format("GMM model", e.to_string());
        binio::expect_magic(input, GMM_MAGIC).map_err(fmt)?;
        let k = binio::read_u32(input).map_err(fmt)? as usize;
        let d = binio::read_u32(input).map_err(fmt)? as usize;
        if k == 0 || d == 0 || k > 1 << 16 || d > 1 << 16 {
            return Err(Error::format("GMM model", "bad dimensions"));
        }
        let mut weights = binio::read_f32_vec(input, k).map_err(fmt)?;
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let means = Descriptors::new(d, binio::read_f32_vec(input, k * d).map_err(fmt)?)?;
        let variances = Descriptors::new(d, binio::read_f32_vec(input, k * d).map_err(fmt)?)?;
        Self::new(weights, means, variances).map_err(|e| Error::format("GMM model", e.to_string()))
    }

    /// The model exactly as it would be read back from disk. Weights are
    /// renormalized after rounding.
    pub fn quantized(&self) -> Self {
        let mut buf = Vec::new();
        self.write(&mut buf).unwrap();
        Self::read(&mut buf.as_slice()).unwrap()
    }
}

fn global_variance(vectors: &Descriptors) -> Vec<f64> {
    let (n, d) = (vectors.len() as f64, vectors.dim());
    let mut mean = vec![0.0; d];
    for row in vectors.rows() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for row in vectors.rows() {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    var
}

/// EM for a diagonal-covariance mixture, initialized from seeded k-means
/// with uniform weights and per-cluster variances.
pub fn gmm_fit_em(vectors: &Descriptors, k: usize, seed: u64, config: &GmmConfig) -> Result<GmmFit> {
    let (n, d) = (vectors.len(), vectors.dim());
    if k == 0 || n < k {
        return Err(Error::invalid(format!("GMM with {k} modes needs at least {k} vectors, got {n}")));
    }
    if n < 10 * k {
        log::warn!("GMM: {n} vectors for {k} modes is below the recommended 10 per mode");
    }
    let global = global_variance(vectors);
    // An all-constant dimension still needs a positive floor.
    let floor: Vec<f64> = global.iter().map(|&v| (v * config.variance_floor).max(1e-12)).collect();

    let km = kmeans_fit(vectors, k, seed)?;
    let mut counts = vec![0usize; k];
    let mut sq = vec![0.0; k * d];
    for row in vectors.rows() {
        let (j, _) = nearest_center(row, &km.centers);
        counts[j] += 1;
        for ((s, x), c) in sq[j * d..(j + 1) * d].iter_mut().zip(row).zip(km.centers.row(j)) {
            *s += (x - c) * (x - c);
        }
    }
    let mut var = Vec::with_capacity(k * d);
    for j in 0..k {
        for t in 0..d {
            let v = if counts[j] >= 2 { sq[j * d + t] / counts[j] as f64 } else { global[t] };
            var.push(v.max(floor[t]));
        }
    }
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: km.centers,
        variances: Descriptors::new(d, var)?,
    };

    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;
    while iterations < config.max_iterations {
        let st = model.sufficient_stats(vectors, true);
        iterations += 1;
        if let Some(&prev) = history.last() {
            // EM never decreases the likelihood; allow for rounding only.
            debug_assert!(
                st.ll >= prev - 1e-9 * prev.abs().max(1.0),
                "EM log-likelihood decreased: {prev} -> {}",
                st.ll
            );
            if st.ll - prev < config.tolerance * n as f64 {
                history.push(st.ll);
                break;
            }
        }
        history.push(st.ll);

        let mut means = model.means.data().to_vec();
        let mut vars = model.variances.data().to_vec();
        let mut weights = vec![0.0; k];
        for j in 0..k {
            let nk = st.n[j];
            weights[j] = (nk / n as f64).max(1e-12);
            if nk < 1e-10 * n as f64 {
                continue;
            }
            for t in 0..d {
                let mu = st.sx[j * d + t] / nk;
                let v = st.sxx[j * d + t] / nk - mu * mu;
                means[j * d + t] = mu;
                vars[j * d + t] = v.max(floor[t]);
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        model = GmmModel {
            weights,
            means: Descriptors::new(d, means)?,
            variances: Descriptors::new(d, vars)?,
        };
    }
    Ok(GmmFit {
        model,
        log_likelihood: history,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian_set(n: usize, mu: &[f64], sigma: f64, seed: u64) -> Descriptors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nd = Normal::new(0.0, sigma).unwrap();
        let mut data = Vec::with_capacity(n * mu.len());
        for _ in 0..n {
            for m in mu {
                data.push(m + nd.sample(&mut rng));
            }
        }
        Descriptors::new(mu.len(), data).unwrap()
    }

    #[test]
    fn single_mode_recovers_mle() {
        let mu = [1.0, -2.0, 5.0];
        let sigma = 0.5;
        let set = gaussian_set(10_000, &mu, sigma, 4);
        let fit = gmm_fit_em(&set, 1, 0, &GmmConfig::default()).unwrap();
        let bound = 3.0 * sigma / (10_000f64).sqrt();
        for t in 0..3 {
            assert!((fit.model.means.row(0)[t] - mu[t]).abs() < bound);
            let v = fit.model.variances.row(0)[t];
            assert!((v / (sigma * sigma) - 1.0).abs() < 0.2);
        }
        // K=1 closed form: the sample mean and biased sample variance.
        let gv = global_variance(&set);
        for t in 0..3 {
            let m: f64 = set.rows().map(|r| r[t]).sum::<f64>() / set.len() as f64;
            assert!((fit.model.means.row(0)[t] - m).abs() < 1e-9);
            assert!((fit.model.variances.row(0)[t] - gv[t]).abs() < 1e-9);
        }
    }

    #[test]
    fn two_modes_separate_and_likelihood_is_monotone() {
        let mut set = gaussian_set(500, &[0.0, 0.0], 1.0, 1);
        set.extend(&gaussian_set(500, &[10.0, 10.0], 1.0, 2)).unwrap();
        let fit = gmm_fit_em(&set, 2, 7, &GmmConfig::default()).unwrap();
        assert!(fit.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));
        let sum: f64 = fit.model.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(fit.model.weights.iter().all(|&w| (w - 0.5).abs() < 0.05));
        for i in (0..set.len()).step_by(37) {
            let g = fit.model.responsibilities(set.row(i));
            assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_floor_holds_for_duplicates() {
        let mut rows = vec![vec![1.0, 2.0]; 50];
        rows.extend((0..50).map(|i| vec![i as f64, (i * 3 % 7) as f64]));
        let set = Descriptors::from_rows(2, &rows).unwrap();
        let gv = global_variance(&set);
        let fit = gmm_fit_em(&set, 4, 3, &GmmConfig::default()).unwrap();
        for row in fit.model.variances.rows() {
            for (v, g) in row.iter().zip(&gv) {
                assert!(*v >= g * 1e-4 * (1.0 - 1e-12));
            }
        }
        assert!(fit.model.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn deterministic_and_roundtrips() {
        let set = gaussian_set(600, &[0.0, 1.0, 2.0], 1.0, 9);
        let a = gmm_fit_em(&set, 3, 11, &GmmConfig::default()).unwrap();
        let b = gmm_fit_em(&set, 3, 11, &GmmConfig::default()).unwrap();
        assert_eq!(a.model, b.model);
        let mut buf = Vec::new();
        a.model.write(&mut buf).unwrap();
        let back = GmmModel::read(&mut buf.as_slice()).unwrap();
        assert_eq!(back, a.model.quantized());
        assert!((back.weights[0] - a.model.weights[0]).abs() < 1e-6);
    }

    #[test]
    fn too_few_vectors() {
        let set = gaussian_set(3, &[0.0], 1.0, 0);
        assert!(matches!(gmm_fit_em(&set, 4, 0, &GmmConfig::default()), Err(Error::InvalidInput(_))));
    }
}
