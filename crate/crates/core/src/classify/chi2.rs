use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_WEIGHT_GRID: [f64; 7] = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0];
/// Up to this many features the weight grid is searched exhaustively;
/// beyond it, by coordinate ascent.
const EXHAUSTIVE_FEATURES: usize = 4;

/// `1/2 sum (a - b)^2 / (a + b)`, skipping bins where `a + b == 0`.
pub fn chi2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "chi-squared distance between lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(chi2_unchecked(a, b))
}

#[inline]
pub(crate) fn chi2_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let mut d = 0.0;
    for (x, y) in a.iter().zip(b) {
        let s = x + y;
        if s != 0.0 {
            let t = x - y;
            d += t * t / s;
        }
    }
    0.5 * d
}

/// Dense square matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

pub type DistanceMatrix = SquareMatrix;
pub type KernelMatrix = SquareMatrix;

impl SquareMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::invalid(format!("{} entries for a {n}x{n} matrix", data.len())));
        }
        Ok(Self { n, data })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (i..n).map(|j| f(i, j)).collect())
            .collect();
        let mut data = vec![0.0; n * n];
        for (i, row) in upper.iter().enumerate() {
            for (off, &v) in row.iter().enumerate() {
                data[i * n + i + off] = v;
                data[(i + off) * n + i] = v;
            }
        }
        Self { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (i + 1..self.n).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    /// Mean of the off-diagonal entries.
    pub fn off_diagonal_mean(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    s += self.get(i, j);
                }
            }
        }
        s / (self.n * (self.n - 1)) as f64
    }

    fn validate_distance(&self) -> Result<()> {
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        if self.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("distance matrix has negative or non-finite entries"));
        }
        if !self.is_symmetric(1e-9 * scale) {
            return Err(Error::invalid("distance matrix is not symmetric"));
        }
        if (0..self.n).any(|i| self.get(i, i) > 1e-9 * scale) {
            return Err(Error::invalid("distance matrix has a nonzero diagonal"));
        }
        Ok(())
    }
}

/// Pairwise chi-squared distances, computed once and reused across the
/// weight search and kernel construction.
pub fn distance_matrix<H: AsRef<[f64]> + Sync>(histograms: &[H]) -> Result<DistanceMatrix> {
    if let Some(first) = histograms.first() {
        let len = first.as_ref().len();
        if histograms.iter().any(|h| h.as_ref().len() != len) {
            return Err(Error::invalid("histograms differ in length"));
        }
    }
    Ok(SquareMatrix::from_fn(histograms.len(), |i, j| {
        if i == j {
            0.0
        } else {
            chi2_unchecked(histograms[i].as_ref(), histograms[j].as_ref())
        }
    }))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gamma {
    /// `1 / mean off-diagonal combined distance`.
    Auto,
    Fixed(f64),
}

fn combine(distances: &[DistanceMatrix], weights: &[f64]) -> Result<DistanceMatrix> {
    if distances.is_empty() || distances.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} distance matrices for {} weights",
            distances.len(),
            weights.len()
        )));
    }
    let n = distances[0].size();
    if distances.iter().any(|d| d.size() != n) {
        return Err(Error::invalid("distance matrices differ in size"));
    }
    let mut data = vec![0.0; n * n];
    for (d, &w) in distances.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (o, v) in data.iter_mut().zip(d.data()) {
            *o += w * v;
        }
    }
    SquareMatrix::new(n, data)
}

pub(crate) fn resolve_gamma(gamma: Gamma, mean_distance: f64) -> Result<f64> {
    match gamma {
        Gamma::Fixed(g) if g > 0.0 && g.is_finite() => Ok(g),
        Gamma::Fixed(g) => Err(Error::invalid(format!("kernel gamma must be positive, got {g}"))),
        Gamma::Auto if mean_distance > 0.0 && mean_distance.is_finite() => Ok(1.0 / mean_distance),
        Gamma::Auto => {
            log::warn!("all training examples are identical; using gamma = 1");
            Ok(1.0)
        }
    }
}

/// `K(i, j) = exp(-gamma sum_f w_f D_f(i, j))`, returning the resolved gamma.
pub fn chi2_kernel_matrix(
    distances: &[DistanceMatrix],
    weights: &[f64],
    gamma: Gamma,
) -> Result<(KernelMatrix, f64)> {
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::invalid("feature weights must be nonnegative"));
    }
    let combined = combine(distances, weights)?;
    let g = resolve_gamma(gamma, combined.off_diagonal_mean())?;
    let n = combined.size();
    let data = combined.data().iter().map(|d| (-g * d).exp()).collect();
    Ok((SquareMatrix::new(n, data)?, g))
}

/// Leave-one-out nearest-neighbor accuracy; ties go to the lowest index.
pub fn loo_accuracy(distance: &DistanceMatrix, labels: &[usize]) -> f64 {
    let n = distance.size();
    if n < 2 {
        return 0.0;
    }
    let correct = (0..n)
        .filter(|&i| {
            let row = distance.row(i);
            let mut best = (usize::MAX, f64::INFINITY);
            for (j, &d) in row.iter().enumerate() {
                if j != i && d < best.1 {
                    best = (j, d);
                }
            }
            best.0 != usize::MAX && labels[best.0] == labels[i]
        })
        .count();
    correct as f64 / n as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightSearch {
    pub weights: Vec<f64>,
    pub accuracy: f64,
    pub combos_evaluated: usize,
}

fn accuracy_of(distances: &[DistanceMatrix], combo: &[usize], grid: &[f64], labels: &[usize]) -> f64 {
    let w: Vec<f64> = combo.iter().map(|&g| grid[g]).collect();
    loo_accuracy(&combine(distances, &w).unwrap(), labels)
}

/// Grid search over per-feature weights maximizing leave-one-out 1-NN
/// accuracy under `sum_f w_f D_f`. The all-zero combination is skipped.
/// Ties go to the lexicographically smallest weight vector.
pub fn learn_weights_loo(
    distances: &[DistanceMatrix],
    labels: &[usize],
    grid: &[f64],
) -> Result<WeightSearch> {
    if distances.is_empty() {
        return Err(Error::invalid("weight search needs at least one feature"));
    }
    let mut grid: Vec<f64> = grid.to_vec();
    if grid.is_empty() || grid.iter().any(|&g| !(g >= 0.0) || !g.is_finite()) {
        return Err(Error::invalid("weight grid must be nonempty and nonnegative"));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.iter().all(|&g| g == 0.0) {
        return Err(Error::invalid("weight grid has no positive value"));
    }
    for d in distances {
        d.validate_distance()?;
        if d.size() != labels.len() {
            return Err(Error::invalid(format!(
                "{} labels for a {}-example distance matrix",
                labels.len(),
                d.size()
            )));
        }
    }
    let f = distances.len();
    let g = grid.len();
    let nonzero = |c: &[usize]| c.iter().any(|&i| grid[i] != 0.0);

    let (best, accuracy, evaluated) = if f <= EXHAUSTIVE_FEATURES {
        let total = g.pow(f as u32);
        // Index t enumerates combos in lexicographic order of grid indices.
        let combos: Vec<Vec<usize>> = (0..total)
            .map(|mut t| {
                let mut c = vec![0; f];
                for slot in c.iter_mut().rev() {
                    *slot = t % g;
                    t /= g;
                }
                c
            })
            .filter(|c| nonzero(c))
            .collect();
        let scores: Vec<f64> = combos
            .par_iter()
            .map(|c| accuracy_of(distances, c, &grid, labels))
            .collect();
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        (combos[best].clone(), scores[best], combos.len())
    } else {
        let start = grid
            .iter()
            .position(|&v| v == 1.0)
            .unwrap_or_else(|| grid.iter().position(|&v| v > 0.0).unwrap());
        let mut combo = vec![start; f];
        let mut acc = accuracy_of(distances, &combo, &grid, labels);
        let mut evaluated = 1;
        for _round in 0..20 {
            let mut changed = false;
            for feat in 0..f {
                let trials: Vec<(usize, f64)> = (0..g)
                    .into_par_iter()
                    .filter_map(|v| {
                        let mut c = combo.clone();
                        c[feat] = v;
                        nonzero(&c).then(|| (v, accuracy_of(distances, &c, &grid, labels)))
                    })
                    .collect();
                evaluated += trials.len();
                let (mut bv, mut ba) = (combo[feat], acc);
                for &(v, a) in &trials {
                    if a > ba || (a == ba && v < bv) {
                        bv = v;
                        ba = a;
                    }
                }
                if bv != combo[feat] {
                    combo[feat] = bv;
                    acc = ba;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        (combo, acc, evaluated)
    };
    Ok(WeightSearch {
        weights: best.iter().map(|&i| grid[i]).collect(),
        accuracy,
        combos_evaluated: evaluated,
    })
}
