use std::io::{Read, Write};

use rayon::prelude::*;

use super::chi2::{chi2_unchecked, resolve_gamma, Gamma, KernelMatrix, SquareMatrix};
use super::features::{FeatureSetSpec, PartKind};
use crate::binio;
use crate::error::{Error, Result};

const MODEL_MAGIC: &[u8; 8] = b"GMSVM001";
const TAU: f64 = 1e-12;

/// How the chi-squared kernel over histogram parts is combined with the
/// linear kernel over vector parts when a feature set has both.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelCombination {
    Product,
    Sum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    pub gamma: Gamma,
    /// Stop when the maximal KKT violation drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub combination: KernelCombination,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 10.0,
            gamma: Gamma::Auto,
            tolerance: 1e-3,
            max_iterations: 10_000_000,
            combination: KernelCombination::Product,
        }
    }
}

impl SvmConfig {
    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::invalid("SVM C, tolerance and iteration limit must be positive"));
        }
        if let Gamma::Fixed(g) = self.gamma {
            if !(g > 0.0) {
                return Err(Error::invalid(format!("kernel gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }
}

/// One binary machine: `f(x) = sum_i coef_i K(x_i, x) + bias` where
/// `coef_i = alpha_i y_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinarySvm {
    pub coef: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    /// Maximal KKT violation at termination.
    pub kkt_gap: f64,
}

impl BinarySvm {
    pub fn decision(&self, kernel_row: &[f64]) -> f64 {
        self.coef.iter().zip(kernel_row).map(|(a, k)| a * k).sum::<f64>() + self.bias
    }
}

/// Soft-margin dual solver with second-order working-set selection on a
/// precomputed kernel matrix.
#[derive(Clone, Debug)]
pub struct SmoSolver {
    pub c: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl SmoSolver {
    pub fn solve(&self, k: &KernelMatrix, y: &[f64]) -> Result<BinarySvm> {
        let n = k.size();
        if y.len() != n || n == 0 {
            return Err(Error::invalid("label count does not match the kernel matrix"));
        }
        if y.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::invalid("binary labels must be +1 or -1"));
        }
        let c = self.c;
        let mut alpha = vec![0.0; n];
        // Gradient of 1/2 a'Qa - e'a with Q_ij = y_i y_j K_ij.
        let mut grad = vec![-1.0; n];
        let up = |a: f64, yi: f64| if yi > 0.0 { a < c } else { a > 0.0 };
        let low = |a: f64, yi: f64| if yi > 0.0 { a > 0.0 } else { a < c };
        let mut iterations = 0;
        let mut gap;
        loop {
            let mut gmax = f64::NEG_INFINITY;
            let mut i = usize::MAX;
            for t in 0..n {
                if up(alpha[t], y[t]) && -y[t] * grad[t] > gmax {
                    gmax = -y[t] * grad[t];
                    i = t;
                }
            }
            let mut gmax2 = f64::NEG_INFINITY;
            let mut j = usize::MAX;
            let mut best_obj = f64::INFINITY;
            if i != usize::MAX {
                for t in 0..n {
                    if !low(alpha[t], y[t]) {
                        continue;
                    }
                    let yg = y[t] * grad[t];
                    gmax2 = gmax2.max(yg);
                    let b = gmax + yg;
                    if b > 0.0 {
                        let mut quad = k.get(i, i) + k.get(t, t) - 2.0 * k.get(i, t);
                        if quad <= 0.0 {
                            quad = TAU;
                        }
                        let obj = -b * b / quad;
                        if obj < best_obj {
                            best_obj = obj;
                            j = t;
                        }
                    }
                }
            }
            gap = gmax + gmax2;
            if i == usize::MAX || j == usize::MAX || gap < self.tolerance {
                break;
            }
            if iterations >= self.max_iterations {
                log::warn!("SMO stopped at the iteration limit with KKT gap {gap:.3e}");
                break;
            }
            iterations += 1;

            let (yi, yj) = (y[i], y[j]);
            let (old_i, old_j) = (alpha[i], alpha[j]);
            let qij = yi * yj * k.get(i, j);
            let (ai, aj);
            if yi != yj {
                let mut quad = k.get(i, i) + k.get(j, j) + 2.0 * qij;
                if quad <= 0.0 {
                    quad = TAU;
                }
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = old_i - old_j;
                let (mut a, mut b) = (old_i + delta, old_j + delta);
                if diff > 0.0 {
                    if b < 0.0 {
                        b = 0.0;
                        a = diff;
                    }
                } else if a < 0.0 {
                    a = 0.0;
                    b = -diff;
                }
                if diff > 0.0 {
                    if a > c {
                        a = c;
                        b = c - diff;
                    }
                } else if b > c {
                    b = c;
                    a = c + diff;
                }
                ai = a;
                aj = b;
            } else {
                let mut quad = k.get(i, i) + k.get(j, j) - 2.0 * qij;
                if quad <= 0.0 {
                    quad = TAU;
                }
                let delta = (grad[i] - grad[j]) / quad;
                let sum = old_i + old_j;
                let (mut a, mut b) = (old_i - delta, old_j + delta);
                if sum > c {
                    if a > c {
                        a = c;
                        b = sum - c;
                    }
                } else if b < 0.0 {
                    b = 0.0;
                    a = sum;
                }
                if sum > c {
                    if b > c {
                        b = c;
                        a = sum - c;
                    }
                } else if a < 0.0 {
                    a = 0.0;
                    b = sum;
                }
                ai = a;
                aj = b;
            }
            alpha[i] = ai;
            alpha[j] = aj;
            let (di, dj) = (ai - old_i, aj - old_j);
            let (ki, kj) = (k.row(i), k.row(j));
            for t in 0..n {
                grad[t] += y[t] * (yi * ki[t] * di + yj * kj[t] * dj);
            }
        }

        // Bias from free vectors, or the midpoint of the feasible interval.
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free_sum, mut free) = (0.0, 0usize);
        for t in 0..n {
            let yg = y[t] * grad[t];
            if alpha[t] >= c {
                if y[t] < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
            } else if alpha[t] <= 0.0 {
                if y[t] > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
            } else {
                free += 1;
                free_sum += yg;
            }
        }
        let rho = if free > 0 { free_sum / free as f64 } else { (ub + lb) / 2.0 };
        Ok(BinarySvm {
            coef: alpha.iter().zip(y).map(|(a, y)| a * y).collect(),
            bias: -rho,
            iterations,
            kkt_gap: gap.max(0.0),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OvaSolution {
    pub machines: Vec<BinarySvm>,
}

impl OvaSolution {
    pub fn num_classes(&self) -> usize {
        self.machines.len()
    }

    pub fn decision_values(&self, kernel_row: &[f64]) -> Vec<f64> {
        self.machines.iter().map(|m| m.decision(kernel_row)).collect()
    }
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// One binary machine per class, class `c` against the rest.
pub fn svm_train_ova(
    kernel: &KernelMatrix,
    labels: &[usize],
    num_classes: usize,
    config: &SvmConfig,
) -> Result<OvaSolution> {
    config.validate()?;
    if num_classes < 2 {
        return Err(Error::invalid("one-vs-all training needs at least two classes"));
    }
    if labels.len() != kernel.size() {
        return Err(Error::invalid(format!(
            "{} labels for a {}-example kernel",
            labels.len(),
            kernel.size()
        )));
    }
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        if l >= num_classes {
            return Err(Error::invalid(format!("label {l} out of range for {num_classes} classes")));
        }
        counts[l] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!("class {c} has no training examples")));
    }
    let solver = SmoSolver {
        c: config.c,
        tolerance: config.tolerance,
        max_iterations: config.max_iterations,
    };
    let machines = (0..num_classes)
        .into_par_iter()
        .map(|c| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
            solver.solve(kernel, &y)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OvaSolution { machines })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub scores: Vec<f64>,
}

/// A trained one-vs-all model over concatenated feature vectors (see
/// `concat_l2`), holding the support vectors needed to evaluate kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct OvaSvmModel {
    pub spec: FeatureSetSpec,
    pub combination: KernelCombination,
    pub gamma: f64,
    pub c: f64,
    support: Vec<Vec<f64>>,
    /// Per class: (index into `support`, coefficient) pairs, and bias.
    machines: Vec<(Vec<(usize, f64)>, f64)>,
}

struct KernelEval<'a> {
    spec: &'a FeatureSetSpec,
    ranges: Vec<(PartKind, std::ops::Range<usize>)>,
    combination: KernelCombination,
}

impl<'a> KernelEval<'a> {
    fn new(spec: &'a FeatureSetSpec, combination: KernelCombination) -> Self {
        let ranges = spec.parts().iter().map(|p| p.kind).zip(spec.ranges()).collect();
        Self { spec, ranges, combination }
    }

    fn has(&self, kind: PartKind) -> bool {
        self.ranges.iter().any(|(k, _)| *k == kind)
    }

    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.ranges
            .iter()
            .filter(|(k, _)| *k == PartKind::Histogram)
            .map(|(_, r)| chi2_unchecked(&a[r.clone()], &b[r.clone()]))
            .sum()
    }

    fn linear(&self, a: &[f64], b: &[f64]) -> f64 {
        self.ranges
            .iter()
            .filter(|(k, _)| *k == PartKind::Vector)
            .map(|(_, r)| a[r.clone()].iter().zip(&b[r.clone()]).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    fn eval(&self, gamma: f64, a: &[f64], b: &[f64]) -> f64 {
        match (self.has(PartKind::Histogram), self.has(PartKind::Vector)) {
            (true, false) => (-gamma * self.distance(a, b)).exp(),
            (false, true) => self.linear(a, b),
            _ => {
                let h = (-gamma * self.distance(a, b)).exp();
                match self.combination {
                    KernelCombination::Product => h * self.linear(a, b),
                    KernelCombination::Sum => h + self.linear(a, b),
                }
            }
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.total_dim() {
            return Err(Error::invalid(format!(
                "feature vector has {} values, model expects {}",
                x.len(),
                self.spec.total_dim()
            )));
        }
        Ok(())
    }
}

impl OvaSvmModel {
    /// Train on concatenated feature vectors produced by `concat_l2` with
    /// `spec` (whose histogram weights are already applied).
    pub fn train(
        examples: &[Vec<f64>],
        labels: &[usize],
        num_classes: usize,
        spec: &FeatureSetSpec,
        config: &SvmConfig,
    ) -> Result<Self> {
        config.validate()?;
        let ke = KernelEval::new(spec, config.combination);
        for x in examples {
            ke.check(x)?;
        }
        let n = examples.len();
        let gamma = if ke.has(PartKind::Histogram) {
            let dist = SquareMatrix::from_fn(n, |i, j| if i == j { 0.0 } else { ke.distance(&examples[i], &examples[j]) });
            resolve_gamma(config.gamma, dist.off_diagonal_mean())?
        } else {
            resolve_gamma(config.gamma, 1.0)?
        };
        let kernel = SquareMatrix::from_fn(n, |i, j| ke.eval(gamma, &examples[i], &examples[j]));
        let solution = svm_train_ova(&kernel, labels, num_classes, config)?;

        let mut used: Vec<usize> = (0..n)
            .filter(|&i| solution.machines.iter().any(|m| m.coef[i] != 0.0))
            .collect();
        used.sort_unstable();
        let mut slot = vec![usize::MAX; n];
        for (s, &i) in used.iter().enumerate() {
            slot[i] = s;
        }
        let machines = solution
            .machines
            .iter()
            .map(|m| {
                let sv = (0..n).filter(|&i| m.coef[i] != 0.0).map(|i| (slot[i], m.coef[i])).collect();
                (sv, m.bias)
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            combination: config.combination,
            gamma,
            c: config.c,
            support: used.iter().map(|&i| examples[i].clone()).collect(),
            machines,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.machines.len()
    }

    pub fn num_support(&self) -> usize {
        self.support.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let ke = KernelEval::new(&self.spec, self.combination);
        ke.check(x)?;
        let krow: Vec<f64> = self.support.iter().map(|s| ke.eval(self.gamma, s, x)).collect();
        let scores: Vec<f64> = self
            .machines
            .iter()
            .map(|(sv, b)| sv.iter().map(|&(i, a)| a * krow[i]).sum::<f64>() + b)
            .collect();
        Ok(Prediction {
            label: argmax(&scores),
            scores,
        })
    }

    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(MODEL_MAGIC)?;
        self.spec.write(out)?;
        binio::write_u32(out, matches!(self.combination, KernelCombination::Sum) as u32)?;
        binio::write_f64s(out, &[self.gamma, self.c])?;
        binio::write_u32(out, self.support.len() as u32)?;
        for s in &self.support {
            binio::write_f64s(out, s)?;
        }
        binio::write_u32(out, self.machines.len() as u32)?;
        for (sv, b) in &self.machines {
            binio::write_f64s(out, &[*b])?;
            binio::write_u32(out, sv.len() as u32)?;
            for &(i, a) in sv {
                binio::write_u32(out, i as u32)?;
                binio::write_f64s(out, &[a])?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(input: &mut R) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::format("SVM model", e.to_string());
        binio::expect_magic(input, MODEL_MAGIC).map_err(fmt)?;
        let spec = FeatureSetSpec::read(input)?;
        let combination = match binio::read_u32(input).map_err(fmt)? {
            0 => KernelCombination::Product,
            1 => KernelCombination::Sum,
            _ => return Err(Error::format("SVM model", "unknown kernel combination")),
        };
        let p = binio::read_f64_vec(input, 2).map_err(fmt)?;
        let dim = spec.total_dim();
        let nsv = binio::read_u32(input).map_err(fmt)? as usize;
        let support = (0..nsv)
            .map(|_| binio::read_f64_vec(input, dim).map_err(fmt))
            .collect::<Result<Vec<_>>>()?;
        let classes = binio::read_u32(input).map_err(fmt)? as usize;
        let mut machines = Vec::with_capacity(classes.min(1 << 16));
        for _ in 0..classes {
            let b = binio::read_f64_vec(input, 1).map_err(fmt)?[0];
            let count = binio::read_u32(input).map_err(fmt)? as usize;
            let mut sv = Vec::with_capacity(count.min(nsv));
            for _ in 0..count {
                let i = binio::read_u32(input).map_err(fmt)? as usize;
                if i >= nsv {
                    return Err(Error::format("SVM model", "support index out of range"));
                }
                sv.push((i, binio::read_f64_vec(input, 1).map_err(fmt)?[0]));
            }
            machines.push((sv, b));
        }
        Ok(Self {
            spec,
            combination,
            gamma: p[0],
            c: p[1],
            support,
            machines,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::features::{concat_l2, FeaturePart};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_kernel(points: &[[f64; 2]]) -> KernelMatrix {
        SquareMatrix::from_fn(points.len(), |i, j| points[i][0] * points[j][0] + points[i][1] * points[j][1])
    }

    fn toy(seed: u64, n: usize) -> (Vec<[f64; 2]>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let off = if c == 0 { 2.0 } else { -2.0 };
            pts.push([off + rng.random::<f64>() - 0.5, rng.random::<f64>() * 4.0 - 2.0]);
            labels.push(c);
        }
        (pts, labels)
    }

    fn kernel_row(pts: &[[f64; 2]], x: [f64; 2]) -> Vec<f64> {
        pts.iter().map(|p| p[0] * x[0] + p[1] * x[1]).collect()
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let (pts, labels) = toy(1, 40);
        let k = linear_kernel(&pts);
        let cfg = SvmConfig::default();
        let sol = svm_train_ova(&k, &labels, 2, &cfg).unwrap();
        assert_eq!(sol.num_classes(), 2);
        for (i, p) in pts.iter().enumerate() {
            let s = sol.decision_values(&kernel_row(&pts, *p));
            assert_eq!(argmax(&s), labels[i]);
        }
        for m in &sol.machines {
            assert!(m.coef.iter().all(|a| a.abs() <= cfg.c + 1e-12));
            assert!(m.kkt_gap < cfg.tolerance);
        }
    }

    #[test]
    fn dual_satisfies_kkt_on_overlapping_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<[f64; 2]> = (0..60).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let y: Vec<f64> = pts.iter().map(|p| if p[0] + 0.3 * rng.random::<f64>() > 0.6 { 1.0 } else { -1.0 }).collect();
        let k = SquareMatrix::from_fn(60, |i, j| {
            let d = (pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2);
            (-2.0 * d).exp()
        });
        let solver = SmoSolver { c: 1.0, tolerance: 1e-3, max_iterations: 1_000_000 };
        let m = solver.solve(&k, &y).unwrap();
        assert!(m.kkt_gap < 1e-3);
        let sum: f64 = m.coef.iter().sum();
        assert!(sum.abs() < 1e-9, "equality constraint {sum}");
        for (i, a) in m.coef.iter().enumerate() {
            let alpha = a * y[i];
            assert!((-1e-12..=1.0 + 1e-12).contains(&alpha));
            // Margin condition with slack for the stopping tolerance.
            let f = m.decision(k.row(i));
            if alpha < 1e-9 {
                assert!(y[i] * f >= 1.0 - 1e-3 - 1e-9);
            } else if alpha > 1.0 - 1e-9 {
                assert!(y[i] * f <= 1.0 + 1e-3 + 1e-9);
            }
        }
    }

    #[test]
    fn duplicated_training_set_predicts_identically() {
        let (pts, labels) = toy(2, 30);
        let (test, _) = toy(3, 50);
        let mut dup = pts.clone();
        dup.extend(pts.iter().copied());
        let mut dup_labels = labels.clone();
        dup_labels.extend(labels.iter().copied());
        let cfg = SvmConfig::default();
        let a = svm_train_ova(&linear_kernel(&pts), &labels, 2, &cfg).unwrap();
        let b = svm_train_ova(&linear_kernel(&dup), &dup_labels, 2, &cfg).unwrap();
        for x in test {
            let sa = a.decision_values(&kernel_row(&pts, x));
            let sb = b.decision_values(&kernel_row(&dup, x));
            assert_eq!(argmax(&sa), argmax(&sb));
        }
    }

    #[test]
    fn rejects_missing_class() {
        let (pts, _) = toy(1, 6);
        let k = linear_kernel(&pts);
        assert!(svm_train_ova(&k, &[0, 0, 0, 2, 2, 2], 3, &SvmConfig::default()).is_err());
        assert!(svm_train_ova(&k, &[0; 6], 1, &SvmConfig::default()).is_err());
    }

    fn hist_model(combination: KernelCombination) -> (OvaSvmModel, Vec<Vec<f64>>, Vec<usize>) {
        let spec = FeatureSetSpec::new(vec![FeaturePart::histogram("h", 3), FeaturePart::vector("v", 2)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut xs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..30 {
            let c = i % 3;
            let mut h = vec![0.1; 3];
            h[c] = 0.8;
            h.iter_mut().for_each(|v| *v += rng.random::<f64>() * 0.05);
            let v = vec![1.0 + rng.random::<f64>(), c as f64];
            xs.push(concat_l2(&[h, v], &spec).unwrap());
            labels.push(c);
        }
        let cfg = SvmConfig { combination, ..SvmConfig::default() };
        (OvaSvmModel::train(&xs, &labels, 3, &spec, &cfg).unwrap(), xs, labels)
    }

    #[test]
    fn model_predicts_roundtrips_and_is_deterministic() {
        for comb in [KernelCombination::Product, KernelCombination::Sum] {
            let (model, xs, labels) = hist_model(comb);
            assert_eq!(model.num_classes(), 3);
            for (x, &l) in xs.iter().zip(&labels) {
                let p = model.predict(x).unwrap();
                assert_eq!(p.label, l);
                assert_eq!(p.scores.len(), 3);
                assert_eq!(model.predict(x).unwrap(), p);
            }
            let mut buf = Vec::new();
            model.write(&mut buf).unwrap();
            let back = OvaSvmModel::read(&mut buf.as_slice()).unwrap();
            assert_eq!(back, model);
            assert!(model.predict(&[0.0; 4]).is_err());
        }
    }
}
