//! Seeded k-means++ with Lloyd refinement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::descriptors::{squared_distance, Descriptors};
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 300;
pub const MOVE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub centers: Descriptors,
    /// Distortion (sum of squared distances) after each assignment step.
    pub distortion: Vec<f64>,
    pub iterations: usize,
}

/// Index and squared distance of the nearest center; ties go to the lowest
/// index.
#[inline]
pub fn nearest_center(x: &[f64], centers: &Descriptors) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.rows().enumerate() {
        let d = squared_distance(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(points: &Descriptors, centers: &Descriptors) -> Vec<(usize, f64)> {
    (0..points.len())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| nearest_center(points.row(i), centers))
        .collect()
}

fn plus_plus_init(points: &Descriptors, k: usize, rng: &mut ChaCha8Rng) -> Descriptors {
    let n = points.len();
    let mut centers = Descriptors::with_capacity(points.dim(), k);
    let first = rng.random_range(0..n);
    centers.push(points.row(first)).unwrap();
    let mut best: Vec<f64> = (0..n)
        .map(|i| squared_distance(points.row(i), points.row(first)))
        .collect();
    while centers.len() < k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in best.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // Rounding can leave `acc` just short of `target`.
            chosen.unwrap_or_else(|| best.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        centers.push(points.row(pick)).unwrap();
        let c = centers.row(centers.len() - 1).to_vec();
        for (i, b) in best.iter_mut().enumerate() {
            let d = squared_distance(points.row(i), &c);
            if d < *b {
                *b = d;
            }
        }
    }
    centers
}

/// Cluster `points` into `k` centers. Deterministic for a fixed seed.
pub fn kmeans_fit(points: &Descriptors, k: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if points.len() < k {
        return Err(Error::invalid(format!(
            "k-means needs at least {} points, got {}",
            k,
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = points.dim();
    let mut centers = plus_plus_init(points, k, &mut rng);
    let mut distortion: Vec<f64> = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let assignment = assign(points, &centers);
        let d: f64 = assignment.iter().map(|a| a.1).sum();
        if let Some(&prev) = distortion.last() {
            debug_assert!(
                d <= prev + 1e-9 * prev.abs().max(1.0),
                "k-means distortion increased: {prev} -> {d}"
            );
        }
        distortion.push(d);

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &(c, _)) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        let mut next = Vec::with_capacity(k * dim);
        for c in 0..k {
            if counts[c] > 0 {
                next.extend(sums[c * dim..(c + 1) * dim].iter().map(|s| s / counts[c] as f64));
            } else {
                next.extend_from_slice(centers.row(c));
            }
        }
        // Empty clusters take over the points farthest from their centers.
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] == 0 {
                let far = assignment
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken.contains(i))
                    .fold(None::<(usize, f64)>, |acc, (i, a)| match acc {
                        Some((_, d)) if d >= a.1 => acc,
                        _ => Some((i, a.1)),
                    });
                if let Some((i, _)) = far {
                    taken.push(i);
                    next[c * dim..(c + 1) * dim].copy_from_slice(points.row(i));
                }
            }
        }
        let next = Descriptors::new(dim, next)?;
        let moved = centers
            .rows()
            .zip(next.rows())
            .map(|(a, b)| squared_distance(a, b))
            .fold(0.0, f64::max)
            .sqrt();
        centers = next;
        if moved < MOVE_TOLERANCE {
            break;
        }
    }
    Ok(KMeansFit {
        centers,
        distortion,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> (Descriptors, [f64; 2], [f64; 2]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut pts = Descriptors::empty(2);
        let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
        for i in 0..n {
            let s = if i % 2 == 0 { 10.0 } else { -10.0 };
            let p = [s + noise.sample(&mut rng), s + noise.sample(&mut rng)];
            let acc = if i % 2 == 0 { &mut a } else { &mut b };
            acc[0] += p[0] / (n / 2) as f64;
            acc[1] += p[1] / (n / 2) as f64;
            pts.push(&p).unwrap();
        }
        (pts, a, b)
    }

    #[test]
    fn single_center_is_the_mean() {
        let pts = Descriptors::new(2, vec![0.0, 0.0, 2.0, 0.0, 1.0, 3.0]).unwrap();
        let fit = kmeans_fit(&pts, 1, 9).unwrap();
        assert!((fit.centers.row(0)[0] - 1.0).abs() < 1e-12);
        assert!((fit.centers.row(0)[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_equal_to_n_recovers_points() {
        let pts = Descriptors::new(1, vec![4.0, -1.0, 7.5, 0.25]).unwrap();
        let fit = kmeans_fit(&pts, 4, 3).unwrap();
        assert_eq!(*fit.distortion.last().unwrap(), 0.0);
        let mut got: Vec<f64> = fit.centers.data().to_vec();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![-1.0, 0.25, 4.0, 7.5]);
    }

    #[test]
    fn two_blobs() {
        let (pts, a, b) = blobs(400, 5);
        let fit = kmeans_fit(&pts, 2, 11).unwrap();
        // Oracle: the optimal 2-partition is the blob membership itself.
        let close = |c: &[f64], m: [f64; 2]| ((c[0] - m[0]).powi(2) + (c[1] - m[1]).powi(2)).sqrt() < 0.2;
        let (c0, c1) = (fit.centers.row(0), fit.centers.row(1));
        assert!((close(c0, a) && close(c1, b)) || (close(c0, b) && close(c1, a)));
    }

    #[test]
    fn distortion_monotone_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..3000).map(|_| rng.random::<f64>()).collect();
        let pts = Descriptors::new(3, data).unwrap();
        let a = kmeans_fit(&pts, 12, 42).unwrap();
        for w in a.distortion.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        let b = kmeans_fit(&pts, 12, 42).unwrap();
        assert_eq!(a.centers, b.centers);
    }

    #[test]
    fn too_few_points() {
        let pts = Descriptors::new(1, vec![1.0, 2.0]).unwrap();
        assert!(matches!(kmeans_fit(&pts, 3, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn duplicate_points_do_not_break_init() {
        let pts = Descriptors::new(1, vec![1.0; 10]).unwrap();
        let fit = kmeans_fit(&pts, 3, 0).unwrap();
        assert_eq!(fit.centers.len(), 3);
        assert_eq!(*fit.distortion.last().unwrap(), 0.0);
    }
}
