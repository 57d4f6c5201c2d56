use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::binio;
use crate::descriptors::Descriptors;
use crate::error::{Error, Result};

const PCA_MAGIC: &[u8; 8] = b"GMPCA001";

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `out_dim` orthonormal rows of length `in_dim`.
    pub basis: Descriptors,
    /// Variance along each basis row, descending.
    pub eigenvalues: Vec<f64>,
    /// Set when the sample covariance has fewer than `out_dim` nonzero
    /// eigenvalues; the trailing rows then span an arbitrary complement.
    pub rank_deficient: bool,
}

/// Fit on the sample covariance (n - 1 denominator).
pub fn pca_fit(descriptors: &Descriptors, out_dim: usize) -> Result<PcaModel> {
    let (n, d) = (descriptors.len(), descriptors.dim());
    if n < 2 {
        return Err(Error::invalid("PCA needs at least two samples"));
    }
    if out_dim == 0 || out_dim > d {
        return Err(Error::invalid(format!(
            "PCA output dimension {out_dim} not in 1..={d}"
        )));
    }
    let mut mean = vec![0.0; d];
    for row in descriptors.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in descriptors.rows() {
        for ((c, v), m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..d {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > top * 1e-12 && eig.eigenvalues[i] > 0.0)
        .count();
    let rank_deficient = rank < out_dim;
    if rank_deficient {
        log::warn!("PCA: covariance rank {rank} below output dimension {out_dim}");
    }

    let mut basis = Descriptors::with_capacity(d, out_dim);
    let mut eigenvalues = Vec::with_capacity(out_dim);
    for &i in order.iter().take(out_dim) {
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        // Fix the sign so the largest-magnitude component is positive.
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        basis.push(&v)?;
        eigenvalues.push(eig.eigenvalues[i].max(0.0));
    }
    Ok(PcaModel {
        mean,
        basis,
        eigenvalues,
        rank_deficient,
    })
}

impl PcaModel {
    pub fn in_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn out_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.basis
            .rows()
            .map(|b| b.iter().zip(x).zip(&self.mean).map(|((b, x), m)| b * (x - m)).sum())
            .collect()
    }

    /// `y = basis * (x - mean)` for every row.
    pub fn apply(&self, descriptors: &Descriptors) -> Result<Descriptors> {
        if descriptors.dim() != self.in_dim() {
            return Err(Error::invalid(format!(
                "PCA expects {}-dim input, got {}",
                self.in_dim(),
                descriptors.dim()
            )));
        }
        let mut out = Descriptors::with_capacity(self.out_dim(), descriptors.len());
        for row in descriptors.rows() {
            out.push(&self.project(row))?;
        }
        Ok(out)
    }

    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (b, &c) in self.basis.rows().zip(y) {
            for (xi, bi) in x.iter_mut().zip(b) {
                *xi += c * bi;
            }
        }
        x
    }

    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(PCA_MAGIC)?;
        binio::write_u32(out, self.in_dim() as u32)?;
        binio::write_u32(out, self.out_dim() as u32)?;
        binio::write_u32(out, self.rank_deficient as u32)?;
        binio::write_f32s(out, &self.mean)?;
        binio::write_f32s(out, self.basis.data())?;
        binio::write_f32s(out, &self.eigenvalues)
    }

    pub fn read<R: Read>(input: &mut R) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::format("PCA model", e.to_string());
        binio::expect_magic(input, PCA_MAGIC).map_err(fmt)?;
        let d = binio::read_u32(input).map_err(fmt)? as usize;
        let k = binio::read_u32(input).map_err(fmt)? as usize;
        let rank_deficient = binio::read_u32(input).map_err(fmt)? != 0;
        if k == 0 || k > d || d > 1 << 16 {
            return Err(Error::format("PCA model", "bad dimensions"));
        }
        let mean = binio::read_f32_vec(input, d).map_err(fmt)?;
        let basis = Descriptors::new(d, binio::read_f32_vec(input, d * k).map_err(fmt)?)?;
        let eigenvalues = binio::read_f32_vec(input, k).map_err(fmt)?;
        Ok(Self {
            mean,
            basis,
            eigenvalues,
            rank_deficient,
        })
    }

    /// The model exactly as it would be read back from disk.
    pub fn quantized(&self) -> Self {
        let q = |v: &[f64]| v.iter().map(|&x| binio::f32_round(x)).collect::<Vec<_>>();
        Self {
            mean: q(&self.mean),
            basis: Descriptors::new(self.basis.dim(), q(self.basis.data())).unwrap(),
            eigenvalues: q(&self.eigenvalues),
            rank_deficient: self.rank_deficient,
        }
    }
}
