//! Sieve bases and the affine standardization applied before evaluating them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, sd};

/// `h_j(v) = exp(-z^2) z^(j-1)` with `z = (v - mean) / sd`, `j = 1..=dim`.
pub fn hermite_envelope_basis(v: f64, dim: usize, mean: f64, sd: f64) -> Result<Vec<f64>> {
    if !(sd > 0.0) {
        return Err(Error::InvalidInput(format!("scale must be positive, got {sd}")));
    }
    Ok(hermite_standardized((v - mean) / sd, dim))
}

pub(crate) fn hermite_standardized(z: f64, dim: usize) -> Vec<f64> {
    let env = (-z * z).exp();
    let mut out = Vec::with_capacity(dim);
    let mut pow = 1.0;
    for _ in 0..dim {
        out.push(env * pow);
        pow *= z;
    }
    out
}

/// Indicator basis `(1[v = 0], 1[v = 1])` for a binary variable.
pub fn saturated_binary_basis(v: f64) -> Vec<f64> {
    if v == 0.0 {
        vec![1.0, 0.0]
    } else {
        vec![0.0, 1.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisKind {
    HermiteEnvelope,
    SaturatedBinary,
}

/// `z = W (v - mean)` with `W` lower triangular: diagonal `1/sd` for separate
/// standardization, the inverse Cholesky factor of the covariance for whitening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineStandardizer {
    pub mean: Vec<f64>,
    pub transform: Vec<Vec<f64>>,
}

impl AffineStandardizer {
    pub fn identity(dim: usize) -> Self {
        AffineStandardizer {
            mean: vec![0.0; dim],
            transform: (0..dim)
                .map(|i| (0..dim).map(|j| f64::from(u8::from(i == j))).collect())
                .collect(),
        }
    }

    /// Separate `(mean, sd)` per column of `rows`.
    pub fn diagonal(rows: &[Vec<f64>], dim: usize) -> Result<Self> {
        let mut out = Self::identity(dim);
        for c in 0..dim {
            let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            let s = if col.len() > 1 { sd(&col) } else { 0.0 };
            if !(s > 0.0) {
                return Err(Error::InsufficientVariation(format!(
                    "column {c} has no spread among complete cases"
                )));
            }
            out.mean[c] = mean(&col);
            out.transform[c][c] = 1.0 / s;
        }
        Ok(out)
    }

    /// Joint whitening through the Cholesky factor of the sample covariance.
    pub fn whitening(rows: &[Vec<f64>], dim: usize) -> Result<Self> {
        let n = rows.len();
        if n <= dim {
            return Err(Error::InsufficientData(format!(
                "{n} complete cases for a {dim}-dimensional whitening"
            )));
        }
        let mu: Vec<f64> = (0..dim)
            .map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n as f64)
            .collect();
        let cov = DMatrix::from_fn(dim, dim, |i, j| {
            rows.iter()
                .map(|r| (r[i] - mu[i]) * (r[j] - mu[j]))
                .sum::<f64>()
                / (n as f64 - 1.0)
        });
        let l = cov
            .cholesky()
            .ok_or_else(|| Error::InsufficientVariation("singular covariance for whitening".into()))?
            .l();
        let w = l
            .try_inverse()
            .ok_or_else(|| Error::InsufficientVariation("singular covariance for whitening".into()))?;
        Ok(AffineStandardizer {
            mean: mu,
            transform: (0..dim)
                .map(|i| (0..dim).map(|j| if j <= i { w[(i, j)] } else { 0.0 }).collect())
                .collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.transform
            .iter()
            .map(|row| {
                row.iter()
                    .zip(v.iter().zip(&self.mean))
                    .map(|(w, (x, m))| w * (x - m))
                    .sum()
            })
            .collect()
    }
}

/// Kronecker product with `a` as the outer factor.
pub fn kron(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(x * y);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_at_center_and_one_sd() {
        assert_eq!(hermite_envelope_basis(2.0, 4, 2.0, 3.0).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        let h = hermite_envelope_basis(5.0, 3, 2.0, 3.0).unwrap();
        let e = (-1.0f64).exp();
        for v in h {
            assert!((v - e).abs() < 1e-15);
        }
        let z: f64 = (0.5 - 1.0) / 2.0;
        assert_eq!(hermite_envelope_basis(0.5, 1, 1.0, 2.0).unwrap(), vec![(-z * z).exp()]);
        assert!(hermite_envelope_basis(0.0, 2, 0.0, 0.0).is_err());
    }

    #[test]
    fn whitening_decorrelates() {
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let a = (i as f64 * 0.37).sin();
                let b = (i as f64 * 0.91).cos();
                vec![a, 0.8 * a + 0.3 * b + 2.0]
            })
            .collect();
        let w = AffineStandardizer::whitening(&rows, 2).unwrap();
        let z: Vec<Vec<f64>> = rows.iter().map(|r| w.apply(r)).collect();
        let n = z.len() as f64;
        let m0 = z.iter().map(|r| r[0]).sum::<f64>() / n;
        let m1 = z.iter().map(|r| r[1]).sum::<f64>() / n;
        let c01 = z.iter().map(|r| (r[0] - m0) * (r[1] - m1)).sum::<f64>() / (n - 1.0);
        let c11 = z.iter().map(|r| (r[1] - m1).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(m0.abs() < 1e-12 && m1.abs() < 1e-12);
        assert!(c01.abs() < 1e-10);
        assert!((c11 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn kron_order() {
        assert_eq!(kron(&[1.0, 2.0], &[3.0, 4.0]), vec![3.0, 4.0, 6.0, 8.0]);
    }
}
