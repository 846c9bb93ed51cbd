//! ZCA / PCA whitening of local descriptors followed by per-row L2 normalization.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WhiteningMode {
    Zca,
    Pca,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    pub mode: WhiteningMode,
    pub mean: Array1<f64>,
    /// `D x D`; output = projection · (x − mean).
    pub projection: Array2<f64>,
    pub epsilon: f64,
}

/// Unbiased sample covariance (divides by `T − 1`).
pub fn sample_covariance(x: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let t = x.nrows();
    if t < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: t });
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / (t - 1) as f64;
    Ok((mean, cov))
}

pub fn fit_whitening(x: ArrayView2<f64>, mode: WhiteningMode, epsilon: f64) -> Result<WhiteningTransform> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("whitening epsilon must be >= 0, got {epsilon}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("whitening input"));
    }
    let d = x.ncols();
    let (mean, cov) = sample_covariance(x)?;

    let cov_na = DMatrix::from_fn(d, d, |i, j| 0.5 * (cov[[i, j]] + cov[[j, i]]));
    let eig = SymmetricEigen::new(cov_na);

    // descending eigenvalue order, each eigenvector signed so its largest
    // component is positive
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut basis = Array2::<f64>::zeros((d, d)); // columns = eigenvectors
    let mut inv_sqrt = Array1::<f64>::zeros(d);
    for (dst, &src) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(src);
        let pivot = v
            .iter()
            .cloned()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            basis[[i, dst]] = sign * v[i];
        }
        let lambda = eig.eigenvalues[src].max(0.0);
        inv_sqrt[dst] = 1.0 / (lambda + epsilon).sqrt();
    }
    if inv_sqrt.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(
            "whitening scale (singular covariance, use epsilon > 0)",
        ));
    }

    // PCA: Λ^(-1/2) Uᵀ
    let mut pca = basis.t().to_owned();
    for (mut row, s) in pca.outer_iter_mut().zip(inv_sqrt.iter()) {
        row *= *s;
    }
    let projection = match mode {
        WhiteningMode::Pca => pca,
        WhiteningMode::Zca => {
            let mut zca = basis.dot(&pca);
            // exact symmetry
            for i in 0..d {
                for j in i + 1..d {
                    let avg = 0.5 * (zca[[i, j]] + zca[[j, i]]);
                    zca[[i, j]] = avg;
                    zca[[j, i]] = avg;
                }
            }
            zca
        }
    };

    Ok(WhiteningTransform {
        mode,
        mean,
        projection,
        epsilon,
    })
}

impl WhiteningTransform {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `projection · (x − mean)` for every row, without normalization.
    pub fn project(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.ncols(),
            });
        }
        let centered = &x - &self.mean;
        Ok(centered.dot(&self.projection.t()))
    }

    /// Whitens and L2-normalizes each row. Rows that whiten to exactly zero
    /// stay zero.
    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = self.project(x)?;
        l2_normalize_rows(&mut out);
        Ok(out)
    }
}

pub fn l2_normalize_rows(x: &mut Array2<f64>) {
    for mut row in x.outer_iter_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
}
