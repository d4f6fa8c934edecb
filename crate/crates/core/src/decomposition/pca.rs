use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{covariance, row_major, sorted_symmetric_eigen};

/// Principal axes of the training features.
///
/// Loadings are the covariance eigenvectors (`d x q`, orthonormal columns)
/// for the `q` largest eigenvalues. Each column is signed so that its
/// largest-magnitude entry is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub means: Vec<f64>,
    #[serde(with = "row_major")]
    pub loadings: DMatrix<f64>,
    /// Covariance eigenvalues of the retained components.
    pub variances: Vec<f64>,
    /// `variances[i] / trace(cov)`.
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn components(&self) -> usize {
        self.loadings.ncols()
    }

    /// Sum of the retained explained-variance ratios.
    pub fn total_explained(&self) -> f64 {
        self.explained_variance_ratio.iter().sum()
    }

    /// Projects `v - means` onto the loadings.
    pub fn transform(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(invalid(format!(
                "vector dimension {} does not match PCA dimension {}",
                v.len(),
                self.dim()
            )));
        }
        let centered = DVector::from_iterator(v.len(), v.iter().zip(&self.means).map(|(x, m)| x - m));
        Ok((self.loadings.tr_mul(&centered)).iter().copied().collect())
    }

    /// `means + loadings * y`.
    pub fn inverse_transform(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.components() {
            return Err(invalid(format!(
                "component vector has length {}, expected {}",
                y.len(),
                self.components()
            )));
        }
        let back = &self.loadings * DVector::from_column_slice(y);
        Ok(back.iter().zip(&self.means).map(|(b, m)| b + m).collect())
    }

    /// Row-wise transform of an `n x d` matrix.
    pub fn transform_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(invalid(format!(
                "matrix has {} columns, expected {}",
                x.ncols(),
                self.dim()
            )));
        }
        let mut centered = x.clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.means[j]);
        }
        Ok(centered * &self.loadings)
    }
}

/// Fits `q` principal components to the rows of `x` (`n x d`).
pub fn pca_fit(x: &DMatrix<f64>, q: usize) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(invalid(format!("PCA needs at least 2 observations, got {n}")));
    }
    let max_q = (n - 1).min(d);
    if q == 0 || q > max_q {
        return Err(invalid(format!(
            "component count {q} must be in 1..={max_q} for {n} observations of dimension {d}"
        )));
    }
    let (means, cov) = covariance(x);
    let trace = cov.trace();
    let (values, vectors) = sorted_symmetric_eigen(&cov);
    let mut loadings = vectors.columns(0, q).into_owned();
    for mut col in loadings.column_iter_mut() {
        let pivot = col
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
    let variances: Vec<f64> = values[..q].iter().map(|v| v.max(0.0)).collect();
    let explained_variance_ratio = variances
        .iter()
        .map(|v| if trace > 0.0 { v / trace } else { 0.0 })
        .collect();
    Ok(PcaModel {
        means,
        loadings,
        variances,
        explained_variance_ratio,
    })
}

pub fn pca_transform(m: &PcaModel, v: &[f64]) -> Result<Vec<f64>> {
    m.transform(v)
}
