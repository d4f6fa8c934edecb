//! Dense-matrix helpers shared by the decomposition and persistence code.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Serde adapter: `{ "rows": r, "cols": c, "data": [row-major values] }`.
pub mod row_major {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            data.extend(m.row(r).iter().copied());
        }
        Repr {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let r = Repr::deserialize(d)?;
        if r.rows * r.cols != r.data.len() {
            return Err(serde::de::Error::custom(format!(
                "matrix {}x{} has {} values",
                r.rows,
                r.cols,
                r.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
    }
}

/// Stacks equal-length rows into an `n x d` matrix.
pub fn rows_to_matrix<R: AsRef<[f64]>>(rows: &[R]) -> DMatrix<f64> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.as_ref().len());
    DMatrix::from_fn(n, d, |i, j| rows[i].as_ref()[j])
}

pub fn column_means(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    x.column_iter().map(|c| c.sum() / n).collect()
}

/// Sample covariance with `n - 1` normalization; returns `(means, cov)`.
pub fn covariance(x: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let means = column_means(x);
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let cov = centered.tr_mul(&centered) / (x.nrows() as f64 - 1.0);
    (means, cov)
}

/// Symmetric eigendecomposition sorted by decreasing eigenvalue.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}
