use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Mean and covariance of a feature distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Dimension(format!("mean of {} with covariance {}x{}", mean.len(), cov.nrows(), cov.ncols())));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sample statistics of `rows` feature vectors of length `dim`, with the
    /// unbiased `1 / (N - 1)` covariance. Needs at least `dim + 1` rows.
    pub fn fit(rows: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || rows.len() % dim != 0 {
            return Err(Error::Dimension(format!("{} values are not rows of {dim}", rows.len())));
        }
        let count = rows.len() / dim;
        if count < dim + 1 {
            return Err(Error::SingularStats(format!("{count} samples for {dim} features; need at least {}", dim + 1)));
        }
        let x = DMatrix::from_row_slice(count, dim, rows);
        let mean = DVector::from_iterator(dim, x.column_iter().map(|c| c.mean()));
        let mut centered = x;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = centered.transpose() * &centered / (count - 1) as f64;
        Ok(Self { mean, cov })
    }
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Square root of a symmetric positive semidefinite matrix, with negative
/// eigenvalues from round-off clamped to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(sym(m));
    let roots = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
///
/// The trace of `(S_a S_b)^(1/2)` equals that of the symmetric
/// `(S_a^(1/2) S_b S_a^(1/2))^(1/2)`, which avoids a non-symmetric root.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!("{} vs {} features", a.dim(), b.dim())));
    }
    let diff = &a.mean - &b.mean;
    let root_a = psd_sqrt(&a.cov);
    let inner = SymmetricEigen::new(sym(&(&root_a * &b.cov * &root_a)));
    let cross: f64 = inner.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let d = diff.norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}
