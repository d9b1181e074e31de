//! Centering, whitening and the symmetric inverse square root.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Relative eigenvalue floor below which a covariance is treated as singular.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// How the observations are centered before whitening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Centering {
    /// Subtract the sample mean.
    Empirical,
    /// Subtract a known population mean.
    Exact(Vec<f64>),
    /// Use the raw observations.
    None,
}

fn max_abs_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `M^(-1/2)` of a symmetric positive definite matrix via its eigendecomposition.
pub fn inv_sqrt_sym(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "inverse square root needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let asym = max_abs_asymmetry(m);
    if asym > 1e-10 {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let floor = EIGEN_FLOOR * max.max(0.0);
    if min <= floor || max <= 0.0 {
        return Err(Error::IllConditioned { min, floor });
    }
    let scaled = DVector::from_iterator(m.nrows(), eig.eigenvalues.iter().map(|l| l.powf(-0.5)));
    let u = &eig.eigenvectors;
    let s = u * DMatrix::from_diagonal(&scaled) * u.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

/// Whitened observations together with the statistics used to produce them.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedData {
    /// `d × N`, one sample per column.
    pub x: DMatrix<f64>,
    /// Covariance the data were whitened with.
    pub c_hat: DMatrix<f64>,
    /// `c_hat^(-1/2)`.
    pub whitening: DMatrix<f64>,
    pub mean_used: DVector<f64>,
    pub mode: Centering,
}

impl StandardizedData {
    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.x.ncols()
    }
}

/// Center `y` (`d × N`) according to `mode` and whiten with the matching
/// `1/N` covariance.
pub fn standardize(y: &DMatrix<f64>, mode: &Centering) -> Result<StandardizedData> {
    let (d, n) = y.shape();
    if d == 0 {
        return Err(Error::Dimension("data has no channels".into()));
    }
    if n <= d {
        return Err(Error::InsufficientSamples { n, d });
    }
    let mean = match mode {
        Centering::Empirical => y.column_mean(),
        Centering::Exact(mu) => {
            if mu.len() != d {
                return Err(Error::Dimension(format!(
                    "exact mean has length {} but the data have {d} channels",
                    mu.len()
                )));
            }
            DVector::from_column_slice(mu)
        }
        Centering::None => DVector::zeros(d),
    };
    let mut centered = y.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let c_hat = {
        let c = &centered * centered.transpose() / n as f64;
        (&c + c.transpose()) * 0.5
    };
    let whitening = inv_sqrt_sym(&c_hat)?;
    let mut x = &whitening * centered;
    if matches!(mode, Centering::Empirical) {
        // Remove the roundoff left by the product so row means are zero to
        // working precision.
        let residual = x.column_mean();
        for mut col in x.column_iter_mut() {
            col -= &residual;
        }
    }
    Ok(StandardizedData {
        x,
        c_hat,
        whitening,
        mean_used: mean,
        mode: mode.clone(),
    })
}
