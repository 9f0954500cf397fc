//! Parameter and data value types, plus normalized-error metrics.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Parameters of a multivariate Student's t whose scale matrix has
/// factor-analysis structure Σ = BBᵀ + Diag(ψ).
///
/// Σ is never stored; [`FactorTParams::sigma`] assembles it on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTParams {
    mu: DVector<f64>,
    loadings: DMatrix<f64>,
    psi: DVector<f64>,
    nu: f64,
}

impl FactorTParams {
    pub fn new(mu: DVector<f64>, loadings: DMatrix<f64>, psi: DVector<f64>, nu: f64) -> Result<Self> {
        let p = mu.len();
        if p == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if loadings.nrows() != p {
            return Err(Error::DimensionMismatch { expected: p, actual: loadings.nrows() });
        }
        if psi.len() != p {
            return Err(Error::DimensionMismatch { expected: p, actual: psi.len() });
        }
        if loadings.ncols() >= p {
            return Err(Error::InvalidParameter(format!(
                "factor count {} must be below dimension {p}",
                loadings.ncols()
            )));
        }
        if psi.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter("psi entries must be positive and finite".into()));
        }
        if !(nu > 0.0) || nu.is_nan() {
            return Err(Error::InvalidParameter(format!("nu must be positive, got {nu}")));
        }
        if mu.iter().chain(loadings.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite location or loadings".into()));
        }
        Ok(Self { mu, loadings, psi, nu })
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.loadings
    }

    pub fn psi(&self) -> &DVector<f64> {
        &self.psi
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn rank(&self) -> usize {
        self.loadings.ncols()
    }

    /// Scale matrix BBᵀ + Diag(ψ), assembled on the upper triangle and mirrored.
    pub fn sigma(&self) -> DMatrix<f64> {
        sigma_of(&self.loadings, &self.psi)
    }

    /// Covariance ν/(ν−2)·Σ, defined only for ν > 2.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        variance_factor(self.nu).map(|s| self.sigma() * s)
    }

    pub(crate) fn with_nu(mut self, nu: f64) -> Self {
        self.nu = nu;
        self
    }
}

/// BBᵀ + Diag(ψ), exactly symmetric.
pub fn sigma_of(loadings: &DMatrix<f64>, psi: &DVector<f64>) -> DMatrix<f64> {
    let p = loadings.nrows();
    let r = loadings.ncols();
    let mut sigma = DMatrix::zeros(p, p);
    for j in 0..p {
        for i in 0..=j {
            let mut acc = 0.0;
            for k in 0..r {
                acc += loadings[(i, k)] * loadings[(j, k)];
            }
            if i == j {
                acc += psi[i];
            }
            sigma[(i, j)] = acc;
            sigma[(j, i)] = acc;
        }
    }
    sigma
}

/// s(ν) = ν/(ν−2), the ratio between covariance and scale.
pub fn variance_factor(nu: f64) -> Option<f64> {
    (nu > 2.0).then(|| if nu.is_infinite() { 1.0 } else { nu / (nu - 2.0) })
}

/// T×p observations with an observation mask (`true` = observed).
///
/// Missing cells are zeroed on construction and must not be read without
/// consulting the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
}

impl Dataset {
    pub fn new(mut values: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::DimensionMismatch { expected: values.len(), actual: mask.len() });
        }
        if values.ncols() == 0 {
            return Err(Error::InvalidParameter("dataset has no columns".into()));
        }
        for t in 0..values.nrows() {
            let mut any = false;
            for j in 0..values.ncols() {
                if mask[(t, j)] {
                    if !values[(t, j)].is_finite() {
                        return Err(Error::InvalidParameter(format!(
                            "non-finite observed value at row {t}, column {j}"
                        )));
                    }
                    any = true;
                } else {
                    values[(t, j)] = 0.0;
                }
            }
            if !any {
                return Err(Error::EmptyRow { row: t });
            }
        }
        Ok(Self { values, mask })
    }

    /// Fully observed dataset.
    pub fn complete(values: DMatrix<f64>) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(values, mask)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_observed(&self, t: usize, j: usize) -> bool {
        self.mask[(t, j)]
    }

    pub fn row_is_complete(&self, t: usize) -> bool {
        (0..self.n_cols()).all(|j| self.mask[(t, j)])
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    pub fn missing_count(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }

    /// Indices of complete rows.
    pub fn complete_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&t| self.row_is_complete(t)).collect()
    }

    /// Matrix of the complete rows only (listwise deletion).
    pub fn listwise_complete(&self) -> DMatrix<f64> {
        let rows = self.complete_rows();
        DMatrix::from_fn(rows.len(), self.n_cols(), |i, j| self.values[(rows[i], j)])
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let p = self.n_cols();
        let values = DMatrix::from_fn(rows.len(), p, |i, j| self.values[(rows[i], j)]);
        let mask = DMatrix::from_fn(rows.len(), p, |i, j| self.mask[(rows[i], j)]);
        Self::new(values, mask)
    }
}

/// Normalized estimation errors; `ne_nu` is `None` when either ν ≤ 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedErrors {
    pub ne_mu: f64,
    pub ne_sigma: f64,
    pub ne_nu: Option<f64>,
}

/// ‖est − truth‖₂ / ‖truth‖₂.
pub fn vector_error(estimate: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    let denom = truth.norm();
    if denom == 0.0 {
        return Err(Error::DegenerateTruth("zero location vector"));
    }
    Ok((estimate - truth).norm() / denom)
}

/// ‖est − truth‖_F / ‖truth‖_F.
pub fn matrix_error(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    let denom = truth.norm();
    if denom == 0.0 {
        return Err(Error::DegenerateTruth("zero scale matrix"));
    }
    Ok((estimate - truth).norm() / denom)
}

/// |s(ν̂) − s(ν)| / |s(ν)| with s(ν) = ν/(ν−2).
pub fn nu_error(estimate: f64, truth: f64) -> Option<f64> {
    let s_hat = variance_factor(estimate)?;
    let s_true = variance_factor(truth)?;
    Some((s_hat - s_true).abs() / s_true.abs())
}

pub fn normalized_errors(estimate: &FactorTParams, truth: &FactorTParams) -> Result<NormalizedErrors> {
    if estimate.dim() != truth.dim() {
        return Err(Error::DimensionMismatch { expected: truth.dim(), actual: estimate.dim() });
    }
    Ok(NormalizedErrors {
        ne_mu: vector_error(estimate.mu(), truth.mu())?,
        ne_sigma: matrix_error(&estimate.sigma(), &truth.sigma())?,
        ne_nu: nu_error(estimate.nu(), truth.nu()),
    })
}
