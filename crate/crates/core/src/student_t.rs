//! Multivariate Student's t density, sampling, and the conditional moments
//! of the Gamma mixing variable.
//!
//! Gamma(a, b) is shape–rate throughout: f(τ) = bᵃ τ^{a−1} e^{−bτ} / Γ(a).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, Chol};
use crate::model::{Dataset, FactorTParams};
use crate::special::{digamma, ln_gamma};

/// Conditional moments of τₜ for one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EStepRowMoments {
    /// E[τ | x]
    pub e1: f64,
    /// E[log τ | x]
    pub e2: f64,
    /// Mahalanobis distance of the observed part.
    pub d: f64,
    /// Number of observed coordinates.
    pub p_obs: usize,
}

impl EStepRowMoments {
    pub(crate) fn from_distance(d: f64, p_obs: usize, nu: f64) -> Self {
        let shape = nu + p_obs as f64;
        Self {
            e1: shape / (nu + d),
            e2: digamma(0.5 * shape) - (0.5 * (nu + d)).ln(),
            d,
            p_obs,
        }
    }
}

/// (x−μ)ᵀ Σ⁻¹ (x−μ) via a Cholesky solve.
pub fn mahalanobis(x: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    if x.len() != mu.len() || sigma.nrows() != x.len() || sigma.ncols() != x.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), actual: x.len() });
    }
    let chol = linalg::cholesky(sigma, "mahalanobis")?;
    Ok(linalg::quad_form_inv(&chol, &(x - mu)))
}

fn log_density_from_parts(d: f64, log_det: f64, q: usize, nu: f64) -> f64 {
    let q = q as f64;
    ln_gamma(0.5 * (nu + q)) - ln_gamma(0.5 * nu) - 0.5 * q * (nu * PI).ln() - 0.5 * log_det
        - 0.5 * (nu + q) * (d / nu).ln_1p()
}

/// Log-density of t_p(μ, Σ, ν) at `x` for an explicit scale matrix.
pub fn log_pdf_scale(x: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>, nu: f64) -> Result<f64> {
    if x.len() != mu.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), actual: x.len() });
    }
    let chol = linalg::cholesky(sigma, "log_pdf")?;
    let d = linalg::quad_form_inv(&chol, &(x - mu));
    Ok(log_density_from_parts(d, linalg::log_det(&chol), x.len(), nu))
}

pub fn log_pdf(x: &DVector<f64>, params: &FactorTParams) -> Result<f64> {
    log_pdf_scale(x, params.mu(), &params.sigma(), params.nu())
}

/// Observed coordinates of one row together with the factor of Σ_oo.
pub(crate) struct ObservedPart {
    pub obs: Vec<usize>,
    pub miss: Vec<usize>,
    pub resid: DVector<f64>,
    pub chol: Chol,
}

pub(crate) fn observed_part(
    values: &DMatrix<f64>,
    mask: &DMatrix<bool>,
    t: usize,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<ObservedPart> {
    let p = mu.len();
    let (obs, miss): (Vec<usize>, Vec<usize>) = (0..p).partition(|&j| mask[(t, j)]);
    if obs.is_empty() {
        return Err(Error::EmptyRow { row: t });
    }
    let resid = DVector::from_fn(obs.len(), |i, _| values[(t, obs[i])] - mu[obs[i]]);
    let chol = linalg::cholesky(&linalg::select(sigma, &obs, &obs), "observed block")?;
    Ok(ObservedPart { obs, miss, resid, chol })
}

/// Residual xₜ − μ of a fully observed row.
pub(crate) fn row_residual(values: &DMatrix<f64>, t: usize, mu: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(mu.len(), |j, _| values[(t, j)] - mu[j])
}

/// Observed-data log-likelihood for an explicit scale matrix. Rows with
/// missing cells contribute the marginal density of their observed part.
pub fn log_likelihood_scale(data: &Dataset, mu: &DVector<f64>, sigma: &DMatrix<f64>, nu: f64) -> Result<f64> {
    let p = data.n_cols();
    if mu.len() != p {
        return Err(Error::DimensionMismatch { expected: p, actual: mu.len() });
    }
    let full = linalg::cholesky(sigma, "log_likelihood")?;
    let full_log_det = linalg::log_det(&full);
    let mut total = 0.0;
    for t in 0..data.n_rows() {
        if data.row_is_complete(t) {
            let d = linalg::quad_form_inv(&full, &row_residual(data.values(), t, mu));
            total += log_density_from_parts(d, full_log_det, p, nu);
        } else {
            let part = observed_part(data.values(), data.mask(), t, mu, sigma)?;
            let d = linalg::quad_form_inv(&part.chol, &part.resid);
            total += log_density_from_parts(d, linalg::log_det(&part.chol), part.obs.len(), nu);
        }
    }
    Ok(total)
}

pub fn log_likelihood(data: &Dataset, params: &FactorTParams) -> Result<f64> {
    log_likelihood_scale(data, params.mu(), &params.sigma(), params.nu())
}

/// Draws `t_len` rows from t(μ, Σ, ν); `nu = None` samples the Gaussian N(μ, Σ).
pub fn sample_with_rng<R: Rng + ?Sized>(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    nu: Option<f64>,
    t_len: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if t_len == 0 {
        return Err(Error::InvalidParameter("sample size must be positive".into()));
    }
    let p = mu.len();
    let chol = linalg::cholesky(sigma, "sample")?;
    let l = chol.l();
    let mixing = match nu {
        Some(nu) => Some(
            Gamma::new(0.5 * nu, 2.0 / nu)
                .map_err(|e| Error::InvalidParameter(format!("gamma mixing: {e}")))?,
        ),
        None => None,
    };
    let mut values = DMatrix::zeros(t_len, p);
    let mut z = DVector::zeros(p);
    for t in 0..t_len {
        let scale = match &mixing {
            Some(g) => 1.0 / g.sample(rng).sqrt(),
            None => 1.0,
        };
        for j in 0..p {
            z[j] = rng.sample(StandardNormal);
        }
        let x = &l * &z;
        for j in 0..p {
            values[(t, j)] = mu[j] + scale * x[j];
        }
    }
    Dataset::complete(values)
}

/// Seeded draw of `t_len` rows from the model.
pub fn sample(params: &FactorTParams, t_len: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with_rng(params.mu(), &params.sigma(), Some(params.nu()), t_len, &mut rng)
}

/// e₁ = E[τ | x_o], e₂ = E[log τ | x_o] for one (possibly incomplete) row.
pub fn e_step_row(x_row: &DVector<f64>, mask_row: &[bool], params: &FactorTParams) -> Result<EStepRowMoments> {
    let p = params.dim();
    if x_row.len() != p || mask_row.len() != p {
        return Err(Error::DimensionMismatch { expected: p, actual: x_row.len() });
    }
    let values = DMatrix::from_fn(1, p, |_, j| x_row[j]);
    let mask = DMatrix::from_fn(1, p, |_, j| mask_row[j]);
    let part = observed_part(&values, &mask, 0, params.mu(), &params.sigma())?;
    let d = linalg::quad_form_inv(&part.chol, &part.resid);
    Ok(EStepRowMoments::from_distance(d, part.obs.len(), params.nu()))
}
