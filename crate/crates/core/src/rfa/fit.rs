use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gfa::InnerMethod;
use crate::model::{Dataset, FactorTParams};
use crate::student_t::log_likelihood;

use super::estep::e_step;
use super::mstep::{m_step_mu, m_step_nu, sigma_rounds};

/// Outer-loop settings shared by GEM and PX-EM.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stop when |L⁽ᵏ⁺¹⁾ − L⁽ᵏ⁾| ≤ tol · |L⁽ᵏ⁾|.
    pub tol: f64,
    pub inner: InnerMethod,
    /// Inner GFA rounds per Σ-update; 1 is GEM, large values approach full EM.
    pub inner_rounds: usize,
    /// Hold ν fixed at this value instead of updating it.
    pub fix_nu: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-6,
            inner: InnerMethod::Alternating,
            inner_rounds: 1,
            fix_nu: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    Gem,
    PxEm,
}

impl FitMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FitMethod::Gem => "gem",
            FitMethod::PxEm => "px-em",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: FactorTParams,
    /// Observed-data log-likelihood at the start point and after each iteration.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub clamp_events: usize,
    pub method: FitMethod,
    pub inner_method: InnerMethod,
    /// The last ν-update stopped at its search bound.
    pub nu_at_bound: bool,
    /// Final expansion parameter (PX-EM only).
    pub alpha: Option<f64>,
}

impl FitReport {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace holds the start value")
    }
}

fn check_options(opts: &FitOptions) -> Result<()> {
    if opts.inner_rounds == 0 {
        return Err(Error::InvalidParameter("inner_rounds must be at least 1".into()));
    }
    if !(opts.tol >= 0.0) {
        return Err(Error::InvalidParameter("tolerance must be non-negative".into()));
    }
    if let Some(nu) = opts.fix_nu {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::InvalidParameter(format!("fixed nu must be positive, got {nu}")));
        }
    }
    Ok(())
}

fn finite_loglik(data: &Dataset, params: &FactorTParams, iteration: usize) -> Result<f64> {
    let ll = log_likelihood(data, params)?;
    if ll.is_finite() {
        Ok(ll)
    } else {
        Err(Error::NonFiniteLikelihood { iteration })
    }
}

fn check_init(data: &Dataset, init: &FactorTParams) -> Result<()> {
    if init.dim() != data.n_cols() {
        return Err(Error::DimensionMismatch { expected: data.n_cols(), actual: init.dim() });
    }
    Ok(())
}

/// Generalized EM: E-step, μ-update, ν-update (unless fixed), then
/// `inner_rounds` GFA rounds for Σ. Handles incomplete rows.
pub fn fit_gem(data: &Dataset, init: &FactorTParams, opts: &FitOptions) -> Result<FitReport> {
    check_options(opts)?;
    check_init(data, init)?;
    let mut params = match opts.fix_nu {
        Some(nu) => init.clone().with_nu(nu),
        None => init.clone(),
    };
    let mut ll = finite_loglik(data, &params, 0)?;
    let mut trace = vec![ll];
    let mut clamp_events = 0;
    let mut nu_at_bound = false;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let moments = e_step(data, &params)?;
        let mu = m_step_mu(&moments);
        let nu = match opts.fix_nu {
            Some(nu) => nu,
            None => {
                let upd = m_step_nu(&moments);
                nu_at_bound = upd.at_bound;
                upd.nu
            }
        };
        let sigma = sigma_rounds(
            moments.weighted_scatter(&mu),
            params.loadings(),
            params.psi(),
            opts.inner,
            opts.inner_rounds,
        )?;
        clamp_events += sigma.clamp_events;
        params = FactorTParams::new(mu, sigma.loadings, sigma.psi, nu)?;
        let next = finite_loglik(data, &params, iterations)?;
        trace.push(next);
        let done = (next - ll).abs() <= opts.tol * ll.abs();
        ll = next;
        if done {
            converged = true;
            break;
        }
    }
    Ok(FitReport {
        params,
        loglik_trace: trace,
        iterations,
        converged,
        clamp_events,
        method: FitMethod::Gem,
        inner_method: opts.inner,
        nu_at_bound,
        alpha: None,
    })
}

/// Parameter-expanded EM with τ ~ α·Gamma(ν/2, ν/2).
///
/// The expanded scale Σ* is updated on α·S and α is rescaled by the mean
/// weight; the reported parameters are always the recovered ones
/// (B = B*/√α, ψ = ψ*/α). Complete data only.
pub fn fit_px_em(data: &Dataset, init: &FactorTParams, opts: &FitOptions) -> Result<FitReport> {
    check_options(opts)?;
    check_init(data, init)?;
    if !data.is_complete() {
        return Err(Error::Unsupported(
            "parameter-expanded EM requires complete data; use the GEM fit for missing values".into(),
        ));
    }
    let t_len = data.n_rows() as f64;
    let mut params = match opts.fix_nu {
        Some(nu) => init.clone().with_nu(nu),
        None => init.clone(),
    };
    let mut alpha = 1.0;
    let mut expanded_loadings = params.loadings().clone();
    let mut expanded_psi: DVector<f64> = params.psi().clone();
    let mut ll = finite_loglik(data, &params, 0)?;
    let mut trace = vec![ll];
    let mut clamp_events = 0;
    let mut nu_at_bound = false;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        // Mahalanobis distances use Σ*/α, i.e. the recovered scale.
        let moments = e_step(data, &params)?;
        let mu = m_step_mu(&moments);
        let nu = match opts.fix_nu {
            Some(nu) => nu,
            None => {
                let upd = m_step_nu(&moments);
                nu_at_bound = upd.at_bound;
                upd.nu
            }
        };
        let target = moments.weighted_scatter(&mu) * alpha;
        let sigma = sigma_rounds(target, &expanded_loadings, &expanded_psi, opts.inner, opts.inner_rounds)?;
        clamp_events += sigma.clamp_events;
        expanded_loadings = sigma.loadings;
        expanded_psi = sigma.psi;
        alpha *= moments.weight_sum / t_len;
        params = FactorTParams::new(
            mu,
            &expanded_loadings / alpha.sqrt(),
            &expanded_psi / alpha,
            nu,
        )?;
        let next = finite_loglik(data, &params, iterations)?;
        trace.push(next);
        let done = (next - ll).abs() <= opts.tol * ll.abs();
        ll = next;
        if done {
            converged = true;
            break;
        }
    }
    Ok(FitReport {
        params,
        loglik_trace: trace,
        iterations,
        converged,
        clamp_events,
        method: FitMethod::PxEm,
        inner_method: opts.inner,
        nu_at_bound,
        alpha: Some(alpha),
    })
}
