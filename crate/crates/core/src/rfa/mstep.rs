use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gfa::{self, GfaProblem, InnerMethod};
use crate::model::FactorTParams;
use crate::special::{digamma, ln_gamma};

use super::estep::EStepMoments;

const NU_LOWER: f64 = 1e-3;
const NU_UPPER: f64 = 1e3;
/// Hard cap for the ν search; hitting it means the weights look Gaussian.
pub const NU_CAP: f64 = 1e6;
const NU_DERIV_TOL: f64 = 1e-8;
const NU_WIDTH_TOL: f64 = 1e-10;

/// μ = Σₜ e₁ₜ x̃ₜ / Σₜ e₁ₜ.
pub fn m_step_mu(moments: &EStepMoments) -> DVector<f64> {
    moments.weighted_mean.clone()
}

/// g(ν) = (Tν/2) log(ν/2) + (ν/2) Σₜ(e₂ₜ − e₁ₜ) − T log Γ(ν/2).
pub fn nu_objective(nu: f64, sum_e2_minus_e1: f64, t_len: usize) -> f64 {
    let t = t_len as f64;
    0.5 * t * nu * (0.5 * nu).ln() + 0.5 * nu * sum_e2_minus_e1 - t * ln_gamma(0.5 * nu)
}

/// g′(ν) = (T/2)[log(ν/2) + 1 − ψ(ν/2)] + ½ Σₜ(e₂ₜ − e₁ₜ).
pub fn nu_derivative(nu: f64, sum_e2_minus_e1: f64, t_len: usize) -> f64 {
    let half = 0.5 * nu;
    0.5 * t_len as f64 * (half.ln() + 1.0 - digamma(half)) + 0.5 * sum_e2_minus_e1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuUpdate {
    pub nu: f64,
    /// The search stopped at an end of its bracket.
    pub at_bound: bool,
}

/// Bisection on g′ over [1e-3, 1e3], widening the upper end ×10 up to 1e6
/// while g′ stays positive.
pub fn maximize_nu(sum_e2_minus_e1: f64, t_len: usize) -> NuUpdate {
    let deriv = |nu: f64| nu_derivative(nu, sum_e2_minus_e1, t_len);
    let mut lo = NU_LOWER;
    let mut hi = NU_UPPER;
    while deriv(hi) > 0.0 {
        if hi >= NU_CAP {
            return NuUpdate { nu: NU_CAP, at_bound: true };
        }
        hi = (hi * 10.0).min(NU_CAP);
    }
    if deriv(lo) <= 0.0 {
        return NuUpdate { nu: lo, at_bound: true };
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g = deriv(mid);
        if g.abs() <= NU_DERIV_TOL {
            return NuUpdate { nu: mid, at_bound: false };
        }
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= NU_WIDTH_TOL {
            break;
        }
    }
    NuUpdate { nu: 0.5 * (lo + hi), at_bound: false }
}

pub fn m_step_nu(moments: &EStepMoments) -> NuUpdate {
    maximize_nu(moments.sum_e2_minus_e1(), moments.n_rows())
}

/// Output of the Σ-update.
#[derive(Debug, Clone)]
pub struct SigmaUpdate {
    pub loadings: DMatrix<f64>,
    pub psi: DVector<f64>,
    /// GFA objective on the weighted scatter at the returned point.
    pub objective: f64,
    /// GFA objective at the previous (B, ψ).
    pub start_objective: f64,
    pub rounds: usize,
    pub clamp_events: usize,
}

/// Runs up to `rounds` inner GFA rounds on `scatter` from (B, ψ). With more
/// than one round, stops early once the relative objective change drops to
/// the standalone inner tolerance.
pub(crate) fn sigma_rounds(
    scatter: DMatrix<f64>,
    loadings: &DMatrix<f64>,
    psi: &DVector<f64>,
    inner: InnerMethod,
    rounds: usize,
) -> Result<SigmaUpdate> {
    if rounds == 0 {
        return Err(Error::InvalidParameter("inner_rounds must be at least 1".into()));
    }
    let problem = GfaProblem::new(scatter, loadings.ncols())?;
    let mut b = loadings.clone();
    let mut psi = psi.clone();
    let start_objective = problem.objective(&b, &psi)?;
    let mut objective = start_objective;
    let mut clamp_events = 0;
    let mut done = 0;
    while done < rounds {
        let step = gfa::gfa_one_round(&problem, &b, &psi, inner)?;
        done += 1;
        clamp_events += step.clamp_events;
        let change = (step.objective - objective).abs() / objective.abs().max(f64::MIN_POSITIVE);
        b = step.loadings;
        psi = step.psi;
        objective = step.objective;
        if rounds > 1 && change <= gfa::DEFAULT_TOL {
            break;
        }
    }
    Ok(SigmaUpdate {
        loadings: b,
        psi,
        objective,
        start_objective,
        rounds: done,
        clamp_events,
    })
}

/// Σ-update: inner GFA rounds on S = (1/T)[Σ e₁(x̃ − μ)(x̃ − μ)ᵀ + C] starting
/// from the previous loadings and noise variances.
pub fn m_step_sigma(
    moments: &EStepMoments,
    mu_new: &DVector<f64>,
    prev: &FactorTParams,
    inner: InnerMethod,
    inner_rounds: usize,
) -> Result<SigmaUpdate> {
    let scatter = moments.weighted_scatter(mu_new);
    sigma_rounds(scatter, prev.loadings(), prev.psi(), inner, inner_rounds)
}
