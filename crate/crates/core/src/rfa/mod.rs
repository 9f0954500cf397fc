//! Generalized EM estimation of a factor-structured multivariate Student's t.
//!
//! One iteration is: E-step (weights e₁, e₂ and conditional fills for
//! missing cells), μ-update, ν-update by bisection, then one (or more)
//! inner GFA rounds on the weighted scatter. Convergence is monitored on the
//! observed-data log-likelihood.

mod estep;
mod fit;
mod init;
mod mstep;

pub use estep::{e_step, e_step_scale, EStepMoments};
pub use fit::{fit_gem, fit_px_em, FitMethod, FitOptions, FitReport};
pub use init::{init_naive_pca, pairwise_covariance, DEFAULT_NU0};
pub use mstep::{m_step_mu, m_step_nu, m_step_sigma, maximize_nu, nu_derivative, nu_objective, NuUpdate, SigmaUpdate};

