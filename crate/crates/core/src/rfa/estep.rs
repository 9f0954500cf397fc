use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dataset, FactorTParams};
use crate::student_t::{observed_part, row_residual, EStepRowMoments};

/// Sufficient statistics from one E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct EStepMoments {
    pub rows: Vec<EStepRowMoments>,
    /// Rows with missing cells replaced by their conditional means.
    pub filled: DMatrix<f64>,
    pub weighted_mean: DVector<f64>,
    /// Σₜ e₁ₜ
    pub weight_sum: f64,
    /// Σ over incomplete rows of the conditional scale Σ_mm·o in the (m, m) block.
    pub imputation_correction: DMatrix<f64>,
}

impl EStepMoments {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|m| m.e1)
    }

    /// Σₜ (e₂ₜ − e₁ₜ), the data term of the ν-objective.
    pub fn sum_e2_minus_e1(&self) -> f64 {
        self.rows.iter().map(|m| m.e2 - m.e1).sum()
    }

    /// S = (1/T) [Σₜ e₁ₜ (x̃ₜ − μ)(x̃ₜ − μ)ᵀ + imputation correction].
    pub fn weighted_scatter(&self, mu: &DVector<f64>) -> DMatrix<f64> {
        let t_len = self.filled.nrows();
        let p = self.filled.ncols();
        let centered = DMatrix::from_fn(t_len, p, |t, j| self.filled[(t, j)] - mu[j]);
        let weighted = DMatrix::from_fn(t_len, p, |t, j| self.rows[t].e1 * centered[(t, j)]);
        let mut s = centered.transpose() * weighted;
        s += &self.imputation_correction;
        s /= t_len as f64;
        linalg::symmetrize(&mut s);
        s
    }
}

pub fn e_step(data: &Dataset, params: &FactorTParams) -> Result<EStepMoments> {
    e_step_scale(data, params.mu(), &params.sigma(), params.nu())
}

/// E-step for an explicit (unstructured) scale matrix.
pub fn e_step_scale(data: &Dataset, mu: &DVector<f64>, sigma: &DMatrix<f64>, nu: f64) -> Result<EStepMoments> {
    e_step_impl(data, mu, sigma, nu, false)
}

/// E-step that routes every row through the incomplete-row code path.
#[cfg(test)]
fn e_step_generic(data: &Dataset, mu: &DVector<f64>, sigma: &DMatrix<f64>, nu: f64) -> Result<EStepMoments> {
    e_step_impl(data, mu, sigma, nu, true)
}

fn e_step_impl(
    data: &Dataset,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    nu: f64,
    force_generic: bool,
) -> Result<EStepMoments> {
    let p = data.n_cols();
    let t_len = data.n_rows();
    if mu.len() != p || sigma.nrows() != p {
        return Err(Error::DimensionMismatch { expected: p, actual: mu.len() });
    }
    let full = linalg::cholesky(sigma, "e-step scale")?;
    let values = data.values();
    let mut filled = values.clone();
    let mut correction = DMatrix::zeros(p, p);
    let mut rows = Vec::with_capacity(t_len);
    for t in 0..t_len {
        if !force_generic && data.row_is_complete(t) {
            let d = linalg::quad_form_inv(&full, &row_residual(values, t, mu));
            rows.push(EStepRowMoments::from_distance(d, p, nu));
            continue;
        }
        let part = observed_part(values, data.mask(), t, mu, sigma)?;
        let d = linalg::quad_form_inv(&part.chol, &part.resid);
        rows.push(EStepRowMoments::from_distance(d, part.obs.len(), nu));
        if part.miss.is_empty() {
            continue;
        }
        // x̂_m = μ_m + Σ_mo Σ_oo⁻¹ (x_o − μ_o)
        let sigma_mo = linalg::select(sigma, &part.miss, &part.obs);
        let coef = part.chol.solve(&part.resid);
        let fill = &sigma_mo * coef;
        for (i, &j) in part.miss.iter().enumerate() {
            filled[(t, j)] = mu[j] + fill[i];
        }
        // Σ_mm·o = Σ_mm − Σ_mo Σ_oo⁻¹ Σ_om
        let gain = part.chol.solve(&sigma_mo.transpose());
        let mut cond = linalg::select(sigma, &part.miss, &part.miss) - &sigma_mo * gain;
        linalg::symmetrize(&mut cond);
        for (a, &ja) in part.miss.iter().enumerate() {
            for (b, &jb) in part.miss.iter().enumerate() {
                correction[(ja, jb)] += cond[(a, b)];
            }
        }
    }
    let weight_sum: f64 = rows.iter().map(|m| m.e1).sum();
    let mut weighted_mean = DVector::zeros(p);
    for (t, m) in rows.iter().enumerate() {
        for j in 0..p {
            weighted_mean[j] += m.e1 * filled[(t, j)];
        }
    }
    weighted_mean /= weight_sum;
    Ok(EStepMoments {
        rows,
        filled,
        weighted_mean,
        weight_sum,
        imputation_correction: correction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::student_t::sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma, StandardNormal};

    fn params(p: usize, nu: f64) -> FactorTParams {
        let b = DMatrix::from_fn(p, 1, |i, _| 0.5 + 0.1 * i as f64);
        let psi = DVector::from_fn(p, |i, _| 0.5 + 0.05 * i as f64);
        let mu = DVector::from_fn(p, |i, _| i as f64 - 1.0);
        FactorTParams::new(mu, b, psi, nu).unwrap()
    }

    #[test]
    fn gaussian_limit_weights_give_sample_mean() {
        let prm = params(3, 1e12);
        let data = sample(&prm, 50, 3).unwrap();
        let m = e_step(&data, &prm).unwrap();
        let mean = data.values().row_mean().transpose();
        assert!((&m.weighted_mean - mean).amax() < 1e-9);
        assert!((m.weight_sum - 50.0).abs() < 1e-6);
    }

    #[test]
    fn independent_scale_fills_with_mean() {
        let prm = FactorTParams::new(
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            DMatrix::zeros(3, 1),
            DVector::from_element(3, 1.0),
            5.0,
        )
        .unwrap();
        let data = Dataset::new(
            DMatrix::from_row_slice(1, 3, &[0.5, 9.0, 4.0]),
            DMatrix::from_row_slice(1, 3, &[true, false, true]),
        )
        .unwrap();
        let m = e_step(&data, &prm).unwrap();
        assert_eq!(m.filled[(0, 1)], 2.0);
        let mut want = DMatrix::zeros(3, 3);
        want[(1, 1)] = 1.0;
        assert_eq!(m.imputation_correction, want);
        assert_eq!(m.rows[0].p_obs, 2);
    }

    #[test]
    fn complete_mask_is_bit_identical_across_paths() {
        let prm = params(4, 6.0);
        let data = sample(&prm, 40, 8).unwrap();
        let a = e_step(&data, &prm).unwrap();
        let b = e_step_generic(&data, prm.mu(), &prm.sigma(), prm.nu()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn conditional_fill_matches_sampling() {
        // draw (τ, x_m) from the conditional t given x_o and compare moments
        let prm = FactorTParams::new(
            DVector::from_vec(vec![0.3, -0.5, 1.0]),
            DMatrix::from_column_slice(3, 1, &[1.0, -0.8, 0.6]),
            DVector::from_vec(vec![0.4, 0.7, 0.5]),
            6.0,
        )
        .unwrap();
        let x_o = [1.2, 0.1];
        let data = Dataset::new(
            DMatrix::from_row_slice(1, 3, &[x_o[0], 0.0, x_o[1]]),
            DMatrix::from_row_slice(1, 3, &[true, false, true]),
        )
        .unwrap();
        let m = e_step(&data, &prm).unwrap();
        let fill = m.filled[(0, 1)];
        let cond_scale = m.imputation_correction[(1, 1)];

        let s = prm.sigma();
        let obs = [0usize, 2];
        let soo = DMatrix::from_fn(2, 2, |i, j| s[(obs[i], obs[j])]);
        let smo = DMatrix::from_fn(1, 2, |_, j| s[(1, obs[j])]);
        let inv = soo.try_inverse().unwrap();
        let r = DVector::from_vec(vec![x_o[0] - 0.3, x_o[1] - 1.0]);
        let d = (r.transpose() * &inv * &r)[(0, 0)];
        let mean = -0.5 + (&smo * &inv * &r)[(0, 0)];
        let var = s[(1, 1)] - (&smo * &inv * smo.transpose())[(0, 0)];

        let post = Gamma::new(0.5 * (6.0 + 2.0), 2.0 / (6.0 + d)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 200_000;
        let mut xs = Vec::with_capacity(n);
        let mut tw = Vec::with_capacity(n);
        for _ in 0..n {
            let tau = post.sample(&mut rng);
            let z: f64 = rng.sample(StandardNormal);
            let xm = mean + (var / tau).sqrt() * z;
            xs.push(xm);
            tw.push(tau * (xm - fill).powi(2));
        }
        let mc_mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|v| (v - mc_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((mc_mean - fill).abs() < 3.0 * sd / (n as f64).sqrt());
        // E[τ (x_m − x̂_m)²] equals the unweighted conditional scale
        let mc_cond = tw.iter().sum::<f64>() / n as f64;
        let sd2 = (tw.iter().map(|v| (v - mc_cond).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((mc_cond - cond_scale).abs() < 3.0 * sd2 / (n as f64).sqrt());
    }
}
