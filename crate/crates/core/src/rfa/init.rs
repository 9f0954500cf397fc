use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gfa::sym_evd_desc;
use crate::model::{Dataset, FactorTParams};

/// Starting degrees of freedom.
pub const DEFAULT_NU0: f64 = 10.0;

/// Column means over observed entries and the pairwise-complete covariance
/// (1/n normalization per pair), projected onto the PSD cone by clipping
/// negative eigenvalues.
pub fn pairwise_covariance(data: &Dataset) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (t_len, p) = (data.n_rows(), data.n_cols());
    let x = data.values();
    let mut mu = DVector::zeros(p);
    for j in 0..p {
        let mut sum = 0.0;
        let mut n = 0usize;
        for t in 0..t_len {
            if data.is_observed(t, j) {
                sum += x[(t, j)];
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::InsufficientData { required: 1, actual: 0 });
        }
        mu[j] = sum / n as f64;
    }
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let mut sum = 0.0;
            let mut n = 0usize;
            for t in 0..t_len {
                if data.is_observed(t, i) && data.is_observed(t, j) {
                    sum += (x[(t, i)] - mu[i]) * (x[(t, j)] - mu[j]);
                    n += 1;
                }
            }
            let v = if n > 0 { sum / n as f64 } else { 0.0 };
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    if data.is_complete() {
        return Ok((mu, cov));
    }
    let evd = sym_evd_desc(&cov)?;
    let clipped = evd.values.map(|v| v.max(0.0));
    let mut psd = &evd.vectors * DMatrix::from_diagonal(&clipped) * evd.vectors.transpose();
    crate::linalg::symmetrize(&mut psd);
    Ok((mu, psd))
}

/// Naive-PCA start: μ⁰ the observed column means, B⁰ = U_r Λ_r^{1/2} from the
/// sample covariance, ψ⁰ = max(Diag(S − B⁰B⁰ᵀ), floor), ν⁰ = `nu0`.
pub fn init_naive_pca(data: &Dataset, rank: usize, nu0: f64) -> Result<FactorTParams> {
    if data.n_rows() < 2 {
        return Err(Error::InsufficientData { required: 2, actual: data.n_rows() });
    }
    let p = data.n_cols();
    if rank >= p {
        return Err(Error::InvalidParameter(format!("rank {rank} must be below dimension {p}")));
    }
    let (mu, cov) = pairwise_covariance(data)?;
    let trace = cov.trace();
    if !(trace > 0.0) {
        return Err(Error::InvalidParameter("data have zero variance".into()));
    }
    let floor = 1e-8 * trace / p as f64;
    let evd = sym_evd_desc(&cov)?;
    let loadings = DMatrix::from_fn(p, rank, |i, k| evd.vectors[(i, k)] * evd.values[k].max(0.0).sqrt());
    let psi = DVector::from_fn(p, |i, _| (cov[(i, i)] - loadings.row(i).norm_squared()).max(floor));
    FactorTParams::new(mu, loadings, psi, nu0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> Dataset {
        let x = DMatrix::from_fn(40, 4, |t, j| ((t * 7 + j * 13) % 11) as f64 + 0.3 * (t as f64).sin() * j as f64);
        Dataset::complete(x).unwrap()
    }

    #[test]
    fn complete_data_mean_and_structure() {
        let d = data();
        let init = init_naive_pca(&d, 1, DEFAULT_NU0).unwrap();
        assert_eq!(init.nu(), 10.0);
        let mean = d.values().row_mean().transpose();
        assert!((init.mu() - mean).amax() < 1e-12);

        let (_, cov) = pairwise_covariance(&d).unwrap();
        let evd = sym_evd_desc(&cov).unwrap();
        let top = evd.vectors.column(0) * evd.vectors.column(0).transpose() * evd.values[0];
        let bbt = init.loadings() * init.loadings().transpose();
        assert!((bbt - &top).amax() < 1e-10);
        for i in 0..4 {
            assert!((init.psi()[i] - (cov[(i, i)] - top[(i, i)]).max(1e-8 * cov.trace() / 4.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_tiny_or_constant_data() {
        let one = Dataset::complete(DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0])).unwrap();
        assert!(matches!(init_naive_pca(&one, 1, 10.0), Err(Error::InsufficientData { .. })));
        let flat = Dataset::complete(DMatrix::from_element(5, 3, 2.0)).unwrap();
        assert!(init_naive_pca(&flat, 1, 10.0).is_err());
    }

    #[test]
    fn pairwise_covariance_is_psd_with_missing() {
        let d = data();
        let mut mask = d.mask().clone();
        for t in 0..40 {
            mask[(t, t % 4)] = t % 3 != 0;
        }
        let holey = Dataset::new(d.values().clone(), mask).unwrap();
        let (_, cov) = pairwise_covariance(&holey).unwrap();
        assert!(cov.symmetric_eigenvalues().min() > -1e-12);
        assert!(init_naive_pca(&holey, 2, 10.0).is_ok());
    }
}
