use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robust_fa::backtest::gmvp_weights;
use robust_fa::gfa::{gfa_one_round, optimal_loadings};
use robust_fa::rfa::{fit_gem, init_naive_pca, maximize_nu, nu_derivative, DEFAULT_NU0};
use robust_fa::student_t::{e_step_row, sample_with_rng};
use robust_fa::{Dataset, FactorTParams, FitOptions, GfaProblem, InnerMethod};

fn random_params(p: usize, r: usize, nu: f64, rng: &mut ChaCha8Rng) -> FactorTParams {
    let mu = DVector::from_fn(p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let b = DMatrix::from_fn(p, r, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let psi = DVector::from_fn(p, |_, _| 0.1 + rng.random::<f64>());
    FactorTParams::new(mu, b, psi, nu).unwrap()
}

fn random_spd(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p + 2, |_, _| rng.random::<f64>() - 0.5);
    &a * a.transpose() + DMatrix::identity(p, p) * 0.05
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn e_step_row_respects_jensen(seed in any::<u64>(), p in 2usize..8, nu in 0.5f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prm = random_params(p, 1, nu, &mut rng);
        let x = DVector::from_fn(p, |_, _| (rng.random::<f64>() - 0.5) * 20.0);
        let mut mask: Vec<bool> = (0..p).map(|_| rng.random::<f64>() < 0.7).collect();
        mask[rng.random_range(0..p)] = true;
        let m = e_step_row(&x, &mask, &prm).unwrap();
        prop_assert!(m.e1 > 0.0);
        prop_assert!(m.e2 <= m.e1.ln() + 1e-12);
        prop_assert!(m.d >= 0.0);
        prop_assert_eq!(m.p_obs, mask.iter().filter(|&&b| b).count());
    }

    #[test]
    fn gfa_round_never_lowers_objective(seed in any::<u64>(), p in 3usize..9, mm in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_spd(p, &mut rng);
        let r = rng.random_range(1..p);
        let problem = GfaProblem::new(s, r).unwrap();
        let psi = DVector::from_fn(p, |_, _| 0.05 + rng.random::<f64>());
        let b = optimal_loadings(&problem, &psi).unwrap();
        let method = if mm { InnerMethod::Mm } else { InnerMethod::Alternating };
        let sol = gfa_one_round(&problem, &b, &psi, method).unwrap();
        let (before, after) = (sol.objective_trace[0], sol.objective);
        prop_assert!(after >= before - 1e-10 * before.abs().max(1.0));
        prop_assert!(sol.psi.min() > 0.0);
    }

    #[test]
    fn nu_update_is_stationary_or_at_bound(t_len in 5usize..2000, excess in 0.0f64..3.0) {
        // Σ(e₂ − e₁) ≤ −T always; `excess` sets how far below.
        let sum = -(t_len as f64) * (1.0 + excess);
        let upd = maximize_nu(sum, t_len);
        prop_assert!(upd.nu > 0.0);
        if !upd.at_bound {
            prop_assert!(nu_derivative(upd.nu, sum, t_len).abs() <= 1e-6 * t_len as f64);
        }
    }

    #[test]
    fn gmvp_weights_form_a_budget(seed in any::<u64>(), p in 2usize..12, c in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_spd(p, &mut rng);
        let w = gmvp_weights(&s).unwrap();
        prop_assert!((w.sum() - 1.0).abs() < 1e-9);
        let scaled = gmvp_weights(&(&s * c)).unwrap();
        prop_assert!((scaled - &w).amax() < 1e-8 * w.amax().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gem_trace_is_nondecreasing(seed in any::<u64>(), nu in 3.0f64..15.0, holes in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_params(8, 2, nu, &mut rng);
        let sampled = sample_with_rng(truth.mu(), &truth.sigma(), Some(nu), 150, &mut rng).unwrap();
        let data = if holes {
            let mask = DMatrix::from_fn(150, 8, |t, j| !(t % 5 == 0 && j == t % 8));
            Dataset::new(sampled.values().clone(), mask).unwrap()
        } else {
            sampled
        };
        let init = init_naive_pca(&data, 2, DEFAULT_NU0).unwrap();
        let rep = fit_gem(&data, &init, &FitOptions::default()).unwrap();
        for w in rep.loglik_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
        }
    }
}
