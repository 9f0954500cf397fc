//! Rolling global-minimum-variance portfolio backtest.
//!
//! Every `test_window` days the covariance (or scale) matrix is re-estimated
//! on the previous `lookback` days, the GMVP weights are formed, and the
//! portfolio is held at those target weights, rebalanced daily, until the
//! next estimate.

mod panel;

pub use panel::{business_days, load_csv, prices_to_returns, read_panel, ReturnPanel};

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::baselines::{estimate, Method};
use crate::error::{Error, Result};
use crate::experiments::{make_truth, sample_data, SynthSpec};
use crate::linalg;
use crate::rfa::FitOptions;

pub const TRADING_DAYS: f64 = 252.0;

/// w = Σ⁻¹1 / (1ᵀΣ⁻¹1).
pub fn gmvp_weights(sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
    let p = sigma.nrows();
    if sigma.ncols() != p || p == 0 {
        return Err(Error::DimensionMismatch { expected: p, actual: sigma.ncols() });
    }
    let chol = linalg::cholesky(sigma, "gmvp_weights")?;
    let x = chol.solve(&DVector::from_element(p, 1.0));
    let total = x.sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::NotPositiveDefinite { context: "gmvp_weights" });
    }
    Ok(x / total)
}

#[derive(Debug, Clone)]
pub struct BacktestOptions {
    pub method: Method,
    pub rank: usize,
    pub fit: FitOptions,
    pub lookback: usize,
    pub test_window: usize,
}

impl BacktestOptions {
    pub fn new(method: Method) -> Self {
        Self { method, rank: 2, fit: FitOptions::default(), lookback: 100, test_window: 5 }
    }
}

/// One rebalancing window; `weights` is `None` when estimation failed.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    /// First out-of-sample row.
    pub start: usize,
    pub date: NaiveDate,
    pub weights: Option<DVector<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub method: Method,
    pub windows: Vec<WindowResult>,
    /// Out-of-sample dates and portfolio returns of the successful windows.
    pub dates: Vec<NaiveDate>,
    pub daily_returns: Vec<f64>,
    /// Population standard deviation of the daily returns times √252.
    pub annualized_volatility: f64,
}

impl BacktestResult {
    pub fn method_tag(&self) -> &'static str {
        self.method.as_str()
    }

    /// True when every window produced weights.
    pub fn is_complete(&self) -> bool {
        self.windows.iter().all(|w| w.weights.is_some())
    }

    pub fn failed_windows(&self) -> usize {
        self.windows.iter().filter(|w| w.weights.is_none()).count()
    }
}

/// Number of windows for a panel of `t_len` rows.
pub fn window_count(t_len: usize, lookback: usize, test_window: usize) -> usize {
    if test_window == 0 || t_len < lookback + test_window {
        0
    } else {
        (t_len - lookback) / test_window
    }
}

/// Population standard deviation.
fn population_sd(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn window_weights(panel: &ReturnPanel, opts: &BacktestOptions, start: usize) -> Result<DVector<f64>> {
    let data = panel.window(start - opts.lookback, start)?;
    let est = estimate(opts.method, &data, opts.rank, &opts.fit)?;
    gmvp_weights(&est.cov)
}

/// Walks windows k = lookback, lookback + test_window, … while
/// k + test_window ≤ T. Missing out-of-sample returns count as zero.
/// A failed estimate leaves a gap that is recorded in the window list.
pub fn rolling_backtest(panel: &ReturnPanel, opts: &BacktestOptions) -> Result<BacktestResult> {
    if opts.lookback < 2 || opts.test_window == 0 {
        return Err(Error::InvalidParameter("lookback must be at least 2 and test_window positive".into()));
    }
    let t_len = panel.n_rows();
    if t_len < opts.lookback + opts.test_window {
        return Err(Error::InsufficientData { required: opts.lookback + opts.test_window, actual: t_len });
    }
    let n_windows = window_count(t_len, opts.lookback, opts.test_window);
    let windows: Vec<WindowResult> = (0..n_windows)
        .into_par_iter()
        .map(|i| {
            let start = opts.lookback + i * opts.test_window;
            let (weights, error) = match window_weights(panel, opts, start) {
                Ok(w) => (Some(w), None),
                Err(e) => (None, Some(e.to_string())),
            };
            WindowResult { start, date: panel.dates()[start], weights, error }
        })
        .collect();
    let mut dates = Vec::new();
    let mut daily_returns = Vec::new();
    let (x, mask) = (panel.values(), panel.mask());
    for w in &windows {
        let Some(weights) = &w.weights else { continue };
        for t in w.start..w.start + opts.test_window {
            let r: f64 = (0..panel.n_assets())
                .map(|j| if mask[(t, j)] { weights[j] * x[(t, j)] } else { 0.0 })
                .sum();
            dates.push(panel.dates()[t]);
            daily_returns.push(r);
        }
    }
    let annualized_volatility = if daily_returns.is_empty() {
        f64::NAN
    } else {
        population_sd(&daily_returns) * TRADING_DAYS.sqrt()
    };
    Ok(BacktestResult { method: opts.method, windows, dates, daily_returns, annualized_volatility })
}

/// Synthetic daily return panel drawn from the factor model of `spec`,
/// scaled by `scale`, on consecutive weekdays from 2000-01-03.
pub fn synthetic_panel(spec: &SynthSpec, scale: f64, sample_seed: u64) -> Result<ReturnPanel> {
    let truth = make_truth(spec)?;
    let data = sample_data(&truth, spec, sample_seed)?;
    let start = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let dates = business_days(start, spec.t_len);
    let assets = (0..spec.p).map(|j| format!("A{:03}", j + 1)).collect();
    ReturnPanel::new(dates, assets, data.values() * scale, data.mask().clone())
}
