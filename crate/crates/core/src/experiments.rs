//! Synthetic-data harness: ground truth, contamination, replication loops
//! and tidy result tables.
//!
//! All randomness derives from one base seed through [`derive_seed`]. The
//! truth uses a fixed stream; replication `i` draws its data and its
//! contamination from streams keyed by `i`, so any subset of replications
//! can be re-run on its own.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use rayon::prelude::*;

use crate::baselines::{estimate, CovEstimate, Estimand, Method};
use crate::error::{Error, Result};
use crate::model::{matrix_error, nu_error, variance_factor, vector_error, Dataset, FactorTParams, NormalizedErrors};
use crate::rfa::FitOptions;
use crate::seed::derive_seed;
use crate::student_t::sample_with_rng;

const TRUTH_STREAM: u64 = u64::MAX;
const STAGE_TRUTH: u64 = 0;
const STAGE_SAMPLE: u64 = 1;
const STAGE_CONTAMINATE: u64 = 2;

/// Contamination levels swept by default (fraction of affected rows).
pub const DEFAULT_LEVELS: [f64; 5] = [0.0, 0.02, 0.05, 0.1, 0.2];

/// Distribution the synthetic rows are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dgp {
    #[default]
    StudentT,
    Gaussian,
}

impl Dgp {
    pub fn as_str(self) -> &'static str {
        match self {
            Dgp::StudentT => "t",
            Dgp::Gaussian => "gaussian",
        }
    }
}

impl FromStr for Dgp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t" => Ok(Dgp::StudentT),
            "gaussian" => Ok(Dgp::Gaussian),
            _ => Err(Error::InvalidParameter(format!("unknown data-generating process '{s}'"))),
        }
    }
}

impl fmt::Display for Dgp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which object NE(Σ) is measured on.
///
/// `Scale` compares against the true scale Σ; covariance-type estimates are
/// divided by s(ν_true) first. `Covariance` compares against s(ν_true)·Σ;
/// scale-type estimates are multiplied by their own s(ν̂).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Compare {
    #[default]
    Scale,
    Covariance,
}

impl Compare {
    pub fn as_str(self) -> &'static str {
        match self {
            Compare::Scale => "scale",
            Compare::Covariance => "covariance",
        }
    }
}

impl FromStr for Compare {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scale" => Ok(Compare::Scale),
            "covariance" => Ok(Compare::Covariance),
            _ => Err(Error::InvalidParameter(format!("unknown comparison '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub p: usize,
    pub r: usize,
    pub nu_true: f64,
    pub sector_size: usize,
    pub psi_mean: f64,
    pub t_len: usize,
    pub seed: u64,
    pub dgp: Dgp,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            p: 100,
            r: 5,
            nu_true: 7.0,
            sector_size: 20,
            psi_mean: 10.0,
            t_len: 500,
            seed: 0,
            dgp: Dgp::StudentT,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.r == 0 || self.sector_size == 0 || self.t_len == 0 {
            return Err(Error::InvalidParameter("dimensions and sample size must be positive".into()));
        }
        if self.p != self.r * self.sector_size {
            return Err(Error::InvalidParameter(format!(
                "sector layout needs p = r * sector_size, got p = {}, r = {}, sector_size = {}",
                self.p, self.r, self.sector_size
            )));
        }
        if self.r >= self.p {
            return Err(Error::InvalidParameter("rank must be below the dimension".into()));
        }
        if !(self.nu_true > 0.0) || !(self.psi_mean > 0.0) || !self.psi_mean.is_finite() {
            return Err(Error::InvalidParameter("nu_true and psi_mean must be positive".into()));
        }
        Ok(())
    }

    /// Degrees of freedom of the sampling distribution (∞ for Gaussian data).
    pub fn effective_nu(&self) -> f64 {
        match self.dgp {
            Dgp::StudentT => self.nu_true,
            Dgp::Gaussian => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContaminationMode {
    Outliers,
    Missing,
}

impl ContaminationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ContaminationMode::Outliers => "outliers",
            ContaminationMode::Missing => "missing",
        }
    }
}

impl FromStr for ContaminationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "outliers" => Ok(ContaminationMode::Outliers),
            "missing" => Ok(ContaminationMode::Missing),
            _ => Err(Error::InvalidParameter(format!("unknown contamination mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContaminationSpec {
    pub row_fraction: f64,
    /// Variance of the additive N(0, v) outlier noise.
    pub outlier_variance: f64,
    pub missing_cell_fraction: f64,
    pub mode: ContaminationMode,
}

impl ContaminationSpec {
    pub fn outliers(row_fraction: f64) -> Self {
        Self {
            row_fraction,
            outlier_variance: 50.0,
            missing_cell_fraction: 0.10,
            mode: ContaminationMode::Outliers,
        }
    }

    pub fn missing(row_fraction: f64) -> Self {
        Self { mode: ContaminationMode::Missing, ..Self::outliers(row_fraction) }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.row_fraction) || !unit(self.missing_cell_fraction) {
            return Err(Error::InvalidParameter("contamination fractions must lie in [0, 1]".into()));
        }
        if !(self.outlier_variance >= 0.0) || !self.outlier_variance.is_finite() {
            return Err(Error::InvalidParameter("outlier variance must be non-negative".into()));
        }
        Ok(())
    }

    /// Number of affected rows out of `t_len`.
    pub fn chosen_rows(&self, t_len: usize) -> usize {
        ((self.row_fraction * t_len as f64).round() as usize).min(t_len)
    }

    /// Number of masked cells per affected row out of `p`.
    pub fn cells_per_row(&self, p: usize) -> usize {
        // Guard against products like 0.1 * 30 landing just above an integer.
        ((self.missing_cell_fraction * p as f64) - 1e-9).ceil().max(0.0) as usize
    }
}

fn truth_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, TRUTH_STREAM, STAGE_TRUTH))
}

/// Ground truth: μ ~ N(0, I), sector-membership loadings (column j is one on
/// sector j's rows and zero elsewhere), ψᵢ ~ Exponential(mean psi_mean), ν = nu_true.
pub fn make_truth(spec: &SynthSpec) -> Result<FactorTParams> {
    spec.validate()?;
    let mut rng = truth_rng(spec.seed);
    let mu = DVector::from_fn(spec.p, |_, _| StandardNormal.sample(&mut rng));
    let loadings = DMatrix::from_fn(spec.p, spec.r, |i, j| if i / spec.sector_size == j { 1.0 } else { 0.0 });
    let exp = Exp::new(1.0 / spec.psi_mean).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let psi = DVector::from_fn(spec.p, |_, _| {
        // Exponential draws can be arbitrarily close to zero; keep ψ positive.
        exp.sample(&mut rng).max(f64::MIN_POSITIVE)
    });
    FactorTParams::new(mu, loadings, psi, spec.nu_true)
}

/// Draws `spec.t_len` rows from the truth under `spec.dgp` with the given seed.
pub fn sample_data(truth: &FactorTParams, spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nu = match spec.dgp {
        Dgp::StudentT => Some(truth.nu()),
        Dgp::Gaussian => None,
    };
    sample_with_rng(truth.mu(), &truth.sigma(), nu, spec.t_len, &mut rng)
}

/// Row indices affected by contamination, sorted ascending.
fn pick_rows(rng: &mut ChaCha8Rng, t_len: usize, count: usize) -> Vec<usize> {
    let mut rows = sample_indices(rng, t_len, count).into_vec();
    rows.sort_unstable();
    rows
}

/// Adds independent N(0, outlier_variance) noise to every cell of a random
/// `row_fraction` of the rows. The mask and all other rows are untouched.
pub fn inject_outliers(data: &Dataset, spec: &ContaminationSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if spec.mode != ContaminationMode::Outliers {
        return Err(Error::InvalidParameter("contamination mode is not 'outliers'".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = pick_rows(&mut rng, data.n_rows(), spec.chosen_rows(data.n_rows()));
    let noise = Normal::new(0.0, spec.outlier_variance.sqrt()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut values = data.values().clone();
    for &t in &rows {
        for j in 0..data.n_cols() {
            let e: f64 = noise.sample(&mut rng);
            if data.is_observed(t, j) {
                values[(t, j)] += e;
            }
        }
    }
    Dataset::new(values, data.mask().clone())
}

/// Masks ⌈missing_cell_fraction · p⌉ uniformly chosen cells in each of a
/// random `row_fraction` of the rows.
pub fn inject_missing(data: &Dataset, spec: &ContaminationSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if spec.mode != ContaminationMode::Missing {
        return Err(Error::InvalidParameter("contamination mode is not 'missing'".into()));
    }
    let p = data.n_cols();
    let per_row = spec.cells_per_row(p);
    if per_row >= p {
        return Err(Error::InvalidParameter(format!(
            "masking {per_row} of {p} cells would leave a row without observations"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = pick_rows(&mut rng, data.n_rows(), spec.chosen_rows(data.n_rows()));
    let mut mask = data.mask().clone();
    for &t in &rows {
        for j in sample_indices(&mut rng, p, per_row) {
            mask[(t, j)] = false;
        }
    }
    Dataset::new(data.values().clone(), mask)
}

/// Applies the contamination described by `spec`.
pub fn contaminate(data: &Dataset, spec: &ContaminationSpec, seed: u64) -> Result<Dataset> {
    match spec.mode {
        ContaminationMode::Outliers => inject_outliers(data, spec, seed),
        ContaminationMode::Missing => inject_missing(data, spec, seed),
    }
}

/// NE(μ), NE(Σ) and NE(ν) of an estimate under the comparison convention.
/// `truth_nu` is the sampling ν (∞ for Gaussian data); NE(ν) is `None` for
/// methods without a ν.
pub fn comparable_errors(
    estimate: &CovEstimate,
    truth: &FactorTParams,
    truth_nu: f64,
    compare: Compare,
) -> Result<NormalizedErrors> {
    let undefined = || Error::Unsupported("covariance undefined for nu <= 2".into());
    let s_true = variance_factor(truth_nu).ok_or_else(undefined)?;
    let scale = truth.sigma();
    let (est, target) = match (compare, estimate.estimand()) {
        (Compare::Scale, Estimand::Scale) => (estimate.cov.clone(), scale),
        (Compare::Scale, Estimand::Covariance) => (&estimate.cov / s_true, scale),
        (Compare::Covariance, Estimand::Scale) => {
            let s_hat = estimate.nu.and_then(variance_factor).ok_or_else(undefined)?;
            (&estimate.cov * s_hat, scale * s_true)
        }
        (Compare::Covariance, Estimand::Covariance) => (estimate.cov.clone(), scale * s_true),
    };
    Ok(NormalizedErrors {
        ne_mu: vector_error(&estimate.mu, truth.mu())?,
        ne_sigma: matrix_error(&est, &target)?,
        ne_nu: estimate.nu.and_then(|nu| nu_error(nu, truth_nu)),
    })
}

/// Everything needed to run a batch of replications.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub spec: SynthSpec,
    pub contamination: Option<ContaminationSpec>,
    pub methods: Vec<Method>,
    pub n_rep: usize,
    /// Rank used by structured estimators; defaults to the truth's rank.
    pub rank: Option<usize>,
    pub fit: FitOptions,
    pub compare: Compare,
    /// Record wall-clock seconds per fit; off by default so output is reproducible.
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn new(spec: SynthSpec, methods: Vec<Method>, n_rep: usize) -> Self {
        Self {
            spec,
            contamination: None,
            methods,
            n_rep,
            rank: None,
            fit: FitOptions::default(),
            compare: Compare::Scale,
            timing: false,
        }
    }
}

/// One (replication, method) result; failed fits keep their error message.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRow {
    pub replication: usize,
    pub method: Method,
    pub contamination_level: f64,
    pub ne_sigma: Option<f64>,
    pub ne_mu: Option<f64>,
    pub ne_nu: Option<f64>,
    pub iterations: Option<usize>,
    pub seconds: Option<f64>,
    pub error: Option<String>,
}

/// Mean/standard deviation per method over successful replications.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub contamination_level: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub ne_sigma: Moments,
    pub ne_mu: Moments,
    pub ne_nu: Option<Moments>,
    pub median_ne_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single value.
    pub sd: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd })
    }
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<ReplicationRow>,
    pub summary: Vec<MethodSummary>,
}

impl ExperimentResult {
    pub fn summary_for(&self, method: Method, level: f64) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method && s.contamination_level == level)
    }
}

/// Canonical, duplicate-free method list.
fn canonical(methods: &[Method]) -> Vec<Method> {
    let mut m = methods.to_vec();
    m.sort();
    m.dedup();
    m
}

/// The data set for replication `rep`, contaminated if requested.
pub fn replication_data(
    truth: &FactorTParams,
    spec: &SynthSpec,
    contamination: Option<&ContaminationSpec>,
    rep: usize,
) -> Result<Dataset> {
    let clean = sample_data(truth, spec, derive_seed(spec.seed, rep as u64, STAGE_SAMPLE))?;
    match contamination {
        Some(c) => contaminate(&clean, c, derive_seed(spec.seed, rep as u64, STAGE_CONTAMINATE)),
        None => Ok(clean),
    }
}

fn run_one(
    config: &ExperimentConfig,
    truth: &FactorTParams,
    methods: &[Method],
    rank: usize,
    level: f64,
    rep: usize,
) -> Vec<ReplicationRow> {
    let data = replication_data(truth, &config.spec, config.contamination.as_ref(), rep);
    methods
        .iter()
        .map(|&method| {
            let mut row = ReplicationRow {
                replication: rep,
                method,
                contamination_level: level,
                ne_sigma: None,
                ne_mu: None,
                ne_nu: None,
                iterations: None,
                seconds: None,
                error: None,
            };
            let data = match &data {
                Ok(d) => d,
                Err(e) => {
                    row.error = Some(e.to_string());
                    return row;
                }
            };
            let started = Instant::now();
            let outcome = estimate(method, data, rank, &config.fit).and_then(|est| {
                let ne = comparable_errors(&est, truth, config.spec.effective_nu(), config.compare)?;
                Ok((est.iterations, ne))
            });
            if config.timing {
                row.seconds = Some(started.elapsed().as_secs_f64());
            }
            match outcome {
                Ok((iterations, ne)) => {
                    row.ne_sigma = Some(ne.ne_sigma);
                    row.ne_mu = Some(ne.ne_mu);
                    row.ne_nu = ne.ne_nu;
                    row.iterations = Some(iterations);
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect()
}

fn summarize(rows: &[ReplicationRow], methods: &[Method], level: f64) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|&method| {
            let mine: Vec<&ReplicationRow> = rows.iter().filter(|r| r.method == method).collect();
            let ok: Vec<&ReplicationRow> = mine.iter().copied().filter(|r| r.error.is_none()).collect();
            let sigma: Vec<f64> = ok.iter().filter_map(|r| r.ne_sigma).collect();
            let mu: Vec<f64> = ok.iter().filter_map(|r| r.ne_mu).collect();
            let nu: Vec<f64> = ok.iter().filter_map(|r| r.ne_nu).collect();
            let nan = Moments { mean: f64::NAN, sd: f64::NAN };
            MethodSummary {
                method,
                contamination_level: level,
                n_ok: ok.len(),
                n_failed: mine.len() - ok.len(),
                ne_sigma: Moments::of(&sigma).unwrap_or(nan),
                ne_mu: Moments::of(&mu).unwrap_or(nan),
                ne_nu: Moments::of(&nu),
                median_ne_sigma: median(&sigma),
            }
        })
        .collect()
}

/// Runs `n_rep` replications of every method against one fixed truth.
/// Rows are ordered by replication, then canonical method order, whatever the
/// order of `config.methods`. Method failures are recorded in the rows.
pub fn run_replications(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let truth = make_truth(&config.spec)?;
    if let Some(c) = &config.contamination {
        c.validate()?;
    }
    if config.methods.is_empty() {
        return Err(Error::InvalidParameter("no methods selected".into()));
    }
    let methods = canonical(&config.methods);
    let rank = config.rank.unwrap_or(config.spec.r);
    let level = config.contamination.map_or(0.0, |c| c.row_fraction);
    let rows: Vec<ReplicationRow> = (0..config.n_rep)
        .into_par_iter()
        .flat_map_iter(|rep| run_one(config, &truth, &methods, rank, level, rep))
        .collect();
    let summary = summarize(&rows, &methods, level);
    Ok(ExperimentResult { rows, summary })
}

/// Runs [`run_replications`] at each contamination level. Replication data
/// are paired across levels (same clean draws and contamination streams).
pub fn run_sweep(config: &ExperimentConfig, mode: ContaminationMode, levels: &[f64]) -> Result<ExperimentResult> {
    let base = config.contamination.unwrap_or(match mode {
        ContaminationMode::Outliers => ContaminationSpec::outliers(0.0),
        ContaminationMode::Missing => ContaminationSpec::missing(0.0),
    });
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &level in levels {
        let mut cfg = config.clone();
        cfg.contamination = Some(ContaminationSpec { row_fraction: level, mode, ..base });
        let part = run_replications(&cfg)?;
        rows.extend(part.rows);
        summary.extend(part.summary);
    }
    Ok(ExperimentResult { rows, summary })
}

fn opt_field<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Tidy CSV: replication, method, contamination_level, ne_sigma, ne_mu,
/// ne_nu, iterations, seconds, error. Missing values are empty cells.
pub fn write_rows_csv<W: Write>(rows: &[ReplicationRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record([
        "replication",
        "method",
        "contamination_level",
        "ne_sigma",
        "ne_mu",
        "ne_nu",
        "iterations",
        "seconds",
        "error",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.replication.to_string(),
            r.method.to_string(),
            r.contamination_level.to_string(),
            opt_field(r.ne_sigma),
            opt_field(r.ne_mu),
            opt_field(r.ne_nu),
            opt_field(r.iterations),
            opt_field(r.seconds),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> SynthSpec {
        SynthSpec { p: 12, r: 3, sector_size: 4, t_len: 200, seed, ..Default::default() }
    }

    #[test]
    fn truth_has_sector_loadings() {
        let truth = make_truth(&SynthSpec::default()).unwrap();
        let b = truth.loadings();
        let btb = b.transpose() * b;
        assert_eq!(btb, DMatrix::identity(5, 5) * 20.0);
        for j in 0..5 {
            assert_eq!(b.column(j).iter().filter(|&&v| v == 1.0).count(), 20);
            assert_eq!(b.column(j).iter().filter(|&&v| v == 0.0).count(), 80);
        }
        assert_eq!(truth.nu(), 7.0);
        assert_eq!(make_truth(&SynthSpec::default()).unwrap(), truth);
    }

    #[test]
    fn truth_rejects_bad_layout() {
        let spec = SynthSpec { p: 99, ..Default::default() };
        assert!(make_truth(&spec).is_err());
    }

    #[test]
    fn psi_mean_matches_monte_carlo() {
        let spec = SynthSpec { p: 100_000, r: 1, sector_size: 100_000, ..Default::default() };
        let truth = make_truth(&spec).unwrap();
        let mean = truth.psi().mean();
        assert!((mean - 10.0).abs() < 0.2, "mean {mean}");
    }

    #[test]
    fn outliers_touch_only_chosen_rows() {
        let spec = small_spec(1);
        let truth = make_truth(&spec).unwrap();
        let data = sample_data(&truth, &spec, 9).unwrap();
        let c = ContaminationSpec::outliers(0.1);
        let dirty = inject_outliers(&data, &c, 3).unwrap();
        let changed: Vec<usize> =
            (0..200).filter(|&t| dirty.values().row(t) != data.values().row(t)).collect();
        assert_eq!(changed.len(), 20);
        assert_eq!(dirty.mask(), data.mask());

        assert_eq!(inject_outliers(&data, &ContaminationSpec::outliers(0.0), 3).unwrap(), data);
        let silent = ContaminationSpec { outlier_variance: 0.0, ..ContaminationSpec::outliers(1.0) };
        assert_eq!(inject_outliers(&data, &silent, 3).unwrap(), data);
    }

    #[test]
    fn outlier_noise_has_requested_variance() {
        let spec = SynthSpec { t_len: 1000, ..small_spec(2) };
        let truth = make_truth(&spec).unwrap();
        let data = sample_data(&truth, &spec, 4).unwrap();
        let dirty = inject_outliers(&data, &ContaminationSpec::outliers(1.0), 5).unwrap();
        let diff: Vec<f64> = (dirty.values() - data.values()).iter().copied().collect();
        assert!(diff.len() >= 10_000);
        let m = Moments::of(&diff).unwrap();
        assert!((m.sd * m.sd - 50.0).abs() < 5.0, "variance {}", m.sd * m.sd);
    }

    #[test]
    fn missing_cells_are_counted_exactly() {
        let spec = SynthSpec { p: 100, r: 5, sector_size: 20, t_len: 50, seed: 3, ..Default::default() };
        let truth = make_truth(&spec).unwrap();
        let data = sample_data(&truth, &spec, 6).unwrap();
        let c = ContaminationSpec::missing(0.2);
        let holey = inject_missing(&data, &c, 7).unwrap();
        assert_eq!(holey.missing_count(), 10 * 10);
        for t in 0..50 {
            let miss = (0..100).filter(|&j| !holey.is_observed(t, j)).count();
            assert!(miss == 0 || miss == 10);
        }
        assert_eq!(inject_missing(&data, &ContaminationSpec::missing(0.0), 7).unwrap(), data);
        let full = ContaminationSpec { missing_cell_fraction: 1.0, ..c };
        assert!(inject_missing(&data, &full, 7).is_err());
    }

    #[test]
    fn cells_per_row_rounds_up() {
        let c = ContaminationSpec::missing(1.0);
        assert_eq!(c.cells_per_row(100), 10);
        assert_eq!(c.cells_per_row(20), 2);
        assert_eq!(c.cells_per_row(30), 3);
        assert_eq!(c.cells_per_row(25), 3);
    }

    #[test]
    fn comparison_conventions() {
        let spec = small_spec(4);
        let truth = make_truth(&spec).unwrap();
        let s7 = 7.0 / 5.0;
        let est = |method: Method, cov: DMatrix<f64>, nu: Option<f64>| CovEstimate {
            method,
            mu: truth.mu().clone(),
            cov,
            nu,
            loadings: None,
            psi: None,
            iterations: 0,
            converged: true,
            loglik_trace: Vec::new(),
        };
        let exact_scale = est(Method::RfaGem, truth.sigma(), Some(7.0));
        let exact_cov = est(Method::Scm, truth.sigma() * s7, None);
        for compare in [Compare::Scale, Compare::Covariance] {
            for e in [&exact_scale, &exact_cov] {
                let ne = comparable_errors(e, &truth, 7.0, compare).unwrap();
                assert!(ne.ne_sigma < 1e-14 && ne.ne_mu == 0.0);
            }
        }
        // a scale estimate with the wrong ν is only penalized under covariance
        let wrong_nu = est(Method::StuT, truth.sigma(), Some(4.0));
        assert!(comparable_errors(&wrong_nu, &truth, 7.0, Compare::Scale).unwrap().ne_sigma < 1e-14);
        let cov = comparable_errors(&wrong_nu, &truth, 7.0, Compare::Covariance).unwrap();
        assert!((cov.ne_sigma - (2.0 / s7 - 1.0)).abs() < 1e-12);
        assert!((cov.ne_nu.unwrap() - (2.0 / s7 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn smoke_single_replication() {
        let cfg = ExperimentConfig::new(small_spec(5), vec![Method::Scm], 1);
        let res = run_replications(&cfg).unwrap();
        assert_eq!(res.rows.len(), 1);
        assert!(res.rows[0].ne_sigma.unwrap().is_finite());
        assert!(res.rows[0].seconds.is_none());
    }

    #[test]
    fn method_order_does_not_matter() {
        let mut cfg = ExperimentConfig::new(small_spec(6), vec![Method::Gfa, Method::Scm, Method::RfaGem], 3);
        cfg.contamination = Some(ContaminationSpec::outliers(0.05));
        let a = run_replications(&cfg).unwrap();
        cfg.methods = vec![Method::Scm, Method::RfaGem, Method::Gfa, Method::Scm];
        let b = run_replications(&cfg).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn subsets_of_replications_reproduce() {
        let spec = small_spec(7);
        let truth = make_truth(&spec).unwrap();
        let c = ContaminationSpec::missing(0.3);
        let full = run_replications(&ExperimentConfig {
            contamination: Some(c),
            ..ExperimentConfig::new(spec.clone(), vec![Method::RfaGem], 4)
        })
        .unwrap();
        let d3 = replication_data(&truth, &spec, Some(&c), 3).unwrap();
        let again = estimate(Method::RfaGem, &d3, 3, &FitOptions::default()).unwrap();
        let ne = comparable_errors(&again, &truth, 7.0, Compare::Scale).unwrap();
        assert_eq!(full.rows[3].ne_sigma, Some(ne.ne_sigma));
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let mut cfg = ExperimentConfig::new(small_spec(8), vec![Method::RfaPx, Method::Scm], 2);
        cfg.contamination = Some(ContaminationSpec::missing(0.5));
        let res = run_replications(&cfg).unwrap();
        let px: Vec<_> = res.rows.iter().filter(|r| r.method == Method::RfaPx).collect();
        assert!(px.iter().all(|r| r.error.is_some() && r.ne_sigma.is_none()));
        let s = res.summary_for(Method::RfaPx, 0.5).unwrap();
        assert_eq!((s.n_ok, s.n_failed), (0, 2));
        assert!(res.summary_for(Method::Scm, 0.5).unwrap().n_ok == 2);
    }

    #[test]
    fn csv_has_tidy_columns() {
        let cfg = ExperimentConfig::new(small_spec(9), vec![Method::Scm, Method::StuT], 2);
        let res = run_replications(&cfg).unwrap();
        let mut buf = Vec::new();
        write_rows_csv(&res.rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "replication,method,contamination_level,ne_sigma,ne_mu,ne_nu,iterations,seconds,error"
        );
        assert_eq!(lines.count(), 4);
    }

    #[test]
    fn sweep_pairs_levels() {
        let cfg = ExperimentConfig::new(small_spec(10), vec![Method::Scm], 2);
        let res = run_sweep(&cfg, ContaminationMode::Outliers, &[0.0, 0.1]).unwrap();
        assert_eq!(res.rows.len(), 4);
        // level 0 equals the uncontaminated run
        let clean = run_replications(&cfg).unwrap();
        assert_eq!(res.rows[0].ne_sigma, clean.rows[0].ne_sigma);
    }

    #[test]
    fn moments_and_median() {
        let m = Moments::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.mean, 2.5);
        assert!((m.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
