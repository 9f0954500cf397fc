use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use robust_fa::backtest::{
    business_days, load_csv, prices_to_returns, rolling_backtest, BacktestOptions, BacktestResult, ReturnPanel,
};
use robust_fa::baselines::{estimate, Method};
use robust_fa::experiments::{
    make_truth, replication_data, run_replications, run_sweep, write_rows_csv, Compare, ContaminationMode,
    ContaminationSpec, Dgp, ExperimentConfig, MethodSummary, SynthSpec, DEFAULT_LEVELS,
};
use robust_fa::rfa::{fit_gem, fit_px_em, init_naive_pca, FitReport, DEFAULT_NU0};
use robust_fa::{Error, FitOptions, InnerMethod, Result};

#[derive(Parser)]
#[command(name = "rfa", version, about = "Robust factor analysis for heavy-tailed data")]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Factor count; simulate and experiment default to p / sector-size, fit and backtest to 2.
    #[arg(long, global = true)]
    rank: Option<usize>,
    #[arg(long, global = true, default_value = "rfa-gem")]
    method: Method,
    #[arg(long, global = true, default_value = "alternating")]
    inner: InnerMethod,
    #[arg(long, global = true, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, global = true, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, global = true, default_value = "scale")]
    compare: Compare,
    #[arg(long, global = true, default_value = "t")]
    dgp: Dgp,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one method to a panel CSV and print the estimate as JSON.
    Fit(FitArgs),
    /// Draw a synthetic factor-model panel and write it as CSV.
    Simulate(SimulateArgs),
    /// Run seeded replications and write the tidy results CSV.
    Experiment(ExperimentArgs),
    /// Rolling minimum-variance backtest on a panel CSV.
    Backtest(BacktestArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    p: usize,
    #[arg(long, default_value_t = 20)]
    sector_size: usize,
    #[arg(long, default_value_t = 7.0)]
    nu: f64,
    #[arg(long, default_value_t = 10.0)]
    psi_mean: f64,
    #[arg(long, default_value_t = 500)]
    t_len: usize,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    /// Treat the input as prices and convert to simple returns.
    #[arg(long)]
    prices: bool,
    /// Hold ν fixed (RFA methods).
    #[arg(long)]
    fix_nu: Option<f64>,
    #[arg(long, default_value_t = 1)]
    inner_rounds: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    synth: SynthArgs,
    /// Fraction of rows hit by N(0, outlier-variance) noise.
    #[arg(long, conflicts_with = "missing")]
    outliers: Option<f64>,
    /// Fraction of rows with missing cells.
    #[arg(long)]
    missing: Option<f64>,
    #[arg(long, default_value_t = 50.0)]
    outlier_variance: f64,
    #[arg(long, default_value_t = 0.10)]
    missing_cell_fraction: f64,
    /// Multiplier applied to every simulated value.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    /// Comma-separated methods; defaults to all of them.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// none, outliers or missing.
    #[arg(long, default_value = "none")]
    contamination: String,
    /// Comma-separated row fractions for a contamination sweep.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    #[arg(long, default_value_t = 50.0)]
    outlier_variance: f64,
    #[arg(long, default_value_t = 0.10)]
    missing_cell_fraction: f64,
    /// Record wall-clock seconds per fit (makes the output non-reproducible).
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-method summary statistics as JSON.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct BacktestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    prices: bool,
    /// Comma-separated methods; defaults to --method.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long, default_value_t = 100)]
    lookback: usize,
    #[arg(long, default_value_t = 5)]
    test_window: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat CSV of daily out-of-sample returns (date, method, return).
    #[arg(long)]
    returns_csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string().trim_end().to_string();
            emit_error("usage", message);
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        // downstream reader closed the pipe (e.g. `| head`)
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            emit_error(e.kind(), e.to_string());
            ExitCode::FAILURE
        }
    }
}

fn emit_error(kind: &str, message: String) {
    let report = ErrorReport { error: kind, message };
    eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(args) => cmd_fit(cli, args),
        Command::Simulate(args) => cmd_simulate(cli, args),
        Command::Experiment(args) => cmd_experiment(cli, args),
        Command::Backtest(args) => cmd_backtest(cli, args),
    }
}

fn fit_options(cli: &Cli) -> FitOptions {
    FitOptions { max_iter: cli.max_iter, tol: cli.tol, inner: cli.inner, ..FitOptions::default() }
}

fn synth_spec(cli: &Cli, s: &SynthArgs) -> Result<SynthSpec> {
    if s.sector_size == 0 {
        return Err(Error::InvalidParameter("sector-size must be positive".into()));
    }
    let spec = SynthSpec {
        p: s.p,
        r: cli.rank.unwrap_or(s.p / s.sector_size),
        nu_true: s.nu,
        sector_size: s.sector_size,
        psi_mean: s.psi_mean,
        t_len: s.t_len,
        seed: cli.seed,
        dgp: cli.dgp,
    };
    spec.validate()?;
    Ok(spec)
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut out = open_output(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Io(io::Error::other(e)))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn read_input(path: &Path, prices: bool) -> Result<ReturnPanel> {
    let panel = load_csv(path)?;
    if prices {
        prices_to_returns(&panel)
    } else {
        Ok(panel)
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

#[derive(Serialize)]
struct FitOutput {
    method: &'static str,
    /// "scale" for Student-t methods, "covariance" otherwise.
    estimand: &'static str,
    rank: Option<usize>,
    assets: Vec<String>,
    n_rows: usize,
    missing_cells: usize,
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    loadings: Option<Vec<Vec<f64>>>,
    psi: Option<Vec<f64>>,
    nu: Option<f64>,
    report: FitSummary,
}

#[derive(Serialize)]
struct FitSummary {
    iterations: usize,
    converged: bool,
    final_loglik: Option<f64>,
    loglik_trace: Vec<f64>,
    inner_method: Option<&'static str>,
    clamp_events: Option<usize>,
    nu_at_bound: Option<bool>,
    alpha: Option<f64>,
}

fn rfa_output(report: &FitReport, base: FitOutput) -> FitOutput {
    let p = &report.params;
    FitOutput {
        mu: vec_of(p.mu()),
        sigma: rows(&p.sigma()),
        loadings: Some(rows(p.loadings())),
        psi: Some(vec_of(p.psi())),
        nu: Some(p.nu()),
        report: FitSummary {
            iterations: report.iterations,
            converged: report.converged,
            final_loglik: report.loglik_trace.last().copied(),
            loglik_trace: report.loglik_trace.clone(),
            inner_method: Some(report.inner_method.as_str()),
            clamp_events: Some(report.clamp_events),
            nu_at_bound: Some(report.nu_at_bound),
            alpha: report.alpha,
        },
        ..base
    }
}

fn cmd_fit(cli: &Cli, args: &FitArgs) -> Result<()> {
    let panel = read_input(&args.input, args.prices)?;
    let data = panel.window(0, panel.n_rows())?;
    let rank = cli.rank.unwrap_or(2);
    let opts = FitOptions { inner_rounds: args.inner_rounds, fix_nu: args.fix_nu, ..fit_options(cli) };
    let method = cli.method;
    let base = FitOutput {
        method: method.as_str(),
        estimand: match method.estimand() {
            robust_fa::baselines::Estimand::Scale => "scale",
            robust_fa::baselines::Estimand::Covariance => "covariance",
        },
        rank: method.is_structured().then_some(rank),
        assets: panel.assets().to_vec(),
        n_rows: data.n_rows(),
        missing_cells: data.missing_count(),
        mu: Vec::new(),
        sigma: Vec::new(),
        loadings: None,
        psi: None,
        nu: None,
        report: FitSummary {
            iterations: 0,
            converged: true,
            final_loglik: None,
            loglik_trace: Vec::new(),
            inner_method: None,
            clamp_events: None,
            nu_at_bound: None,
            alpha: None,
        },
    };
    let output = match method {
        Method::RfaGem | Method::RfaPx => {
            let init = init_naive_pca(&data, rank, DEFAULT_NU0)?;
            let report = if method == Method::RfaPx {
                fit_px_em(&data, &init, &opts)?
            } else {
                fit_gem(&data, &init, &opts)?
            };
            rfa_output(&report, base)
        }
        _ => {
            let est = estimate(method, &data, rank, &opts)?;
            FitOutput {
                mu: vec_of(&est.mu),
                sigma: rows(&est.cov),
                loadings: est.loadings.as_ref().map(rows),
                psi: est.psi.as_ref().map(vec_of),
                nu: est.nu,
                report: FitSummary {
                    iterations: est.iterations,
                    converged: est.converged,
                    final_loglik: est.loglik_trace.last().copied(),
                    loglik_trace: est.loglik_trace,
                    ..base.report
                },
                ..base
            }
        }
    };
    write_json(&output, args.out.as_deref())
}

fn contamination(
    mode: ContaminationMode,
    row_fraction: f64,
    outlier_variance: f64,
    missing_cell_fraction: f64,
) -> ContaminationSpec {
    ContaminationSpec { row_fraction, outlier_variance, missing_cell_fraction, mode }
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let spec = synth_spec(cli, &args.synth)?;
    if !(args.scale.is_finite() && args.scale > 0.0) {
        return Err(Error::InvalidParameter("scale must be positive".into()));
    }
    let contam = match (args.outliers, args.missing) {
        (Some(f), _) => Some(contamination(
            ContaminationMode::Outliers,
            f,
            args.outlier_variance,
            args.missing_cell_fraction,
        )),
        (None, Some(f)) => Some(contamination(
            ContaminationMode::Missing,
            f,
            args.outlier_variance,
            args.missing_cell_fraction,
        )),
        (None, None) => None,
    };
    if let Some(c) = &contam {
        c.validate()?;
    }
    let truth = make_truth(&spec)?;
    let data = replication_data(&truth, &spec, contam.as_ref(), 0)?;
    let start = chrono::NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let dates = business_days(start, spec.t_len);
    let assets = (0..spec.p).map(|j| format!("A{:03}", j + 1)).collect();
    let panel = ReturnPanel::new(dates, assets, data.values() * args.scale, data.mask().clone())?;
    let mut out = open_output(args.out.as_deref())?;
    panel.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryRow {
    method: &'static str,
    contamination_level: f64,
    n_ok: usize,
    n_failed: usize,
    ne_sigma_mean: f64,
    ne_sigma_sd: f64,
    ne_sigma_median: f64,
    ne_mu_mean: f64,
    ne_mu_sd: f64,
    ne_nu_mean: Option<f64>,
    ne_nu_sd: Option<f64>,
}

impl From<&MethodSummary> for SummaryRow {
    fn from(s: &MethodSummary) -> Self {
        SummaryRow {
            method: s.method.as_str(),
            contamination_level: s.contamination_level,
            n_ok: s.n_ok,
            n_failed: s.n_failed,
            ne_sigma_mean: s.ne_sigma.mean,
            ne_sigma_sd: s.ne_sigma.sd,
            ne_sigma_median: s.median_ne_sigma,
            ne_mu_mean: s.ne_mu.mean,
            ne_mu_sd: s.ne_mu.sd,
            ne_nu_mean: s.ne_nu.map(|m| m.mean),
            ne_nu_sd: s.ne_nu.map(|m| m.sd),
        }
    }
}

#[derive(Serialize)]
struct ExperimentSummary {
    p: usize,
    r: usize,
    nu_true: f64,
    t_len: usize,
    seed: u64,
    dgp: &'static str,
    compare: &'static str,
    replications: usize,
    contamination: &'static str,
    methods: Vec<SummaryRow>,
}

fn cmd_experiment(cli: &Cli, args: &ExperimentArgs) -> Result<()> {
    let spec = synth_spec(cli, &args.synth)?;
    let methods = args.methods.clone().unwrap_or_else(|| Method::ALL.to_vec());
    let mut config = ExperimentConfig::new(spec.clone(), methods, args.reps);
    config.fit = fit_options(cli);
    config.compare = cli.compare;
    config.timing = args.timing;
    let mode = match args.contamination.as_str() {
        "none" => None,
        other => Some(other.parse::<ContaminationMode>()?),
    };
    let result = match mode {
        None => {
            if args.levels.is_some() {
                return Err(Error::InvalidParameter("--levels requires --contamination".into()));
            }
            run_replications(&config)?
        }
        Some(mode) => {
            config.contamination =
                Some(contamination(mode, 0.0, args.outlier_variance, args.missing_cell_fraction));
            let levels = args.levels.clone().unwrap_or_else(|| DEFAULT_LEVELS.to_vec());
            run_sweep(&config, mode, &levels)?
        }
    };
    let mut out = open_output(args.out.as_deref())?;
    write_rows_csv(&result.rows, &mut out)?;
    out.flush()?;
    if let Some(path) = &args.summary {
        let summary = ExperimentSummary {
            p: spec.p,
            r: spec.r,
            nu_true: spec.nu_true,
            t_len: spec.t_len,
            seed: spec.seed,
            dgp: spec.dgp.as_str(),
            compare: cli.compare.as_str(),
            replications: args.reps,
            contamination: mode.map_or("none", |m| m.as_str()),
            methods: result.summary.iter().map(SummaryRow::from).collect(),
        };
        write_json(&summary, Some(path))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct WindowOutput {
    date: String,
    weights: Option<Vec<f64>>,
    error: Option<String>,
}

#[derive(Serialize)]
struct DailyReturn {
    date: String,
    portfolio_return: f64,
}

#[derive(Serialize)]
struct MethodBacktest {
    method: &'static str,
    annualized_volatility: f64,
    windows_total: usize,
    windows_failed: usize,
    windows: Vec<WindowOutput>,
    daily: Vec<DailyReturn>,
}

#[derive(Serialize)]
struct BacktestOutput {
    assets: Vec<String>,
    n_rows: usize,
    lookback: usize,
    test_window: usize,
    rank: usize,
    results: Vec<MethodBacktest>,
}

fn method_backtest(res: &BacktestResult) -> MethodBacktest {
    MethodBacktest {
        method: res.method.as_str(),
        annualized_volatility: res.annualized_volatility,
        windows_total: res.windows.len(),
        windows_failed: res.failed_windows(),
        windows: res
            .windows
            .iter()
            .map(|w| WindowOutput {
                date: w.date.to_string(),
                weights: w.weights.as_ref().map(vec_of),
                error: w.error.clone(),
            })
            .collect(),
        daily: res
            .dates
            .iter()
            .zip(&res.daily_returns)
            .map(|(d, &r)| DailyReturn { date: d.to_string(), portfolio_return: r })
            .collect(),
    }
}

fn cmd_backtest(cli: &Cli, args: &BacktestArgs) -> Result<()> {
    let panel = read_input(&args.input, args.prices)?;
    let rank = cli.rank.unwrap_or(2);
    let mut methods = args.methods.clone().unwrap_or_else(|| vec![cli.method]);
    methods.sort();
    methods.dedup();
    let mut results = Vec::with_capacity(methods.len());
    for method in methods {
        let opts = BacktestOptions {
            rank,
            fit: fit_options(cli),
            lookback: args.lookback,
            test_window: args.test_window,
            ..BacktestOptions::new(method)
        };
        results.push(rolling_backtest(&panel, &opts)?);
    }
    if let Some(path) = &args.returns_csv {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        let csv_err = |e: csv::Error| Error::Io(io::Error::other(e));
        w.write_record(["date", "method", "return"]).map_err(csv_err)?;
        for res in &results {
            for (d, r) in res.dates.iter().zip(&res.daily_returns) {
                w.write_record([d.to_string(), res.method.as_str().to_string(), r.to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
    }
    let output = BacktestOutput {
        assets: panel.assets().to_vec(),
        n_rows: panel.n_rows(),
        lookback: args.lookback,
        test_window: args.test_window,
        rank,
        results: results.iter().map(method_backtest).collect(),
    };
    write_json(&output, args.out.as_deref())
}
