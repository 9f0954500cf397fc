//! Gaussian factor-analysis maximum likelihood on a fixed scatter matrix:
//!
//! maximize log|Σ⁻¹| − Tr(Σ⁻¹S)  subject to Σ = BBᵀ + Diag(ψ), ψ > 0.
//!
//! Two solvers are provided. The alternating solver updates B in closed
//! form for fixed ψ and then sets ψ = Diag(S − BBᵀ). The MM solver works on
//! φ = 1/ψ, majorizing the concentrated objective f(φ) = f₁(φ) − f₂(φ) by
//! linearizing the convex f₂. Both generate the same ψ sequence.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::sigma_of;

/// Default inner tolerance for standalone solves.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default iteration cap for standalone solves.
pub const DEFAULT_MAX_ITER: usize = 500;

/// Which inner solver performs a GFA update round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InnerMethod {
    #[default]
    Alternating,
    Mm,
}

impl InnerMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            InnerMethod::Alternating => "alternating",
            InnerMethod::Mm => "mm",
        }
    }
}

impl std::str::FromStr for InnerMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alternating" => Ok(InnerMethod::Alternating),
            "mm" => Ok(InnerMethod::Mm),
            other => Err(Error::InvalidParameter(format!("unknown inner method `{other}`"))),
        }
    }
}

/// Target scatter, rank bound and lower bound on ψ.
#[derive(Debug, Clone)]
pub struct GfaProblem {
    scatter: DMatrix<f64>,
    rank: usize,
    psi_floor: f64,
}

impl GfaProblem {
    /// Problem with the default floor 1e-8 · trace(S) / p.
    pub fn new(scatter: DMatrix<f64>, rank: usize) -> Result<Self> {
        let p = scatter.nrows();
        let floor = 1e-8 * scatter.trace() / p.max(1) as f64;
        Self::with_floor(scatter, rank, floor)
    }

    pub fn with_floor(mut scatter: DMatrix<f64>, rank: usize, psi_floor: f64) -> Result<Self> {
        let p = scatter.nrows();
        if scatter.ncols() != p {
            return Err(Error::DimensionMismatch { expected: p, actual: scatter.ncols() });
        }
        if rank >= p {
            return Err(Error::InvalidParameter(format!("rank {rank} must be below dimension {p}")));
        }
        let asym = linalg::asymmetry(&scatter);
        if asym > 1e-12 * linalg::max_abs(&scatter) {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        linalg::symmetrize(&mut scatter);
        if scatter.diagonal().iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter("scatter diagonal must be positive".into()));
        }
        if !(psi_floor > 0.0) {
            return Err(Error::InvalidParameter("psi floor must be positive".into()));
        }
        Ok(Self { scatter, rank, psi_floor })
    }

    pub fn scatter(&self) -> &DMatrix<f64> {
        &self.scatter
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn psi_floor(&self) -> f64 {
        self.psi_floor
    }

    pub fn dim(&self) -> usize {
        self.scatter.nrows()
    }

    /// log|Σ⁻¹| − Tr(Σ⁻¹S) at Σ = BBᵀ + Diag(ψ).
    pub fn objective(&self, loadings: &DMatrix<f64>, psi: &DVector<f64>) -> Result<f64> {
        let sigma = sigma_of(loadings, psi);
        let chol = linalg::cholesky(&sigma, "gfa objective")?;
        let sol = chol.solve(&self.scatter);
        Ok(-linalg::log_det(&chol) - sol.trace())
    }

    fn check_psi(&self, psi: &DVector<f64>) -> Result<()> {
        if psi.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: psi.len() });
        }
        if psi.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter("psi must be positive".into()));
        }
        Ok(())
    }
}

/// Result of a GFA solve.
#[derive(Debug, Clone)]
pub struct GfaSolution {
    pub loadings: DMatrix<f64>,
    pub psi: DVector<f64>,
    /// Objective log|Σ⁻¹| − Tr(Σ⁻¹S) at the returned (B, ψ).
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Number of ψ entries raised to the floor, summed over iterations.
    pub clamp_events: usize,
    /// Objective at the start point followed by one value per iteration.
    pub objective_trace: Vec<f64>,
    /// ψ after each iteration.
    pub psi_trace: Vec<DVector<f64>>,
}

/// Eigen-decomposition with eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SymEvd {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Symmetric EVD, eigenvalues descending; each eigenvector is signed so that
/// its largest-magnitude entry is positive.
pub fn sym_evd_desc(m: &DMatrix<f64>) -> Result<SymEvd> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: m.ncols() });
    }
    let asym = linalg::asymmetry(m);
    if asym > 1e-10 * linalg::max_abs(m).max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let mut sym = m.clone();
    linalg::symmetrize(&mut sym);
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite matrix in eigen-decomposition".into()));
    }
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let mut lead = 0;
        for i in 1..n {
            if col[i].abs() > col[lead].abs() {
                lead = i;
            }
        }
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[(i, k)] = sign * col[i];
        }
    }
    Ok(SymEvd { values, vectors })
}

/// EVD of Ψ^{−1/2} S Ψ^{−1/2} (equivalently Φ^{1/2} S Φ^{1/2}).
fn whitened_evd(problem: &GfaProblem, psi: &DVector<f64>) -> Result<SymEvd> {
    let p = problem.dim();
    let inv_sqrt = psi.map(|v| 1.0 / v.sqrt());
    let s = &problem.scatter;
    let white = DMatrix::from_fn(p, p, |i, j| inv_sqrt[i] * s[(i, j)] * inv_sqrt[j]);
    sym_evd_desc(&white)
}

fn loadings_from_evd(psi: &DVector<f64>, evd: &SymEvd, rank: usize) -> DMatrix<f64> {
    let p = psi.len();
    DMatrix::from_fn(p, rank, |i, k| {
        let d = (evd.values[k] - 1.0).max(0.0);
        psi[i].sqrt() * evd.vectors[(i, k)] * d.sqrt()
    })
}

/// Closed-form maximizer over B for fixed ψ: B⋆ = Ψ^{1/2} U_r D_r^{1/2} with
/// dᵢ = max(λᵢ − 1, 0) from the EVD of Ψ^{−1/2} S Ψ^{−1/2}.
///
/// Columns past the effective rank are zero.
pub fn optimal_loadings(problem: &GfaProblem, psi: &DVector<f64>) -> Result<DMatrix<f64>> {
    problem.check_psi(psi)?;
    let evd = whitened_evd(problem, psi)?;
    Ok(loadings_from_evd(psi, &evd, problem.rank))
}

/// f₁(φ) = Σ (−log φᵢ + Sᵢᵢ φᵢ).
pub fn mm_f1(problem: &GfaProblem, phi: &DVector<f64>) -> f64 {
    phi.iter()
        .zip(problem.scatter.diagonal().iter())
        .map(|(f, s)| -f.ln() + s * f)
        .sum()
}

fn f2_from_values(values: &DVector<f64>, rank: usize) -> f64 {
    -values
        .iter()
        .take(rank)
        .map(|&l| {
            let m = l.max(1.0);
            m.ln() - m + 1.0
        })
        .sum::<f64>()
}

/// f₂(φ) = −Σ_{i≤r} (log max(1, λᵢ*) − max(1, λᵢ*) + 1) over the top
/// eigenvalues of Φ^{1/2} S Φ^{1/2}.
pub fn mm_f2(problem: &GfaProblem, phi: &DVector<f64>) -> Result<f64> {
    problem.check_psi(phi)?;
    let psi = phi.map(|v| 1.0 / v);
    let evd = whitened_evd(problem, &psi)?;
    Ok(f2_from_values(&evd.values, problem.rank))
}

/// f(φ) = f₁(φ) − f₂(φ); equals minus the concentrated GFA objective.
pub fn mm_objective(problem: &GfaProblem, phi: &DVector<f64>) -> Result<f64> {
    Ok(mm_f1(problem, phi) - mm_f2(problem, phi)?)
}

fn mm_gradient_from_evd(problem: &GfaProblem, phi: &DVector<f64>, evd: &SymEvd) -> DVector<f64> {
    let p = problem.dim();
    let r = problem.rank;
    let sqrt_phi = phi.map(f64::sqrt);
    // Φ^{-1/2} U D₁ Uᵀ
    let mut left = DMatrix::<f64>::zeros(p, p);
    for k in 0..r {
        let lambda = evd.values[k];
        let d = if lambda > 1.0 { 1.0 - 1.0 / lambda } else { 0.0 };
        if d == 0.0 {
            continue;
        }
        let u = evd.vectors.column(k);
        for j in 0..p {
            for i in 0..p {
                left[(i, j)] += d * u[i] * u[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..p {
            left[(i, j)] /= sqrt_phi[i];
        }
    }
    // Φ^{1/2} S
    let s = &problem.scatter;
    let right = DMatrix::from_fn(p, p, |i, j| sqrt_phi[i] * s[(i, j)]);
    DVector::from_fn(p, |i, _| (0..p).map(|k| left[(i, k)] * right[(k, i)]).sum())
}

/// Subgradient ∇ of f₂ at φ: ∇ᵢ = (Φ^{−1/2} U* D₁ U*ᵀ Φ^{1/2} S)ᵢᵢ with
/// D₁ = Diag(max(0, 1 − 1/λᵢ*)) on the top r eigenpairs.
pub fn mm_gradient(problem: &GfaProblem, phi: &DVector<f64>) -> Result<DVector<f64>> {
    problem.check_psi(phi)?;
    let psi = phi.map(|v| 1.0 / v);
    let evd = whitened_evd(problem, &psi)?;
    Ok(mm_gradient_from_evd(problem, phi, &evd))
}

fn floor_psi(values: impl Iterator<Item = f64>, floor: f64, clamps: &mut usize) -> DVector<f64> {
    let v: Vec<f64> = values
        .map(|x| {
            if x.is_nan() || x < floor {
                *clamps += 1;
                floor
            } else {
                x
            }
        })
        .collect();
    DVector::from_vec(v)
}

/// One alternating round from ψ given its whitened EVD: returns Diag(S − BBᵀ) floored.
fn alternating_psi_update(
    problem: &GfaProblem,
    psi: &DVector<f64>,
    evd: &SymEvd,
    clamps: &mut usize,
) -> DVector<f64> {
    let b = loadings_from_evd(psi, evd, problem.rank);
    let s = &problem.scatter;
    let diag = (0..problem.dim()).map(|i| s[(i, i)] - b.row(i).norm_squared());
    floor_psi(diag, problem.psi_floor, clamps)
}

/// One MM round from φ given its whitened EVD: returns ψ_new = 1/φ_new.
fn mm_psi_update(problem: &GfaProblem, phi: &DVector<f64>, evd: &SymEvd, clamps: &mut usize) -> DVector<f64> {
    let grad = mm_gradient_from_evd(problem, phi, evd);
    let s = &problem.scatter;
    let target = (0..problem.dim()).map(|i| s[(i, i)] - grad[i]);
    floor_psi(target, problem.psi_floor, clamps)
}

fn relative_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / old.abs().max(f64::MIN_POSITIVE)
}

/// Alternating B/ψ updates until the relative objective change is ≤ `tol`.
pub fn alternating_solve(problem: &GfaProblem, psi0: &DVector<f64>, max_iter: usize, tol: f64) -> Result<GfaSolution> {
    problem.check_psi(psi0)?;
    let mut psi = psi0.clone();
    let mut evd = whitened_evd(problem, &psi)?;
    let mut loadings = loadings_from_evd(&psi, &evd, problem.rank);
    let mut objective = problem.objective(&loadings, &psi)?;
    let mut objective_trace = vec![objective];
    let mut psi_trace = Vec::new();
    let mut clamp_events = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        psi = alternating_psi_update(problem, &psi, &evd, &mut clamp_events);
        evd = whitened_evd(problem, &psi)?;
        loadings = loadings_from_evd(&psi, &evd, problem.rank);
        let next = problem.objective(&loadings, &psi)?;
        objective_trace.push(next);
        psi_trace.push(psi.clone());
        let change = relative_change(next, objective);
        objective = next;
        if change <= tol {
            converged = true;
            break;
        }
    }
    Ok(GfaSolution {
        loadings,
        psi,
        objective,
        iterations,
        converged,
        clamp_events,
        objective_trace,
        psi_trace,
    })
}

/// MM iterations on φ = 1/ψ until the relative change of f(φ) is ≤ `tol`;
/// B is recovered from the final ψ by [`optimal_loadings`].
pub fn mm_solve(problem: &GfaProblem, phi0: &DVector<f64>, max_iter: usize, tol: f64) -> Result<GfaSolution> {
    problem.check_psi(phi0)?;
    let mut phi = phi0.clone();
    let mut evd = whitened_evd(problem, &phi.map(|v| 1.0 / v))?;
    let mut f = mm_f1(problem, &phi) - f2_from_values(&evd.values, problem.rank);
    let mut objective_trace = vec![-f];
    let mut psi_trace = Vec::new();
    let mut clamp_events = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let psi = mm_psi_update(problem, &phi, &evd, &mut clamp_events);
        phi = psi.map(|v| 1.0 / v);
        evd = whitened_evd(problem, &psi)?;
        let next = mm_f1(problem, &phi) - f2_from_values(&evd.values, problem.rank);
        objective_trace.push(-next);
        psi_trace.push(psi);
        let change = relative_change(next, f);
        f = next;
        if change <= tol {
            converged = true;
            break;
        }
    }
    let psi = phi.map(|v| 1.0 / v);
    let loadings = loadings_from_evd(&psi, &evd, problem.rank);
    let objective = problem.objective(&loadings, &psi)?;
    Ok(GfaSolution {
        loadings,
        psi,
        objective,
        iterations,
        converged,
        clamp_events,
        objective_trace,
        psi_trace,
    })
}

/// Exactly one update round of the chosen solver from (B, ψ).
///
/// The returned B is optimal for the returned ψ, so the objective never
/// falls below its value at the input point. `objective_trace` holds the
/// input and output objectives.
pub fn gfa_one_round(
    problem: &GfaProblem,
    loadings: &DMatrix<f64>,
    psi: &DVector<f64>,
    method: InnerMethod,
) -> Result<GfaSolution> {
    problem.check_psi(psi)?;
    if loadings.nrows() != problem.dim() {
        return Err(Error::DimensionMismatch { expected: problem.dim(), actual: loadings.nrows() });
    }
    let start = problem.objective(loadings, psi)?;
    let evd = whitened_evd(problem, psi)?;
    let mut clamp_events = 0;
    let psi_new = match method {
        InnerMethod::Alternating => alternating_psi_update(problem, psi, &evd, &mut clamp_events),
        InnerMethod::Mm => mm_psi_update(problem, &psi.map(|v| 1.0 / v), &evd, &mut clamp_events),
    };
    let evd_new = whitened_evd(problem, &psi_new)?;
    let loadings_new = loadings_from_evd(&psi_new, &evd_new, problem.rank);
    let objective = problem.objective(&loadings_new, &psi_new)?;
    Ok(GfaSolution {
        loadings: loadings_new,
        psi: psi_new.clone(),
        objective,
        iterations: 1,
        converged: false,
        clamp_events,
        objective_trace: vec![start, objective],
        psi_trace: vec![psi_new],
    })
}
