//! Model-free computation of a stabilizing minimum dwell time.
//!
//! The pipeline builds `Ψᵢ` for every subsystem, sweeps a common decay rate
//! `λ_s` over the grid `{h, 2h, .., kh}` until every data LMI is feasible,
//! computes `μᵢⱼ = λ_max(Pⱼ Pᵢ⁻¹)` and `μ = max μᵢⱼ`, and returns
//! `τ = ⌈ln μ / |ln λ_s| + ε⌉`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CertificateRecord, DataError, DwellTimeResult, SubsystemDataset};
use crate::linalg::{backward_substitute_transposed, cholesky, lower_triangular_inverse, sym_eig, LinalgError, Matrix};
use crate::lmi::{self, Feasibility, LmiError, LmiProblem, LyapunovCertificate, SolverOptions};
use crate::psi::{find_psi, PsiError, PsiMatrix, DEFAULT_INDEPENDENCE_TOL};

/// Number of `h → h/10` retries in refinement mode.
pub const MAX_REFINEMENTS: usize = 3;

/// `μ` values this far below one are rounding noise.
const MU_FLOOR_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DwellError {
    #[error("invalid argument: {0}")]
    Domain(String),
    #[error("subsystem {subsystem}: data matrix not well-defined: {source}")]
    AssumptionViolated { subsystem: usize, source: PsiError },
    #[error(
        "no rate on the grid with step {h} makes every LMI feasible \
         (after {refinements} refinements); infeasible at the largest rate: subsystems {infeasible_subsystems:?}"
    )]
    InfeasibleGrid { h: f64, refinements: usize, infeasible_subsystems: Vec<usize> },
    #[error("subsystem {subsystem}: certificate is not positive definite: {source}")]
    NotPositiveDefinite { subsystem: usize, source: LinalgError },
    #[error("subsystem {subsystem}: {source}")]
    Lmi { subsystem: usize, source: LmiError },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    /// Grid step for `λ_s`.
    pub h: f64,
    pub epsilon: f64,
    /// `σ_min/σ_max` threshold for `Ψ`.
    pub independence_tol: f64,
    pub solver: SolverOptions,
    /// Evaluate the whole grid and keep the smallest `τ`.
    pub optimize_tau: bool,
    /// Retry with `h/10` (up to [`MAX_REFINEMENTS`] times) when the grid is
    /// infeasible.
    pub h_refine: bool,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        AlgorithmConfig {
            h: 0.1,
            epsilon: 0.01,
            independence_tol: DEFAULT_INDEPENDENCE_TOL,
            solver: SolverOptions::default(),
            optimize_tau: false,
            h_refine: false,
        }
    }
}

/// The rates `{h, 2h, .., kh}` with `k` the largest integer such that `kh < 1`.
///
/// When `1/h` is an integer `m` the points are computed as `i/m`, so `h = 0.1`
/// yields exactly the doubles `0.1, 0.2, .., 0.9`.
pub fn rate_grid(h: f64) -> Result<Vec<f64>, DwellError> {
    if !(h > 0.0 && h < 1.0) {
        return Err(DwellError::Domain(format!("grid step h = {h} is outside ]0, 1[")));
    }
    let inv = 1.0 / h;
    let m = inv.round();
    if (inv - m).abs() <= 1e-9 * m {
        let m = m as u64;
        return Ok((1..m).map(|i| i as f64 / m as f64).collect());
    }
    let mut k = inv.floor() as u64;
    while k > 0 && k as f64 * h >= 1.0 {
        k -= 1;
    }
    Ok((1..=k).map(|i| i as f64 * h).collect())
}

fn solve_all(psis: &[PsiMatrix], lambda: f64, solver: &SolverOptions) -> Result<Vec<Feasibility>, DwellError> {
    psis.par_iter()
        .enumerate()
        .map(|(k, psi)| {
            let wrap = |source| DwellError::Lmi { subsystem: k + 1, source };
            let prob = LmiProblem::new(psi, lambda).map_err(wrap)?;
            lmi::solve_feasibility(&prob, solver).map_err(wrap)
        })
        .collect()
}

fn all_certificates(outcomes: Vec<Feasibility>) -> Option<Vec<LyapunovCertificate>> {
    outcomes
        .into_iter()
        .map(|f| match f {
            Feasibility::Feasible(c) => Some(c),
            Feasibility::Infeasible { .. } => None,
        })
        .collect()
}

fn infeasible_ids(outcomes: &[Feasibility]) -> Vec<usize> {
    outcomes.iter().enumerate().filter(|(_, f)| !f.is_feasible()).map(|(k, _)| k + 1).collect()
}

#[derive(Debug, Clone)]
pub struct LineSearch {
    pub lambda_s: f64,
    pub certificates: Vec<LyapunovCertificate>,
    /// Grid step that produced `lambda_s`.
    pub h: f64,
}

/// Smallest grid rate at which every subsystem LMI is feasible.
pub fn line_search_lambda(psis: &[PsiMatrix], cfg: &AlgorithmConfig) -> Result<LineSearch, DwellError> {
    if psis.is_empty() {
        return Err(DwellError::Domain("no subsystems".into()));
    }
    let mut h = cfg.h;
    let mut refinements = 0;
    loop {
        let grid = rate_grid(h)?;
        // Feasibility can only be gained as the rate grows, so a subsystem
        // infeasible at the top of the grid is infeasible everywhere on it.
        let top = solve_all(psis, grid[grid.len() - 1], &cfg.solver)?;
        let mut last_infeasible = infeasible_ids(&top);
        let scan = if last_infeasible.is_empty() { &grid[..] } else { &[][..] };
        for &lambda in scan {
            let outcomes = solve_all(psis, lambda, &cfg.solver)?;
            last_infeasible = infeasible_ids(&outcomes);
            if let Some(certificates) = all_certificates(outcomes) {
                return Ok(LineSearch { lambda_s: lambda, certificates, h });
            }
        }
        if cfg.h_refine && refinements < MAX_REFINEMENTS {
            refinements += 1;
            h /= 10.0;
            continue;
        }
        return Err(DwellError::InfeasibleGrid { h, refinements, infeasible_subsystems: last_infeasible });
    }
}

/// `μᵢⱼ` together with a maximizing direction `v`, i.e.
/// `vᵀPⱼv / vᵀPᵢv = μᵢⱼ`.
///
/// Computed as `λ_max(L⁻¹ Pⱼ L⁻ᵀ)` with `Pᵢ = L Lᵀ`, which is similar to
/// `Pⱼ Pᵢ⁻¹`.
pub fn mu_pairwise_with_direction(p_i: &Matrix, p_j: &Matrix) -> Result<(f64, Vec<f64>), LinalgError> {
    if p_i.rows() != p_j.rows() || !p_j.is_square() {
        return Err(LinalgError::Dimension("certificates must share one square shape".into()));
    }
    let l = cholesky(p_i)?;
    cholesky(p_j)?;
    let l_inv = lower_triangular_inverse(&l);
    let transformed = p_j.congruence(&l_inv.transpose());
    let eig = sym_eig(&transformed)?;
    let w = eig.vector(eig.values.len() - 1);
    Ok((eig.max(), backward_substitute_transposed(&l, &w)))
}

/// `μᵢⱼ = λ_max(Pⱼ Pᵢ⁻¹)`.
pub fn mu_pairwise(p_i: &Matrix, p_j: &Matrix) -> Result<f64, LinalgError> {
    Ok(mu_pairwise_with_direction(p_i, p_j)?.0)
}

/// Full `μ` matrix and its largest entry.
pub fn mu_max(certificates: &[Matrix]) -> Result<(f64, Matrix), DwellError> {
    let n = certificates.len();
    if n == 0 {
        return Err(DwellError::Domain("no certificates".into()));
    }
    for (k, p) in certificates.iter().enumerate() {
        cholesky(p).map_err(|source| DwellError::NotPositiveDefinite { subsystem: k + 1, source })?;
    }
    let mut matrix = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            matrix[(i, j)] = mu_pairwise(&certificates[i], &certificates[j])?;
        }
    }
    let mu = matrix.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((mu, matrix))
}

/// `τ = ⌈ln μ / |ln λ_s| + ε⌉`.
pub fn dwell_time(mu: f64, lambda_s: f64, epsilon: f64) -> Result<u64, DwellError> {
    if !(mu >= 1.0 - MU_FLOOR_TOL && mu.is_finite()) {
        return Err(DwellError::Domain(format!("mu = {mu} must be >= 1")));
    }
    if !(lambda_s > 0.0 && lambda_s < 1.0) {
        return Err(DwellError::Domain(format!("lambda_s = {lambda_s} is outside ]0, 1[")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(DwellError::Domain(format!("epsilon = {epsilon} must be positive")));
    }
    let ratio = mu.ln().max(0.0) / lambda_s.ln().abs();
    Ok((ratio + epsilon).ceil() as u64)
}

fn find_all_psi(dataset: &SubsystemDataset, tol: f64) -> Result<Vec<PsiMatrix>, DwellError> {
    dataset
        .subsystems()
        .iter()
        .map(|s| find_psi(&s.trace, tol).map_err(|source| DwellError::AssumptionViolated { subsystem: s.id, source }))
        .collect()
}

fn assemble(
    lambda_s: f64,
    epsilon: f64,
    certificates: &[LyapunovCertificate],
    psis: &[PsiMatrix],
) -> Result<DwellTimeResult, DwellError> {
    let ps: Vec<Matrix> = certificates.iter().map(|c| c.p.clone()).collect();
    let (mu, mu_matrix) = mu_max(&ps)?;
    let tau = dwell_time(mu, lambda_s, epsilon)?;
    let records = certificates
        .iter()
        .zip(psis)
        .enumerate()
        .map(|(k, (c, psi))| CertificateRecord {
            id: k + 1,
            p: c.p.clone(),
            margin_pd: c.margin_pd,
            margin_lmi: Some(c.margin_lmi),
            t_offset: Some(psi.t_offset),
        })
        .collect();
    Ok(DwellTimeResult::new(lambda_s, epsilon, mu, tau, mu_matrix, records)?)
}

/// Runs the whole algorithm on a dataset.
///
/// With `optimize_tau` every grid rate is evaluated and the smallest `τ` is
/// returned (ties go to the smaller rate).
pub fn compute_min_dwell(dataset: &SubsystemDataset, cfg: &AlgorithmConfig) -> Result<DwellTimeResult, DwellError> {
    if !(cfg.epsilon > 0.0) {
        return Err(DwellError::Domain(format!("epsilon = {} must be positive", cfg.epsilon)));
    }
    rate_grid(cfg.h)?;
    let psis = find_all_psi(dataset, cfg.independence_tol)?;
    if !cfg.optimize_tau {
        let search = line_search_lambda(&psis, cfg)?;
        return assemble(search.lambda_s, cfg.epsilon, &search.certificates, &psis);
    }

    let mut h = cfg.h;
    let mut refinements = 0;
    loop {
        let grid = rate_grid(h)?;
        let last_infeasible = infeasible_ids(&solve_all(&psis, grid[grid.len() - 1], &cfg.solver)?);
        let outcomes = if last_infeasible.is_empty() {
            grid.par_iter().map(|&lambda| solve_all(&psis, lambda, &cfg.solver)).collect::<Result<Vec<_>, _>>()?
        } else {
            Vec::new()
        };
        let mut best: Option<DwellTimeResult> = None;
        for (&lambda, outcome) in grid.iter().zip(outcomes) {
            if let Some(certs) = all_certificates(outcome) {
                let candidate = assemble(lambda, cfg.epsilon, &certs, &psis)?;
                if best.as_ref().is_none_or(|b| candidate.tau() < b.tau()) {
                    best = Some(candidate);
                }
            }
        }
        if let Some(best) = best {
            return Ok(best);
        }
        if cfg.h_refine && refinements < MAX_REFINEMENTS {
            refinements += 1;
            h /= 10.0;
            continue;
        }
        return Err(DwellError::InfeasibleGrid { h, refinements, infeasible_subsystems: last_infeasible });
    }
}

/// Steps III and IV alone: `μ` and `τ` from supplied matrices.
///
/// When `data` is given, each `Pᵢ` is also checked against subsystem `i`'s
/// `Ψ` at `lambda_s` and the LMI margin is recorded.
pub fn dwell_from_certificates(
    lambda_s: f64,
    certificates: &[Matrix],
    epsilon: f64,
    data: Option<(&SubsystemDataset, f64)>,
) -> Result<DwellTimeResult, DwellError> {
    let (mu, mu_matrix) = mu_max(certificates)?;
    let tau = dwell_time(mu, lambda_s, epsilon)?;
    let psis = match data {
        Some((dataset, tol)) => {
            if dataset.len() != certificates.len() {
                return Err(DwellError::Domain(format!(
                    "{} certificates but {} subsystems in the dataset",
                    certificates.len(),
                    dataset.len()
                )));
            }
            Some(find_all_psi(dataset, tol)?)
        }
        None => None,
    };
    let mut records = Vec::with_capacity(certificates.len());
    for (k, p) in certificates.iter().enumerate() {
        let margin_pd = sym_eig(p)?.min();
        let (margin_lmi, t_offset) = match &psis {
            Some(psis) => {
                let wrap = |source| DwellError::Lmi { subsystem: k + 1, source };
                let prob = LmiProblem::new(&psis[k], lambda_s).map_err(wrap)?;
                (Some(lmi::verify_certificate(&prob, p).map_err(wrap)?.1), Some(psis[k].t_offset))
            }
            None => (None, None),
        };
        records.push(CertificateRecord { id: k + 1, p: p.clone(), margin_pd, margin_lmi, t_offset });
    }
    Ok(DwellTimeResult::new(lambda_s, epsilon, mu, tau, mu_matrix, records)?)
}
