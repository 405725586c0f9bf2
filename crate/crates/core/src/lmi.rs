//! The data-based Lyapunov LMI and its feasibility problem.
//!
//! With `X₊` the first `d` rows of `Ψ` and `X` the last `d` rows, the decay
//! condition at rate `λ` holds for `V(ξ) = ξᵀPξ` iff `P ≻ 0` and
//!
//! ```text
//! F(P) = λ XᵀPX − X₊ᵀPX₊ ≻ 0.
//! ```
//!
//! Feasibility is decided by maximizing the margin
//! `m(P) = min(λ_min(P), λ_min(F(P)) / s)` over symmetric `P` with
//! `trace(P) = d`, where `s = max(1, σ_max(Ψ)²)` balances the two branches.
//! The problem is feasible iff the maximum exceeds a strictness threshold.
//! Two maximizers are provided: a log-det barrier path-following method
//! (default) and projected subgradient ascent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    backward_substitute_transposed, cholesky, cholesky_inverse, cholesky_log_det, forward_substitute, min_max_singular,
    sym_eig, LinalgError, Matrix,
};
use crate::psi::PsiMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmiError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0}")]
    Domain(String),
    #[error("non-finite arithmetic in the feasibility solver: {0}")]
    Numerical(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// The LMI at a fixed rate, split into its selector blocks.
#[derive(Debug, Clone)]
pub struct LmiProblem {
    psi: Matrix,
    lambda: f64,
    x_plus: Matrix,
    x: Matrix,
    branch_scale: f64,
}

impl LmiProblem {
    pub fn new(psi: &PsiMatrix, lambda: f64) -> Result<Self, LmiError> {
        Self::from_psi(psi.psi.clone(), lambda)
    }

    /// Builds the problem from a raw `(d+1) × d` matrix.
    pub fn from_psi(psi: Matrix, lambda: f64) -> Result<Self, LmiError> {
        let d = psi.cols();
        if d == 0 || psi.rows() != d + 1 {
            return Err(LmiError::Dimension(format!("psi must be (d+1)x d, got {}x{}", psi.rows(), psi.cols())));
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(LmiError::Domain(format!("rate {lambda} is outside ]0, 1]")));
        }
        let (upper, lower) = selector_blocks(d);
        let x_plus = &upper * &psi;
        let x = &lower * &psi;
        let sigma_max = min_max_singular(&psi)?.1;
        Ok(LmiProblem { branch_scale: (sigma_max * sigma_max).max(1.0), psi, lambda, x_plus, x })
    }

    pub fn dimension(&self) -> usize {
        self.x.cols()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn psi(&self) -> &Matrix {
        &self.psi
    }

    /// First `d` rows of `Ψ`.
    pub fn x_plus(&self) -> &Matrix {
        &self.x_plus
    }

    /// Last `d` rows of `Ψ`.
    pub fn x(&self) -> &Matrix {
        &self.x
    }

    /// `s = max(1, σ_max(Ψ)²)`.
    pub fn branch_scale(&self) -> f64 {
        self.branch_scale
    }

    fn check_square(&self, p: &Matrix) -> Result<(), LmiError> {
        let d = self.dimension();
        if p.rows() != d || p.cols() != d {
            return Err(LmiError::Dimension(format!("P must be {d}x{d}, got {}x{}", p.rows(), p.cols())));
        }
        Ok(())
    }

    fn residual(&self, p: &Matrix) -> Matrix {
        let decay = p.congruence(&self.x).scale(self.lambda);
        (&decay - &p.congruence(&self.x_plus)).symmetrized()
    }
}

/// The selector blocks `[I_d | 0]` and `[0 | I_d]`, each `d × (d+1)`.
pub fn selector_blocks(d: usize) -> (Matrix, Matrix) {
    let mut upper = Matrix::zeros(d, d + 1);
    let mut lower = Matrix::zeros(d, d + 1);
    for i in 0..d {
        upper[(i, i)] = 1.0;
        lower[(i, i + 1)] = 1.0;
    }
    (upper, lower)
}

/// `F(P) = λ XᵀPX − X₊ᵀPX₊`; the LMI holds strictly iff `F(P) ≻ 0`.
pub fn lmi_value(prob: &LmiProblem, p: &Matrix) -> Result<Matrix, LmiError> {
    prob.check_square(p)?;
    Ok(prob.residual(p))
}

/// `(λ_min(P), λ_min(F(P)))`, computed directly by the eigensolver.
pub fn verify_certificate(prob: &LmiProblem, p: &Matrix) -> Result<(f64, f64), LmiError> {
    prob.check_square(p)?;
    if !p.is_finite() {
        return Err(LmiError::Numerical("certificate has non-finite entries".into()));
    }
    let margin_pd = sym_eig(&p.symmetrized())?.min();
    let margin_lmi = sym_eig(&prob.residual(p))?.min();
    Ok((margin_pd, margin_lmi))
}

/// `m(P) = min(λ_min(P), λ_min(F(P)) / s)`.
pub fn margin(prob: &LmiProblem, p: &Matrix) -> Result<f64, LmiError> {
    let (pd, lmi) = verify_certificate(prob, p)?;
    Ok(pd.min(lmi / prob.branch_scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    /// Log-det barrier path following on the margin epigraph.
    Barrier,
    /// Projected subgradient ascent with `c₀/√k` steps.
    Subgradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub method: SolverMethod,
    /// Newton steps for the barrier method, ascent steps for subgradient.
    pub max_iterations: usize,
    /// Strictness threshold on the margin.
    pub feas_tol: f64,
    /// Subgradient step constant `c₀`.
    pub step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { method: SolverMethod::Barrier, max_iterations: 20_000, feas_tol: 1e-8, step: 1.0 }
    }
}

/// A verified Lyapunov matrix for one subsystem at rate `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCertificate {
    pub p: Matrix,
    pub lambda: f64,
    /// `λ_min(P)`.
    pub margin_pd: f64,
    /// `λ_min(F(P))`.
    pub margin_lmi: f64,
    pub iterations_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible(LyapunovCertificate),
    Infeasible { best_margin: f64, iterations_used: usize },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible(_))
    }

    pub fn certificate(&self) -> Option<&LyapunovCertificate> {
        match self {
            Feasibility::Feasible(c) => Some(c),
            Feasibility::Infeasible { .. } => None,
        }
    }
}

/// Decides strict feasibility of the LMI and returns a certificate normalized
/// to `trace(P) = d`. The verdict and the reported margins are recomputed from
/// the returned `P`, independent of the solver's internal state.
pub fn solve_feasibility(prob: &LmiProblem, opts: &SolverOptions) -> Result<Feasibility, LmiError> {
    if !(opts.feas_tol > 0.0) || opts.max_iterations == 0 {
        return Err(LmiError::Domain("feas_tol must be positive and max_iterations nonzero".into()));
    }
    let (p, iterations_used) = match opts.method {
        SolverMethod::Barrier => barrier::maximize_margin(prob, opts)?,
        SolverMethod::Subgradient => maximize_margin_subgradient(prob, opts)?,
    };
    let (margin_pd, margin_lmi) = verify_certificate(prob, &p)?;
    let best_margin = margin_pd.min(margin_lmi / prob.branch_scale);
    if !best_margin.is_finite() {
        return Err(LmiError::Numerical("margin is not finite".into()));
    }
    if best_margin > opts.feas_tol {
        Ok(Feasibility::Feasible(LyapunovCertificate {
            p,
            lambda: prob.lambda,
            margin_pd,
            margin_lmi,
            iterations_used,
        }))
    } else {
        Ok(Feasibility::Infeasible { best_margin, iterations_used })
    }
}

fn project_trace(p: &mut Matrix, d: usize) {
    let shift = (p.trace() - d as f64) / d as f64;
    for i in 0..d {
        p[(i, i)] -= shift;
    }
}

fn maximize_margin_subgradient(prob: &LmiProblem, opts: &SolverOptions) -> Result<(Matrix, usize), LmiError> {
    let d = prob.dimension();
    let s = prob.branch_scale;
    let mut p = Matrix::identity(d);
    let mut best = (f64::NEG_INFINITY, p.clone());
    for k in 1..=opts.max_iterations {
        let pd = sym_eig(&p)?;
        let lmi = sym_eig(&prob.residual(&p))?;
        let (m_pd, m_lmi) = (pd.min(), lmi.min() / s);
        let m = m_pd.min(m_lmi);
        if !m.is_finite() {
            return Err(LmiError::Numerical(format!("margin became {m} at iteration {k}")));
        }
        if m > best.0 {
            best = (m, p.clone());
        }
        let direction = if m_pd <= m_lmi {
            let v = pd.vector(0);
            Matrix::outer(&v, &v)
        } else {
            let v = lmi.vector(0);
            let xv = prob.x.mul_vec(&v);
            let xpv = prob.x_plus.mul_vec(&v);
            (&Matrix::outer(&xv, &xv).scale(prob.lambda) - &Matrix::outer(&xpv, &xpv)).scale(1.0 / s)
        };
        let step = opts.step / (k as f64).sqrt();
        p = (&p + &direction.scale(step)).symmetrized();
        project_trace(&mut p, d);
    }
    Ok((best.1, opts.max_iterations))
}

mod barrier {
    //! Path following for `max t` subject to `P − tI ≻ 0`, `F(P)/s − tI ≻ 0`,
    //! with `P = I + Σ yₖ Eₖ` over a basis of trace-free symmetric matrices.

    use super::*;

    const GROWTH: f64 = 8.0;
    const CENTERING_TOL: f64 = 1e-10;
    const OPTIMALITY_GAP: f64 = 1e-6;
    const MIN_GAP: f64 = 1e-13;
    const MAX_HALVINGS: usize = 60;
    const MAX_CENTERING_STEPS: usize = 100;

    fn trace_free_basis(d: usize) -> Vec<Matrix> {
        let mut basis = Vec::with_capacity(d * (d + 1) / 2 - 1);
        for i in 0..d.saturating_sub(1) {
            let mut e = Matrix::zeros(d, d);
            e[(i, i)] = 1.0;
            e[(d - 1, d - 1)] = -1.0;
            basis.push(e);
        }
        for i in 0..d {
            for j in (i + 1)..d {
                let mut e = Matrix::zeros(d, d);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
                basis.push(e);
            }
        }
        basis
    }

    struct Setup {
        d: usize,
        basis: Vec<Matrix>,
        lmi_basis: Vec<Matrix>,
        lmi_offset: Matrix,
    }

    impl Setup {
        fn new(prob: &LmiProblem) -> Self {
            let d = prob.dimension();
            let inv_s = 1.0 / prob.branch_scale;
            let basis = trace_free_basis(d);
            let lmi_basis = basis.iter().map(|e| prob.residual(e).scale(inv_s)).collect();
            let lmi_offset = prob.residual(&Matrix::identity(d)).scale(inv_s);
            Setup { d, basis, lmi_basis, lmi_offset }
        }

        fn p(&self, z: &[f64]) -> Matrix {
            let mut p = Matrix::identity(self.d);
            for (e, &y) in self.basis.iter().zip(z) {
                add_scaled(&mut p, e, y);
            }
            p
        }

        fn slacks(&self, z: &[f64]) -> (Matrix, Matrix) {
            let t = z[z.len() - 1];
            let mut s1 = self.p(z);
            let mut s2 = self.lmi_offset.clone();
            for (g, &y) in self.lmi_basis.iter().zip(z) {
                add_scaled(&mut s2, g, y);
            }
            for i in 0..self.d {
                s1[(i, i)] -= t;
                s2[(i, i)] -= t;
            }
            (s1, s2)
        }

        /// Barrier objective, or `None` outside the domain.
        fn objective(&self, z: &[f64], weight: f64) -> Option<f64> {
            let (s1, s2) = self.slacks(z);
            let l1 = cholesky(&s1).ok()?;
            let l2 = cholesky(&s2).ok()?;
            Some(-weight * z[z.len() - 1] - cholesky_log_det(&l1) - cholesky_log_det(&l2))
        }
    }

    fn add_scaled(acc: &mut Matrix, m: &Matrix, s: f64) {
        if s == 0.0 {
            return;
        }
        let d = acc.rows();
        for i in 0..d {
            for j in 0..d {
                acc[(i, j)] += s * m[(i, j)];
            }
        }
    }

    /// Adds the gradient and Hessian of `−ln det S` to `grad`, `hess`.
    fn accumulate_block(
        s: &Matrix,
        directions: &[Matrix],
        grad: &mut [f64],
        hess: &mut Matrix,
    ) -> Result<(), LmiError> {
        let d = s.rows();
        let inv = cholesky_inverse(&cholesky(s)?);
        let mut products: Vec<Matrix> = directions.iter().map(|a| &inv * a).collect();
        // The epigraph variable enters as −I.
        products.push(inv.scale(-1.0));
        let n = products.len();
        for k in 0..n {
            grad[k] -= products[k].trace();
            for l in k..n {
                let mut acc = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        acc += products[k][(i, j)] * products[l][(j, i)];
                    }
                }
                hess[(k, l)] += acc;
                if l != k {
                    hess[(l, k)] += acc;
                }
            }
        }
        Ok(())
    }

    pub(super) fn maximize_margin(prob: &LmiProblem, opts: &SolverOptions) -> Result<(Matrix, usize), LmiError> {
        let setup = Setup::new(prob);
        let d = setup.d;
        let n = setup.basis.len() + 1;
        let mut z = vec![0.0; n];
        let start_lmi = sym_eig(&setup.lmi_offset)?.min();
        z[n - 1] = start_lmi.min(1.0) - 1.0;

        let barrier_dim = 2.0 * d as f64;
        let mut weight = 1.0;
        let mut steps = 0;
        'outer: loop {
            for _ in 0..MAX_CENTERING_STEPS {
                if steps >= opts.max_iterations {
                    break 'outer;
                }
                let (s1, s2) = setup.slacks(&z);
                let mut grad = vec![0.0; n];
                grad[n - 1] = -weight;
                let mut hess = Matrix::zeros(n, n);
                accumulate_block(&s1, &setup.basis, &mut grad, &mut hess)?;
                accumulate_block(&s2, &setup.lmi_basis, &mut grad, &mut hess)?;
                let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
                // The Hessian is positive definite; losing that means the
                // weight has outgrown double precision, so keep the iterate.
                let Ok(l) = cholesky(&hess) else { break 'outer };
                let dz = backward_substitute_transposed(&l, &forward_substitute(&l, &neg_grad));
                steps += 1;
                let decrement: f64 = -grad.iter().zip(&dz).map(|(g, s)| g * s).sum::<f64>();
                if !decrement.is_finite() {
                    return Err(LmiError::Numerical("Newton decrement is not finite".into()));
                }
                if decrement / 2.0 < CENTERING_TOL {
                    break;
                }
                let f0 = setup
                    .objective(&z, weight)
                    .ok_or_else(|| LmiError::Numerical("iterate left the barrier domain".into()))?;
                let mut alpha = 1.0;
                let mut accepted = None;
                for _ in 0..MAX_HALVINGS {
                    let trial: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a + alpha * b).collect();
                    if let Some(f) = setup.objective(&trial, weight) {
                        // Strict decrease: at tiny steps the Armijo bound rounds to f0.
                        if f < f0 && f <= f0 - 0.25 * alpha * decrement {
                            accepted = Some(trial);
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                match accepted {
                    Some(next) => z = next,
                    // No progress possible at this weight; treat as centered.
                    None => break,
                }
            }
            let t = z[n - 1];
            let gap = barrier_dim / weight;
            if (t > opts.feas_tol && gap <= OPTIMALITY_GAP * t) || t + gap < opts.feas_tol || gap < MIN_GAP {
                break;
            }
            weight *= GROWTH;
        }
        Ok((setup.p(&z), steps))
    }
}
