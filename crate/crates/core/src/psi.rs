//! Stacked data vectors `q(T)` and the `(d+1) × d` data matrix `Ψ`.
//!
//! For a trace `x(0), .., x(L)` of dimension `d`,
//! `q(T) = (x⁽¹⁾(T+1), x⁽¹⁾(T), .., x⁽ᵈ⁾(T))` and
//! `Ψ = [q(T) q(T+1) .. q(T+d-1)]`. A usable `Ψ` needs linearly independent
//! columns; independence is decided by the singular-value ratio.

use thiserror::Error;

use crate::data::Trace;
use crate::linalg::{min_max_singular, LinalgError, Matrix};

/// Default `σ_min / σ_max` threshold for column independence.
pub const DEFAULT_INDEPENDENCE_TOL: f64 = 1e-8;

/// Singular values below this are treated as an all-zero `Ψ`.
const UNDERFLOW_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PsiError {
    #[error("time index {t} out of range (largest usable index is {max})")]
    IndexOutOfRange { t: usize, max: i64 },
    #[error(
        "no offset T in 0..={last_offset} gives linearly independent columns \
         (best sigma ratio {best_ratio:e} at T = {best_offset})"
    )]
    AssumptionViolated { best_ratio: f64, best_offset: usize, last_offset: usize },
    #[error("independence tolerance {0} is outside ]0, 1[")]
    Tolerance(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// `Ψ` together with the offset it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiMatrix {
    pub psi: Matrix,
    pub t_offset: usize,
    /// `σ_min / σ_max` of `psi`.
    pub sigma_ratio: f64,
}

impl PsiMatrix {
    pub fn dimension(&self) -> usize {
        self.psi.cols()
    }

    /// Rows `1..=d`: the successor states `A x(t)` for companion data.
    pub fn successors(&self) -> Matrix {
        self.psi.row_block(0, self.dimension())
    }

    /// Rows `2..=d+1`: the states `x(t)`.
    pub fn states(&self) -> Matrix {
        self.psi.row_block(1, self.dimension() + 1)
    }
}

/// `q(t)` for `0 ≤ t ≤ L − 1`.
pub fn build_q(trace: &Trace, t: usize) -> Result<Vec<f64>, PsiError> {
    if t >= trace.last_index() {
        return Err(PsiError::IndexOutOfRange { t, max: trace.last_index() as i64 - 1 });
    }
    let mut q = Vec::with_capacity(trace.dimension() + 1);
    q.push(trace.state(t + 1)[0]);
    q.extend_from_slice(trace.state(t));
    Ok(q)
}

/// `Ψ` with columns `q(t), .., q(t + d − 1)`.
pub fn build_psi(trace: &Trace, t: usize) -> Result<Matrix, PsiError> {
    let d = trace.dimension();
    let last = trace.last_index() as i64 - d as i64;
    if t as i64 > last {
        return Err(PsiError::IndexOutOfRange { t, max: last });
    }
    let cols = (t..t + d).map(|c| build_q(trace, c)).collect::<Result<Vec<_>, _>>()?;
    Ok(Matrix::from_columns(&cols)?)
}

fn sigma_ratio(psi: &Matrix) -> Result<f64, LinalgError> {
    let (lo, hi) = min_max_singular(psi)?;
    Ok(if hi < UNDERFLOW_FLOOR { 0.0 } else { lo / hi })
}

/// Scans `T = 0, 1, .., L − d` and returns `Ψ` at the first offset whose
/// singular-value ratio exceeds `tol`.
pub fn find_psi(trace: &Trace, tol: f64) -> Result<PsiMatrix, PsiError> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(PsiError::Tolerance(tol));
    }
    let last_offset = trace.last_index() - trace.dimension();
    let mut best = (f64::NEG_INFINITY, 0);
    for t in 0..=last_offset {
        let psi = build_psi(trace, t)?;
        let ratio = sigma_ratio(&psi)?;
        if ratio > tol {
            return Ok(PsiMatrix { psi, t_offset: t, sigma_ratio: ratio });
        }
        if ratio > best.0 {
            best = (ratio, t);
        }
    }
    Err(PsiError::AssumptionViolated { best_ratio: best.0, best_offset: best.1, last_offset })
}
