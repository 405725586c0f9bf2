//! Dense linear-algebra kernels for the small matrices this crate deals with
//! (state dimension up to about 20).
//!
//! Everything here is self-contained: a row-major [`Matrix`], a cyclic Jacobi
//! symmetric eigensolver, Cholesky and LU factorizations, and a Kronecker
//! vectorized Stein-equation solver that tests use as a model-based oracle.
//!
//! Tolerances are relative to the Frobenius norm of the input, with the norm
//! floored at [`NORM_FLOOR`] so that zero matrices behave.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest norm used when scaling a relative tolerance.
pub const NORM_FLOOR: f64 = 1e-14;

/// Maximum number of cyclic Jacobi sweeps.
pub const MAX_JACOBI_SWEEPS: usize = 100;

const JACOBI_REL_TOL: f64 = 1e-12;
const LU_PIVOT_REL_TOL: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is singular (pivot {index} magnitude {pivot:e})")]
    Singular { index: usize, pivot: f64 },
    #[error("Jacobi iteration did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
}

#[inline]
fn scaled(norm: f64) -> f64 {
    norm.max(NORM_FLOOR)
}

/// Dense real matrix stored in row-major order.
///
/// Every constructor that accepts external data rejects NaN and infinities.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Dimension(format!("{} entries cannot form a {rows}x{cols} matrix", data.len())));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { row: k / cols.max(1), col: k % cols.max(1) });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, LinalgError> {
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != ncols {
                return Err(LinalgError::Dimension(format!("row {i} has {} entries, expected {ncols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Matrix::from_row_major(rows.len(), ncols, data)
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns<C: AsRef<[f64]>>(cols: &[C]) -> Result<Self, LinalgError> {
        Ok(Matrix::from_rows(cols)?.transpose())
    }

    /// Outer product `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        let mut m = Matrix::zeros(u.len(), v.len());
        for (i, &ui) in u.iter().enumerate() {
            for (j, &vj) in v.iter().enumerate() {
                m[(i, j)] = ui * vj;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_block(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.rows, "row block out of range");
        Matrix { rows: end - start, cols: self.cols, data: self.data[start * self.cols..end * self.cols].to_vec() }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest `|m_ij - m_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows.min(self.cols) {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// True when square and the asymmetry is within `rel_tol · ‖M‖_F`.
    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.is_square() && self.max_asymmetry() <= rel_tol * scaled(self.frobenius_norm())
    }

    /// `(M + Mᵀ) / 2`.
    pub fn symmetrized(&self) -> Matrix {
        assert!(self.is_square(), "symmetrize requires a square matrix");
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matrix-vector dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `xᵀ M x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    /// `Bᵀ M B`, the congruence transform of `M` by `B`.
    pub fn congruence(&self, b: &Matrix) -> Matrix {
        &(&b.transpose() * self) * b
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = LinalgError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Matrix::from_rows(&rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.to_rows()
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matrix product dimension mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

impl Add for &Matrix {
    type Output = Matrix;

    fn add(self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &Matrix {
    type Output = Matrix;

    fn sub(self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a - b)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

fn require_square(m: &Matrix, what: &str) -> Result<(), LinalgError> {
    if m.is_square() {
        Ok(())
    } else {
        Err(LinalgError::Dimension(format!("{what} requires a square matrix, got {}x{}", m.rows, m.cols)))
    }
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors; column `k` pairs with `values[k]`.
    pub vectors: Matrix,
}

impl SymEig {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k)
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// The input is symmetrized first. Sweeps continue until every off-diagonal
/// magnitude drops below `1e-12 · ‖M‖_F`.
pub fn sym_eig(m: &Matrix) -> Result<SymEig, LinalgError> {
    require_square(m, "sym_eig")?;
    if let Some(k) = m.data.iter().position(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite { row: k / m.cols, col: k % m.cols });
    }
    let n = m.rows;
    let mut a = m.symmetrized();
    let mut v = Matrix::identity(n);
    let threshold = JACOBI_REL_TOL * scaled(a.frobenius_norm());

    let off_diagonal = |a: &Matrix| {
        let mut worst = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                worst = worst.max(a[(p, q)].abs());
            }
        }
        worst
    };

    let mut converged = false;
    for _ in 0..MAX_JACOBI_SWEEPS {
        if off_diagonal(&a) < threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        let residual = off_diagonal(&a);
        if residual >= threshold {
            return Err(LinalgError::NoConvergence { sweeps: MAX_JACOBI_SWEEPS, residual });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymEig { values, vectors })
}

pub fn lambda_min(m: &Matrix) -> Result<f64, LinalgError> {
    Ok(sym_eig(m)?.min())
}

pub fn lambda_max(m: &Matrix) -> Result<f64, LinalgError> {
    Ok(sym_eig(m)?.max())
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = M`.
///
/// Reads the lower triangle of `M`. A non-positive pivot is reported as
/// [`LinalgError::NotPositiveDefinite`], which doubles as the PD test.
pub fn cholesky(m: &Matrix) -> Result<Matrix, LinalgError> {
    require_square(m, "cholesky")?;
    let n = m.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        // NaN fails this comparison as well.
        if !(pivot > 0.0) {
            return Err(LinalgError::NotPositiveDefinite { index: j, pivot });
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

pub fn is_positive_definite(m: &Matrix) -> bool {
    cholesky(m).is_ok()
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn forward_substitute(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s = b[i] - dot(&l.row(i)[..i], &y[..i]);
        y[i] = s / l[(i, i)];
    }
    y
}

/// Solves `Lᵀ x = y` for lower-triangular `L`.
pub fn backward_substitute_transposed(l: &Matrix, y: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// `L⁻¹` for a lower-triangular factor.
pub fn lower_triangular_inverse(l: &Matrix) -> Matrix {
    let n = l.rows;
    let mut cols = Vec::with_capacity(n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        cols.push(forward_substitute(l, &e));
    }
    let mut inv = Matrix::zeros(n, n);
    for (j, c) in cols.iter().enumerate() {
        for i in 0..n {
            inv[(i, j)] = c[i];
        }
    }
    inv
}

/// `M⁻¹` from the Cholesky factor of `M`.
pub fn cholesky_inverse(l: &Matrix) -> Matrix {
    let linv = lower_triangular_inverse(l);
    (&linv.transpose() * &linv).symmetrized()
}

/// `ln det M` from the Cholesky factor of `M`.
pub fn cholesky_log_det(l: &Matrix) -> f64 {
    (0..l.rows).map(|i| 2.0 * l[(i, i)].ln()).sum()
}

/// Solves `A x = b` by LU factorization with partial pivoting.
pub fn lu_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    require_square(a, "lu_solve")?;
    let n = a.rows;
    if b.len() != n {
        return Err(LinalgError::Dimension(format!("right-hand side has length {}, expected {n}", b.len())));
    }
    let tol = LU_PIVOT_REL_TOL * scaled(a.frobenius_norm());
    let mut lu = a.clone();
    let mut x = b.to_vec();
    for k in 0..n {
        let (piv, mag) =
            (k..n).map(|i| (i, lu[(i, k)].abs())).fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if !(mag >= tol) {
            return Err(LinalgError::Singular { index: k, pivot: mag });
        }
        if piv != k {
            for j in 0..n {
                lu.data.swap(k * n + j, piv * n + j);
            }
            x.swap(k, piv);
        }
        let pivot = lu[(k, k)];
        for i in (k + 1)..n {
            let factor = lu[(i, k)] / pivot;
            if factor == 0.0 {
                continue;
            }
            lu[(i, k)] = 0.0;
            for j in (k + 1)..n {
                lu.data[i * n + j] -= factor * lu.data[k * n + j];
            }
            x[i] -= factor * x[k];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= lu[(i, j)] * x[j];
        }
        x[i] = s / lu[(i, i)];
    }
    Ok(x)
}

/// Extreme singular values `(σ_min, σ_max)` of a tall matrix, taken as square
/// roots of the extreme eigenvalues of `MᵀM`.
pub fn min_max_singular(m: &Matrix) -> Result<(f64, f64), LinalgError> {
    if m.rows < m.cols {
        return Err(LinalgError::Dimension(format!(
            "min_max_singular requires rows >= cols, got {}x{}",
            m.rows, m.cols
        )));
    }
    if m.cols == 0 {
        return Ok((0.0, 0.0));
    }
    let gram = &m.transpose() * m;
    let eig = sym_eig(&gram)?;
    Ok((eig.min().max(0.0).sqrt(), eig.max().max(0.0).sqrt()))
}

/// Outcome of the model-based Stein test.
#[derive(Debug, Clone)]
pub struct SteinVerdict {
    pub feasible: bool,
    /// Solution of `AᵀPA − λP = −λI` when one exists and is positive definite.
    pub p: Option<Matrix>,
}

/// Model-based decay test: is there `P ≻ 0` with `AᵀPA − λP ≺ 0`?
///
/// Solves `(A/√λ)ᵀ P (A/√λ) − P = −I` as a `d² × d²` linear system and accepts
/// iff the solution is positive definite. A singular system means `λ` sits on
/// the spectral boundary and is reported as infeasible.
pub fn stein_feasibility_oracle(a: &Matrix, lambda: f64) -> Result<SteinVerdict, LinalgError> {
    require_square(a, "stein_feasibility_oracle")?;
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(LinalgError::Dimension(format!("rate {lambda} outside ]0, 1]")));
    }
    let d = a.rows;
    let b = a.scale(1.0 / lambda.sqrt());
    // Column-major vec: vec(BᵀPB)_(i,j) = Σ_kl B_ki B_lj P_kl.
    let n = d * d;
    let mut k_mat = Matrix::zeros(n, n);
    for j in 0..d {
        for i in 0..d {
            let row = j * d + i;
            for l in 0..d {
                for k in 0..d {
                    k_mat[(row, l * d + k)] = b[(k, i)] * b[(l, j)];
                }
            }
            k_mat[(row, row)] -= 1.0;
        }
    }
    let mut rhs = vec![0.0; n];
    for i in 0..d {
        rhs[i * d + i] = -1.0;
    }
    let sol = match lu_solve(&k_mat, &rhs) {
        Ok(x) => x,
        Err(LinalgError::Singular { .. }) => return Ok(SteinVerdict { feasible: false, p: None }),
        Err(e) => return Err(e),
    };
    let mut p = Matrix::zeros(d, d);
    for j in 0..d {
        for i in 0..d {
            p[(i, j)] = sol[j * d + i];
        }
    }
    let p = p.symmetrized();
    if !p.is_finite() || !is_positive_definite(&p) {
        return Ok(SteinVerdict { feasible: false, p: None });
    }
    Ok(SteinVerdict { feasible: true, p: Some(p) })
}
