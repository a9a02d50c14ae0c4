//! Dense column-major linear algebra: Cholesky factorization, triangular
//! solves and log-determinants.
//!
//! Covariance matrices are only ever touched through [`chol`] and the
//! triangular solvers; quadratic forms are evaluated as `uᵀu` with
//! `u = L⁻¹x` obtained by forward substitution.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::parallel;

/// Relative tolerance for the symmetry check performed before factorization.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Block size of the right-looking Cholesky.
const BLOCK: usize = 64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (failing pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("singular triangular matrix (zero diagonal at {index})")]
    SingularTriangular { index: usize },
    #[error("non-positive diagonal entry at {index}")]
    NonPositiveDiagonal { index: usize },
    #[error("matrix has a non-zero strictly upper entry at ({row}, {col})")]
    NotLowerTriangular { row: usize, col: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// Dense real matrix stored column-major.
#[derive(Clone, PartialEq, Default)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|j| format!("{:.6}", self[(i, j)])).collect();
            writeln!(f, "  {}", row.join(", "))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from row slices. Panics on ragged input; intended for literals.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut m = Self::zeros(nrows, ncols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            assert_eq!(r.len(), ncols, "ragged rows");
            for (j, &v) in r.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Column vector.
    pub fn column(v: &[f64]) -> Self {
        Self { rows: v.len(), cols: 1, data: v.to_vec() }
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

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        let r = self.rows;
        &mut self.data[j * r..(j + 1) * r]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self[(i, j)]).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Reshape in place, reusing the allocation. Contents are zeroed.
    pub fn resize_zeroed(&mut self, rows: usize, cols: usize) {
        self.rows = rows;
        self.cols = cols;
        self.data.clear();
        self.data.resize(rows * cols, 0.0);
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip(other, |a, b| a - b)
    }

    fn zip(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix, LinalgError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<(), LinalgError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{}x{} += {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn add_to_diagonal(&mut self, v: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += v;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest `|m_ij - m_ji|` relative to the largest entry.
    pub fn relative_asymmetry(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for j in 0..self.cols {
            for i in (j + 1)..self.rows {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }

    /// Replace the matrix by `(M + Mᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        let n = self.rows;
        for j in 0..n {
            for i in (j + 1)..n {
                let v = 0.5 * (self.data[j * n + i] + self.data[i * n + j]);
                self.data[j * n + i] = v;
                self.data[i * n + j] = v;
            }
        }
    }

    /// Copy the lower triangle onto the upper one.
    pub fn mirror_lower(&mut self) {
        let n = self.rows;
        for j in 0..n {
            for i in (j + 1)..n {
                self.data[i * n + j] = self.data[j * n + i];
            }
        }
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "{}x{} · {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, k) = (self.rows, self.cols);
        let mut out = Matrix::zeros(m, other.cols);
        parallel::for_each_chunk_mut(&mut out.data, m.max(1), m * k * other.cols, |j, c| {
            for t in 0..k {
                let b = other.data[j * k + t];
                if b != 0.0 {
                    axpy(b, &self.data[t * m..(t + 1) * m], c);
                }
            }
        });
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.rows != other.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "({}x{})ᵀ · {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let p = self.cols;
        let mut out = Matrix::zeros(p, other.cols);
        parallel::for_each_chunk_mut(&mut out.data, p.max(1), p * self.rows * other.cols, |j, c| {
            let b = other.col(j);
            for (i, ci) in c.iter_mut().enumerate() {
                *ci = dot(self.col(i), b);
            }
        });
        Ok(out)
    }

    /// `selfᵀ · self`, exactly symmetric.
    pub fn gram(&self) -> Matrix {
        let p = self.cols;
        let mut out = Matrix::zeros(p, p);
        parallel::for_each_chunk_mut(&mut out.data, p.max(1), p * p * self.rows / 2, |j, c| {
            let b = self.col(j);
            for i in j..p {
                c[i] = dot(self.col(i), b);
            }
        });
        out.mirror_lower();
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if self.cols != x.len() {
            return Err(LinalgError::DimensionMismatch(format!(
                "{}x{} · vector of {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                axpy(xj, self.col(j), &mut out);
            }
        }
        Ok(out)
    }

    pub fn t_matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if self.rows != x.len() {
            return Err(LinalgError::DimensionMismatch(format!(
                "({}x{})ᵀ · vector of {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.cols).map(|j| dot(self.col(j), x)).collect())
    }

    /// Horizontal concatenation `[self : other]`.
    pub fn hcat(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.rows != other.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "[{}x{} : {}x{}]",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix { rows: self.rows, cols: self.cols + other.cols, data })
    }

    /// Columns `range` as a new matrix.
    pub fn columns(&self, range: std::ops::Range<usize>) -> Matrix {
        let data = self.data[range.start * self.rows..range.end * self.rows].to_vec();
        Matrix { rows: self.rows, cols: range.len(), data }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[j * self.rows + i]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[j * self.rows + i]
    }
}

/// Square matrix whose strictly-upper triangle is exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerTriangular(Matrix);

impl LowerTriangular {
    pub fn new(m: Matrix) -> Result<Self, LinalgError> {
        if !m.is_square() {
            return Err(LinalgError::NotSquare { rows: m.rows, cols: m.cols });
        }
        for j in 0..m.cols {
            for i in 0..j {
                if m[(i, j)] != 0.0 {
                    return Err(LinalgError::NotLowerTriangular { row: i, col: j });
                }
            }
        }
        Ok(Self(m))
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    pub fn order(&self) -> usize {
        self.0.rows
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.0.diagonal()
    }

    /// `L · Lᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let t = self.0.transpose();
        let mut out = t.t_matmul(&t).expect("square");
        out.symmetrize();
        out
    }

    /// `L · x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.order();
        let mut out = vec![0.0; n];
        for (j, &xj) in x.iter().enumerate().take(n) {
            if xj != 0.0 {
                axpy(xj, &self.0.col(j)[j..], &mut out[j..]);
            }
        }
        out
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

/// `y += alpha · x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Cholesky factor `L` with `L·Lᵀ = M`.
///
/// `M` must be symmetric to [`SYMMETRY_TOL`] relative; it is symmetrized
/// before factoring.
pub fn chol(m: &Matrix) -> Result<LowerTriangular, LinalgError> {
    chol_owned(m.clone())
}

/// [`chol`] consuming its argument, reusing the allocation for the factor.
pub fn chol_owned(mut m: Matrix) -> Result<LowerTriangular, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::NotSquare { rows: m.rows, cols: m.cols });
    }
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let asymmetry = m.relative_asymmetry();
    if asymmetry > SYMMETRY_TOL {
        return Err(LinalgError::NotSymmetric { asymmetry });
    }
    m.symmetrize();
    let n = m.rows;
    factor_lower_in_place(&mut m.data, n)?;
    for j in 1..n {
        m.data[j * n..j * n + j].iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(LowerTriangular(m))
}

/// Blocked right-looking factorization of the lower triangle of `a` (n×n,
/// column-major). The trailing update is parallel over columns.
fn factor_lower_in_place(a: &mut [f64], n: usize) -> Result<(), LinalgError> {
    let mut panel: Vec<f64> = Vec::new();
    let mut diag: Vec<f64> = Vec::new();
    let mut k0 = 0;
    while k0 < n {
        let kb = BLOCK.min(n - k0);
        for j in 0..kb {
            let jj = k0 + j;
            let mut d = a[jj * n + jj];
            for t in 0..j {
                let l = a[(k0 + t) * n + jj];
                d -= l * l;
            }
            if !(d > 0.0 && d.is_finite()) {
                return Err(LinalgError::NotPositiveDefinite { pivot: jj });
            }
            let ljj = d.sqrt();
            a[jj * n + jj] = ljj;
            for i in (j + 1)..kb {
                let ii = k0 + i;
                let mut s = a[jj * n + ii];
                for t in 0..j {
                    s -= a[(k0 + t) * n + ii] * a[(k0 + t) * n + jj];
                }
                a[jj * n + ii] = s / ljj;
            }
        }
        let off = k0 + kb;
        let m = n - off;
        if m == 0 {
            break;
        }

        // Row-major copies of the diagonal block and the panel below it.
        diag.clear();
        diag.resize(kb * kb, 0.0);
        for j in 0..kb {
            for i in j..kb {
                diag[i * kb + j] = a[(k0 + j) * n + k0 + i];
            }
        }
        panel.clear();
        panel.resize(m * kb, 0.0);
        for t in 0..kb {
            let col = &a[(k0 + t) * n + off..(k0 + t) * n + n];
            for (i, &v) in col.iter().enumerate() {
                panel[i * kb + t] = v;
            }
        }
        {
            let diag = &diag;
            parallel::for_each_chunk_mut(&mut panel, kb, m * kb * kb, |_, row| {
                for j in 0..kb {
                    let s = row[j] - dot(&row[..j], &diag[j * kb..j * kb + j]);
                    row[j] = s / diag[j * kb + j];
                }
            });
        }
        for t in 0..kb {
            let col = &mut a[(k0 + t) * n + off..(k0 + t) * n + n];
            for (i, v) in col.iter_mut().enumerate() {
                *v = panel[i * kb + t];
            }
        }
        {
            let panel = &panel;
            let trailing = &mut a[off * n..];
            parallel::for_each_chunk_mut(trailing, n, m * m * kb, |ci, col| {
                let pc = &panel[ci * kb..(ci + 1) * kb];
                for i in ci..m {
                    col[off + i] -= dot(&panel[i * kb..(i + 1) * kb], pc);
                }
            });
        }
        k0 += kb;
    }
    Ok(())
}

fn check_solve_dims(l: &LowerTriangular, b: &Matrix) -> Result<(), LinalgError> {
    if l.order() != b.rows {
        return Err(LinalgError::DimensionMismatch(format!(
            "triangular order {} vs right-hand side with {} rows",
            l.order(),
            b.rows
        )));
    }
    for (i, d) in l.diagonal().into_iter().enumerate() {
        if d == 0.0 {
            return Err(LinalgError::SingularTriangular { index: i });
        }
    }
    Ok(())
}

/// Solve `L · X = B` by forward substitution.
pub fn trsolve(l: &LowerTriangular, b: &Matrix) -> Result<Matrix, LinalgError> {
    check_solve_dims(l, b)?;
    let n = l.order();
    let mut x = b.clone();
    if n == 0 {
        return Ok(x);
    }
    let lm = &l.0.data;
    // Four right-hand sides per task share each pass over a column of L.
    parallel::for_each_chunk_mut(&mut x.data, 4 * n, n * n * b.cols, |_, block| {
        let k = block.len() / n;
        for j in 0..n {
            let lcol = &lm[j * n..(j + 1) * n];
            let inv = 1.0 / lcol[j];
            for c in 0..k {
                let xc = &mut block[c * n..(c + 1) * n];
                let xj = xc[j] * inv;
                xc[j] = xj;
                if xj != 0.0 {
                    axpy(-xj, &lcol[j + 1..], &mut xc[j + 1..]);
                }
            }
        }
    });
    Ok(x)
}

/// Solve `Lᵀ · X = B` by back substitution.
pub fn trsolve_t(l: &LowerTriangular, b: &Matrix) -> Result<Matrix, LinalgError> {
    check_solve_dims(l, b)?;
    let n = l.order();
    let mut x = b.clone();
    if n == 0 {
        return Ok(x);
    }
    let lm = &l.0.data;
    parallel::for_each_chunk_mut(&mut x.data, n, n * n * b.cols, |_, xc| {
        for j in (0..n).rev() {
            let lcol = &lm[j * n..(j + 1) * n];
            let s = xc[j] - dot(&lcol[j + 1..], &xc[j + 1..]);
            xc[j] = s / lcol[j];
        }
    });
    Ok(x)
}

pub fn trsolve_vec(l: &LowerTriangular, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    Ok(trsolve(l, &Matrix::column(b))?.into_vec())
}

pub fn trsolve_t_vec(l: &LowerTriangular, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    Ok(trsolve_t(l, &Matrix::column(b))?.into_vec())
}

/// Solve `L·Lᵀ·X = B`.
pub fn chol_solve(l: &LowerTriangular, b: &Matrix) -> Result<Matrix, LinalgError> {
    trsolve_t(l, &trsolve(l, b)?)
}

/// `log det(L·Lᵀ) = 2 Σ log l_ii`.
pub fn log_det_from_chol(l: &LowerTriangular) -> Result<f64, LinalgError> {
    Ok(2.0 * sum_log_diag(l)?)
}

/// `Σ log l_ii`, the half log-determinant used by the marginal targets.
pub fn sum_log_diag(l: &LowerTriangular) -> Result<f64, LinalgError> {
    let mut s = 0.0;
    for (i, d) in l.diagonal().into_iter().enumerate() {
        if !(d > 0.0) {
            return Err(LinalgError::NonPositiveDiagonal { index: i });
        }
        s += d.ln();
    }
    Ok(s)
}
