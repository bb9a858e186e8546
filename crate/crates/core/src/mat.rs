//! Dense real-matrix kernel.
//!
//! Everything downstream (multiplier factorizations, LMI assembly, gain
//! extraction, simulation) runs on the small dense matrices implemented
//! here. Matrices in this problem class stay below a few tens of rows, so
//! the kernel favours robustness over speed: symmetric eigendecomposition
//! uses cyclic Jacobi rotations, and the pseudoinverse uses a one-sided
//! Jacobi SVD. Both are foolproof at these sizes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, Mul, Neg, Sub};

use crate::DEFAULT_TOL;

/// Square root via libm so the crate stays `no_std`.
#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn fabs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub(crate) fn hypot(x: f64, y: f64) -> f64 {
    libm::hypot(x, y)
}

/// Errors raised by the matrix kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum MatError {
    /// Operation requires a square matrix.
    NonSquare { rows: usize, cols: usize },
    /// A matrix entry is NaN or infinite.
    NonFiniteEntry,
    /// Operand shapes do not conform.
    ShapeMismatch { context: &'static str },
    /// Input exceeds the symmetry tolerance `1e-8 * ||m||`.
    Asymmetric { deviation: f64 },
    /// The pivot block of a Schur reduction is not negative definite.
    BlockNotNegDef { lambda_max: f64 },
    /// Matrix is singular (or nearly so) where an inverse is required.
    Singular { condition: f64 },
}

impl fmt::Display for MatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatError::NonSquare { rows, cols } => {
                write!(f, "matrix must be square, got {rows}x{cols}")
            }
            MatError::NonFiniteEntry => write!(f, "matrix contains a non-finite entry"),
            MatError::ShapeMismatch { context } => write!(f, "shape mismatch in {context}"),
            MatError::Asymmetric { deviation } => {
                write!(f, "matrix is not symmetric (deviation {deviation:e})")
            }
            MatError::BlockNotNegDef { lambda_max } => {
                write!(f, "pivot block is not negative definite (lambda_max {lambda_max:e})")
            }
            MatError::Singular { condition } => {
                write!(f, "matrix is singular or ill-conditioned (cond {condition:e})")
            }
        }
    }
}

/// Dense real matrix, row-major storage.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|j| format!("{:.6e}", self[(i, j)])).collect();
            writeln!(f, "  {}", row.join(", "))?;
        }
        write!(f, "]")
    }
}

impl core::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Build from a row-major entry list. Panics if the length is wrong;
    /// use [`Mat::try_from_vec`] for checked construction.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "entry count must be rows*cols");
        Mat { rows, cols, data }
    }

    pub fn try_from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MatError> {
        if data.len() != rows * cols {
            return Err(MatError::ShapeMismatch { context: "from_vec" });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(MatError::NonFiniteEntry);
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Diagonal matrix from a slice.
    pub fn diag(d: &[f64]) -> Self {
        let mut m = Mat::zeros(d.len(), d.len());
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    /// 1x1 matrix.
    pub fn scalar(v: f64) -> Self {
        Mat::from_vec(1, 1, vec![v])
    }

    /// Column vector.
    pub fn col(v: &[f64]) -> Self {
        Mat::from_vec(v.len(), 1, v.to_vec())
    }

    /// Row vector.
    pub fn row(v: &[f64]) -> Self {
        Mat::from_vec(1, v.len(), v.to_vec())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Frobenius norm. This is the matrix norm used throughout the
    /// trigger-constant formulas.
    pub fn fro_norm(&self) -> f64 {
        sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(fabs(*v)))
    }

    /// `(m + m^T)/2`; input must be square.
    pub fn symmetrized(&self) -> Mat {
        assert!(self.is_square(), "symmetrized requires a square matrix");
        let mut s = Mat::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in 0..self.rows {
                s[(i, j)] = 0.5 * (self[(i, j)] + self[(j, i)]);
            }
        }
        s
    }

    /// Largest deviation from symmetry, `max |m_ij - m_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                dev = dev.max(fabs(self[(i, j)] - self[(j, i)]));
            }
        }
        dev
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec shape mismatch");
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut acc = 0.0;
            for j in 0..self.cols {
                acc += self[(i, j)] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    /// Writes `self * v` into `out` without allocating.
    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(self.cols, v.len());
        debug_assert_eq!(self.rows, out.len());
        for i in 0..self.rows {
            let mut acc = 0.0;
            for j in 0..self.cols {
                acc += self.data[i * self.cols + j] * v[j];
            }
            out[i] = acc;
        }
    }

    /// Horizontal concatenation.
    pub fn hcat(blocks: &[&Mat]) -> Mat {
        assert!(!blocks.is_empty());
        let rows = blocks[0].rows;
        assert!(blocks.iter().all(|b| b.rows == rows), "hcat row mismatch");
        let cols: usize = blocks.iter().map(|b| b.cols).sum();
        let mut m = Mat::zeros(rows, cols);
        let mut off = 0;
        for b in blocks {
            for i in 0..rows {
                for j in 0..b.cols {
                    m[(i, off + j)] = b[(i, j)];
                }
            }
            off += b.cols;
        }
        m
    }

    /// Vertical concatenation.
    pub fn vcat(blocks: &[&Mat]) -> Mat {
        assert!(!blocks.is_empty());
        let cols = blocks[0].cols;
        assert!(blocks.iter().all(|b| b.cols == cols), "vcat col mismatch");
        let rows: usize = blocks.iter().map(|b| b.rows).sum();
        let mut m = Mat::zeros(rows, cols);
        let mut off = 0;
        for b in blocks {
            for i in 0..b.rows {
                for j in 0..cols {
                    m[(off + i, j)] = b[(i, j)];
                }
            }
            off += b.rows;
        }
        m
    }

    /// Block matrix from a grid of blocks; each row of blocks must agree on
    /// heights, each column on widths.
    pub fn from_blocks(grid: &[&[&Mat]]) -> Mat {
        let rows: Vec<Mat> = grid.iter().map(|r| Mat::hcat(r)).collect();
        Mat::vcat(&rows.iter().collect::<Vec<_>>())
    }

    /// Copies `block` into `self` with its (0,0) entry at `(row_off, col_off)`.
    pub fn set_block(&mut self, row_off: usize, col_off: usize, block: &Mat) {
        assert!(row_off + block.rows <= self.rows && col_off + block.cols <= self.cols);
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(row_off + i, col_off + j)] = block[(i, j)];
            }
        }
    }

    /// Extracts the `rows x cols` block at `(row_off, col_off)`.
    pub fn block(&self, row_off: usize, col_off: usize, rows: usize, cols: usize) -> Mat {
        assert!(row_off + rows <= self.rows && col_off + cols <= self.cols);
        Mat::from_fn(rows, cols, |i, j| self[(row_off + i, col_off + j)])
    }

    /// `n_total x n_block` selector `E` with `E^T x` picking the coordinates
    /// starting at `offset`; equivalently `E` embeds a block of `n_block`
    /// coordinates into dimension `n_total`.
    pub fn embedder(n_total: usize, offset: usize, n_block: usize) -> Mat {
        let mut e = Mat::zeros(n_total, n_block);
        for k in 0..n_block {
            e[(offset + k, k)] = 1.0;
        }
        e
    }
}

impl Add for &Mat {
    type Output = Mat;
    fn add(self, rhs: &Mat) -> Mat {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Mat {
    type Output = Mat;
    fn sub(self, rhs: &Mat) -> Mat {
        assert_eq!(self.shape(), rhs.shape(), "sub shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        self.scale(-1.0)
    }
}

impl Mul for &Mat {
    type Output = Mat;
    fn mul(self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.rows, "mul shape mismatch");
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        out
    }
}

/// Symmetric eigendecomposition `m = Q diag(lambda) Q^T`.
///
/// Eigenvalues are sorted ascending; `eigenvectors` holds the matching
/// orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Mat,
}

impl SymEig {
    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }

    /// `Q diag(lambda) Q^T`.
    pub fn reconstruct(&self) -> Mat {
        let q = &self.eigenvectors;
        let n = self.eigenvalues.len();
        let mut ql = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                ql[(i, j)] = q[(i, j)] * self.eigenvalues[j];
            }
        }
        &ql * &q.transpose()
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// The input is symmetrized as `(m + m^T)/2` first; asymmetry beyond
/// `1e-8 * ||m||` is an error. Convergence is unconditional for symmetric
/// matrices; 50 sweeps is far more than the handful these sizes need.
pub fn sym_eig(m: &Mat) -> Result<SymEig, MatError> {
    if !m.is_square() {
        return Err(MatError::NonSquare { rows: m.rows, cols: m.cols });
    }
    if !m.is_finite() {
        return Err(MatError::NonFiniteEntry);
    }
    let scale = m.fro_norm();
    if m.asymmetry() > 1e-8 * scale.max(1.0) {
        return Err(MatError::Asymmetric { deviation: m.asymmetry() });
    }
    let n = m.rows;
    if n == 0 {
        return Ok(SymEig { eigenvalues: Vec::new(), eigenvectors: Mat::zeros(0, 0) });
    }
    let mut a = m.symmetrized();
    let mut q = Mat::identity(n);

    const MAX_SWEEPS: usize = 50;
    for _sweep in 0..MAX_SWEEPS {
        let mut off: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if sqrt(2.0 * off) <= 1e-15 * scale.max(1.0) {
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apq = a[(p, r)];
                if fabs(apq) <= 1e-300 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(r, r)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + hypot(theta, 1.0))
                } else {
                    -1.0 / (-theta + hypot(theta, 1.0))
                };
                let c = 1.0 / hypot(t, 1.0);
                let s = t * c;

                // rotate rows/columns p and r of a
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, r)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, r)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(r, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(r, k)] = s * apk + c * aqk;
                }
                // accumulate eigenvectors
                for k in 0..n {
                    let qkp = q[(k, p)];
                    let qkq = q[(k, r)];
                    q[(k, p)] = c * qkp - s * qkq;
                    q[(k, r)] = s * qkp + c * qkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let eigenvectors = Mat::from_fn(n, n, |i, j| q[(i, order[j])]);
    Ok(SymEig { eigenvalues, eigenvectors })
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max(m: &Mat) -> Result<f64, MatError> {
    Ok(sym_eig(m)?.lambda_max())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min(m: &Mat) -> Result<f64, MatError> {
    Ok(sym_eig(m)?.lambda_min())
}

/// `true` iff `lambda_max(m) <= tol` for symmetric `m`.
pub fn is_negsemidef(m: &Mat, tol: f64) -> Result<bool, MatError> {
    Ok(lambda_max(m)? <= tol)
}

/// Singular values (descending) by one-sided Jacobi on the columns.
///
/// One-sided Jacobi delivers the small singular values to high relative
/// accuracy, which matters for the rank decisions inside [`pinv`].
pub fn singular_values(m: &Mat) -> Result<Vec<f64>, MatError> {
    let (u, _v) = one_sided_jacobi(m)?;
    let mut sv: Vec<f64> = (0..u.cols)
        .map(|j| {
            let mut s = 0.0;
            for i in 0..u.rows {
                s += u[(i, j)] * u[(i, j)];
            }
            sqrt(s)
        })
        .collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(sv)
}

/// 2-norm condition number estimate `sigma_max / sigma_min`.
/// Returns `f64::INFINITY` when the smallest singular value underflows.
pub fn cond_2(m: &Mat) -> Result<f64, MatError> {
    let sv = singular_values(m)?;
    let smax = sv.first().copied().unwrap_or(0.0);
    let smin = sv.last().copied().unwrap_or(0.0);
    if smin <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(smax / smin)
}

/// Work matrix decomposition for the one-sided Jacobi SVD: returns `(w, v)`
/// with `w = m * v`, `v` orthogonal and the columns of `w` orthogonal.
/// Requires `rows >= cols`; callers transpose as needed.
fn one_sided_jacobi(m: &Mat) -> Result<(Mat, Mat), MatError> {
    if !m.is_finite() {
        return Err(MatError::NonFiniteEntry);
    }
    if m.rows < m.cols {
        let (w, v) = one_sided_jacobi(&m.transpose())?;
        // m^T = w v^T with w = m^T v; undone by the caller via transposition
        return Ok((w, v));
    }
    let n = m.cols;
    let mut w = m.clone();
    let mut v = Mat::identity(n);
    const MAX_SWEEPS: usize = 60;
    let eps = 1e-15;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let mut a = 0.0;
                let mut b = 0.0;
                let mut c = 0.0;
                for k in 0..w.rows {
                    a += w[(k, i)] * w[(k, i)];
                    b += w[(k, j)] * w[(k, j)];
                    c += w[(k, i)] * w[(k, j)];
                }
                if c * c <= eps * eps * a * b || c == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (b - a) / (2.0 * c);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + hypot(zeta, 1.0))
                } else {
                    -1.0 / (-zeta + hypot(zeta, 1.0))
                };
                let cs = 1.0 / hypot(t, 1.0);
                let sn = cs * t;
                for k in 0..w.rows {
                    let wi = w[(k, i)];
                    let wj = w[(k, j)];
                    w[(k, i)] = cs * wi - sn * wj;
                    w[(k, j)] = sn * wi + cs * wj;
                }
                for k in 0..n {
                    let vi = v[(k, i)];
                    let vj = v[(k, j)];
                    v[(k, i)] = cs * vi - sn * vj;
                    v[(k, j)] = sn * vi + cs * vj;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    Ok((w, v))
}

/// Moore-Penrose pseudoinverse. Singular values below `tol * sigma_max`
/// are treated as zero. The zero matrix pseudoinverts to its transpose
/// shape filled with zeros.
pub fn pinv(m: &Mat, tol: f64) -> Result<Mat, MatError> {
    if !m.is_finite() {
        return Err(MatError::NonFiniteEntry);
    }
    if m.rows < m.cols {
        return Ok(pinv(&m.transpose(), tol)?.transpose());
    }
    let (w, v) = one_sided_jacobi(m)?;
    let n = m.cols;
    let sigmas: Vec<f64> = (0..n)
        .map(|j| {
            let mut s = 0.0;
            for i in 0..w.rows {
                s += w[(i, j)] * w[(i, j)];
            }
            sqrt(s)
        })
        .collect();
    let smax = sigmas.iter().fold(0.0f64, |a, &b| a.max(b));
    let cut = tol * smax;
    // pinv = sum_j v_j u_j^T / sigma_j over kept singular triples,
    // with u_j = w_j / sigma_j.
    let mut p = Mat::zeros(m.cols, m.rows);
    for j in 0..n {
        if sigmas[j] <= cut || sigmas[j] == 0.0 {
            continue;
        }
        let inv_s2 = 1.0 / (sigmas[j] * sigmas[j]);
        for r in 0..m.cols {
            let vr = v[(r, j)];
            if vr == 0.0 {
                continue;
            }
            for c in 0..m.rows {
                p[(r, c)] += vr * w[(c, j)] * inv_s2;
            }
        }
    }
    Ok(p)
}

/// Pseudoinverse at the default tolerance.
pub fn pinv_default(m: &Mat) -> Result<Mat, MatError> {
    pinv(m, DEFAULT_TOL)
}

/// LU factorization with partial pivoting, packed in place.
struct Lu {
    lu: Mat,
    perm: Vec<usize>,
}

fn lu_factor(m: &Mat) -> Result<Lu, MatError> {
    if !m.is_square() {
        return Err(MatError::NonSquare { rows: m.rows, cols: m.cols });
    }
    if !m.is_finite() {
        return Err(MatError::NonFiniteEntry);
    }
    let n = m.rows;
    let mut lu = m.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut pivot = k;
        let mut pmax = fabs(lu[(k, k)]);
        for i in (k + 1)..n {
            let v = fabs(lu[(i, k)]);
            if v > pmax {
                pmax = v;
                pivot = i;
            }
        }
        if pmax == 0.0 {
            return Err(MatError::Singular { condition: f64::INFINITY });
        }
        if pivot != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(pivot, j)];
                lu[(pivot, j)] = tmp;
            }
            perm.swap(k, pivot);
        }
        for i in (k + 1)..n {
            let f = lu[(i, k)] / lu[(k, k)];
            lu[(i, k)] = f;
            for j in (k + 1)..n {
                let delta = f * lu[(k, j)];
                lu[(i, j)] -= delta;
            }
        }
    }
    Ok(Lu { lu, perm })
}

impl Lu {
    fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            for j in 0..i {
                x[i] -= self.lu[(i, j)] * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in (i + 1)..n {
                x[i] -= self.lu[(i, j)] * x[j];
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }
}

/// Solves `a x = b` column-by-column (`b` may have several columns).
pub fn solve(a: &Mat, b: &Mat) -> Result<Mat, MatError> {
    if a.rows() != b.rows() {
        return Err(MatError::ShapeMismatch { context: "solve" });
    }
    let lu = lu_factor(a)?;
    let mut x = Mat::zeros(b.rows(), b.cols());
    let mut col = vec![0.0; b.rows()];
    for j in 0..b.cols() {
        for i in 0..b.rows() {
            col[i] = b[(i, j)];
        }
        let xs = lu.solve_vec(&col);
        for i in 0..b.rows() {
            x[(i, j)] = xs[i];
        }
    }
    Ok(x)
}

/// Matrix inverse via LU with partial pivoting. `max_cond` guards against
/// silently inverting an ill-conditioned matrix; pass `f64::INFINITY` to
/// disable the guard.
pub fn inv_guarded(m: &Mat, max_cond: f64) -> Result<Mat, MatError> {
    if !m.is_square() {
        return Err(MatError::NonSquare { rows: m.rows, cols: m.cols });
    }
    if max_cond.is_finite() {
        let c = cond_2(m)?;
        if c > max_cond {
            return Err(MatError::Singular { condition: c });
        }
    }
    solve(m, &Mat::identity(m.rows))
}

/// Matrix inverse with the standard condition guard of `1e12`.
pub fn inv(m: &Mat) -> Result<Mat, MatError> {
    inv_guarded(m, 1e12)
}

/// Schur reduction of the block matrix `[[a, b^T], [b, c]]` with respect to
/// a negative-definite `c`: returns `a - b^T c^{-1} b`.
///
/// Caller contract: with `c < 0`, the full block is negative semidefinite
/// iff the returned reduction is.
pub fn schur_reduce(a: &Mat, b: &Mat, c: &Mat, tol: f64) -> Result<Mat, MatError> {
    if !a.is_square() {
        return Err(MatError::NonSquare { rows: a.rows, cols: a.cols });
    }
    if !c.is_square() {
        return Err(MatError::NonSquare { rows: c.rows, cols: c.cols });
    }
    if b.rows() != c.rows() || b.cols() != a.rows() {
        return Err(MatError::ShapeMismatch { context: "schur_reduce" });
    }
    let ce = sym_eig(c)?;
    if ce.lambda_max() >= -tol {
        return Err(MatError::BlockNotNegDef { lambda_max: ce.lambda_max() });
    }
    // c^{-1} = Q diag(1/lambda) Q^T from the eigendecomposition
    let q = &ce.eigenvectors;
    let inv_l = Mat::diag(&ce.eigenvalues.iter().map(|l| 1.0 / l).collect::<Vec<_>>());
    let c_inv = &(q * &inv_l) * &q.transpose();
    let red = a - &(&(&b.transpose() * &c_inv) * b);
    Ok(red.symmetrized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Lcg64;
    use proptest::prelude::*;

    fn random_sym(n: usize, rng: &mut Lcg64) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = rng.uniform(-2.0, 2.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    #[test]
    fn sym_eig_identity() {
        let e = sym_eig(&Mat::identity(2)).unwrap();
        assert!((e.eigenvalues[0] - 1.0).abs() < 1e-14);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sym_eig_diagonal_sorted() {
        let e = sym_eig(&Mat::diag(&[3.0, -2.0])).unwrap();
        assert!((e.eigenvalues[0] + 2.0).abs() < 1e-14);
        assert!((e.eigenvalues[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn sym_eig_reconstruction_5x5() {
        let mut rng = Lcg64::new(7);
        let m = random_sym(5, &mut rng);
        let e = sym_eig(&m).unwrap();
        let r = e.reconstruct();
        assert!((&r - &m).fro_norm() <= 1e-9 * m.fro_norm().max(1.0));
        // orthogonality of Q
        let q = &e.eigenvectors;
        let qtq = &q.transpose() * q;
        assert!((&qtq - &Mat::identity(5)).fro_norm() < 1e-12);
    }

    #[test]
    fn sym_eig_rejects_asymmetric() {
        let m = Mat::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert!(matches!(sym_eig(&m), Err(MatError::Asymmetric { .. })));
    }

    #[test]
    fn negsemidef_cases() {
        assert!(is_negsemidef(&Mat::identity(3).scale(-1.0), 0.0).unwrap());
        assert!(is_negsemidef(&Mat::zeros(2, 2), 0.0).unwrap());
        // [[0,1],[1,0]] has eigenvalues -1, 1
        let m = Mat::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(!is_negsemidef(&m, 0.0).unwrap());
        let e = sym_eig(&m).unwrap();
        assert!((e.lambda_max() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pinv_invertible_matches_inverse() {
        let m = Mat::from_rows(&[&[2.0, 1.0], &[1.0, 3.0]]);
        let p = pinv(&m, 1e-12).unwrap();
        let i = &m * &p;
        assert!((&i - &Mat::identity(2)).fro_norm() < 1e-12);
    }

    #[test]
    fn pinv_column_vector() {
        let m = Mat::col(&[1.0, 1.0]);
        let p = pinv(&m, 1e-12).unwrap();
        assert_eq!(p.shape(), (1, 2));
        assert!((p[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((p[(0, 1)] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn pinv_zero_matrix() {
        let p = pinv(&Mat::zeros(3, 2), 1e-12).unwrap();
        assert_eq!(p.shape(), (2, 3));
        assert!(p.fro_norm() == 0.0);
    }

    #[test]
    fn pinv_moore_penrose_rank_deficient() {
        // rank-1 2x2
        let m = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        let p = pinv(&m, 1e-10).unwrap();
        let mpm = &(&m * &p) * &m;
        let pmp = &(&p * &m) * &p;
        assert!((&mpm - &m).fro_norm() < 1e-9);
        assert!((&pmp - &p).fro_norm() < 1e-9);
        assert!((&(&m * &p) - &(&m * &p).transpose()).fro_norm() < 1e-9);
        assert!((&(&p * &m) - &(&p * &m).transpose()).fro_norm() < 1e-9);
    }

    #[test]
    fn lu_inverse_roundtrip() {
        let m = Mat::from_rows(&[&[4.0, -2.0, 1.0], &[1.0, 3.0, -1.0], &[2.0, 0.0, 5.0]]);
        let mi = inv(&m).unwrap();
        assert!((&(&m * &mi) - &Mat::identity(3)).fro_norm() < 1e-12);
    }

    #[test]
    fn inv_guard_rejects_ill_conditioned() {
        let m = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 1e-14]]);
        assert!(matches!(inv(&m), Err(MatError::Singular { .. })));
    }

    #[test]
    fn schur_trivial() {
        let r = schur_reduce(&Mat::scalar(-1.0), &Mat::scalar(0.0), &Mat::scalar(-1.0), 1e-12)
            .unwrap();
        assert!((r[(0, 0)] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn schur_indefinite_detected() {
        // a = 0, b = 1, c = -1: reduction is +1, and indeed
        // [[0,1],[1,-1]] has eigenvalues of both signs.
        let r = schur_reduce(&Mat::scalar(0.0), &Mat::scalar(1.0), &Mat::scalar(-1.0), 1e-12)
            .unwrap();
        assert!((r[(0, 0)] - 1.0).abs() < 1e-14);
        let full = Mat::from_rows(&[&[0.0, 1.0], &[1.0, -1.0]]);
        assert!(!is_negsemidef(&full, 0.0).unwrap());
    }

    #[test]
    fn schur_rejects_indefinite_pivot() {
        let c = Mat::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let err = schur_reduce(&Mat::identity(1), &Mat::zeros(2, 1), &c, 1e-12);
        assert!(matches!(err, Err(MatError::BlockNotNegDef { .. })));
    }

    #[test]
    fn schur_sign_agreement_500_random_blocks() {
        // full vs reduced sign of lambda_max over random blocks with c < 0
        let mut rng = Lcg64::new(2024);
        let mut checked = 0;
        for _ in 0..500 {
            let na = 1 + (rng.next_u64() % 3) as usize;
            let nc = 1 + (rng.next_u64() % 3) as usize;
            let a = random_sym(na, &mut rng);
            let b = Mat::from_fn(nc, na, |_, _| rng.uniform(-1.5, 1.5));
            // make c negative definite: -(g g^T + I)
            let g = Mat::from_fn(nc, nc, |_, _| rng.uniform(-1.0, 1.0));
            let c = (&(&g * &g.transpose()) + &Mat::identity(nc)).scale(-1.0);
            let full = Mat::from_blocks(&[&[&a, &b.transpose()], &[&b, &c]]);
            let red = schur_reduce(&a, &b, &c, 1e-12).unwrap();
            let lf = lambda_max(&full.symmetrized()).unwrap();
            let lr = lambda_max(&red).unwrap();
            if lf.abs() > 1e-7 && lr.abs() > 1e-7 {
                assert_eq!(lf > 0.0, lr > 0.0, "sign disagreement: full {lf}, reduced {lr}");
                checked += 1;
            }
        }
        assert!(checked > 400, "too few conclusive samples: {checked}");
    }

    proptest! {
        #[test]
        fn prop_negsemidef_stable_under_reconstruction(seed in 0u64..500) {
            let mut rng = Lcg64::new(seed);
            let n = 2 + (rng.next_u64() % 4) as usize;
            let m = random_sym(n, &mut rng);
            let e = sym_eig(&m).unwrap();
            let r = e.reconstruct().symmetrized();
            prop_assert_eq!(
                is_negsemidef(&m, 0.0).unwrap(),
                is_negsemidef(&r, 1e-9).unwrap()
            );
        }

        #[test]
        fn prop_pinv_involution_full_rank(seed in 0u64..200) {
            let mut rng = Lcg64::new(seed.wrapping_add(99));
            let n = 2 + (rng.next_u64() % 3) as usize;
            // diagonally dominant => comfortably full rank
            let mut m = Mat::from_fn(n, n, |_, _| rng.uniform(-1.0, 1.0));
            for i in 0..n {
                m[(i, i)] += 3.0;
            }
            let p = pinv(&m, 1e-12).unwrap();
            let pp = pinv(&p, 1e-12).unwrap();
            prop_assert!((&pp - &m).fro_norm() < 1e-8 * m.fro_norm().max(1.0));
        }
    }
}
