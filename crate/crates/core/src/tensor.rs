//! Dense row-major matrices and the handful of spectral routines the
//! training and verification code relies on.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::{axpy, dot, norm, Scalar};

/// Column norms below this are treated as zero by [`normalize_columns`].
pub const ZERO_COLUMN_NORM: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<T>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::DimensionMismatch("ragged columns".into()));
        }
        Ok(Self::from_fn(rows, cols, |r, c| columns[c][r]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Materializes column `c`.
    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn columns(&self) -> Vec<Vec<T>> {
        let mut out = vec![Vec::with_capacity(self.rows); self.cols];
        for r in 0..self.rows {
            for (c, &v) in self.row(r).iter().enumerate() {
                out[c].push(v);
            }
        }
        out
    }

    pub fn set_column(&mut self, c: usize, values: &[T]) {
        assert_eq!(values.len(), self.rows);
        for (r, &v) in values.iter().enumerate() {
            self.set(r, c, v);
        }
    }

    pub fn column_norm(&self, c: usize) -> T {
        (0..self.rows)
            .map(|r| self.get(r, c) * self.get(r, c))
            .sum::<T>()
            .sqrt()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// `self + s * other`
    pub fn add_scaled(&self, s: T, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + s * b)
    }

    pub fn frobenius_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * x`
    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "matvec: {} columns vs vector of {}",
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `self^T * y`
    pub fn tr_matvec(&self, y: &[T]) -> Result<Vec<T>> {
        if y.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "transposed matvec: {} rows vs vector of {}",
                self.rows,
                y.len()
            )));
        }
        let mut out = vec![T::zero(); self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr != T::zero() {
                axpy(yr, self.row(r), &mut out);
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a != T::zero() {
                    axpy(a, other.row(k), dst);
                }
            }
        }
        Ok(out)
    }

    /// `self * self^T`, computed from row inner products.
    pub fn gram_rows(&self) -> Self {
        let n = self.rows;
        let upper: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|a| (a..n).map(|b| dot(self.row(a), self.row(b))).collect())
            .collect();
        let mut g = Self::zeros(n, n);
        for (a, row) in upper.iter().enumerate() {
            for (off, &v) in row.iter().enumerate() {
                g.set(a, a + off, v);
                g.set(a + off, a, v);
            }
        }
        g
    }

    /// `self^T * self`.
    pub fn gram_cols(&self) -> Self {
        self.transpose().gram_rows()
    }
}

/// Rescales every column to unit Euclidean norm.
pub fn normalize_columns<T: Scalar>(m: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    let mut out = m.clone();
    for c in 0..m.cols() {
        let nrm = m.column_norm(c);
        if !(nrm >= T::lit(ZERO_COLUMN_NORM)) {
            return Err(Error::ZeroColumn(c));
        }
        for r in 0..m.rows() {
            out.set(r, c, m.get(r, c) / nrm);
        }
    }
    Ok(out)
}

/// Matrix with i.i.d. `N(0, scale^2)` entries, drawn in row-major order.
pub fn gaussian_matrix<T: Scalar>(rows: usize, cols: usize, scale: T, rng: &mut Rng) -> DenseMatrix<T> {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.normal(scale))
}

/// Modified Gram-Schmidt on the columns. Columns that collapse numerically
/// are replaced by random directions orthogonal to the ones before them, so
/// the result always has orthonormal columns.
pub fn orthonormalize_columns<T: Scalar>(m: &DenseMatrix<T>, rng: &mut Rng) -> DenseMatrix<T> {
    let mut cols = m.columns();
    let scale = cols.iter().map(|c| norm(c)).fold(T::zero(), T::max);
    for j in 0..cols.len() {
        let mut attempts = 0;
        loop {
            for i in 0..j {
                // two passes keep the basis orthogonal to working precision
                for _ in 0..2 {
                    let proj = dot(&cols[i], &cols[j]);
                    let (head, tail) = cols.split_at_mut(j);
                    axpy(-proj, &head[i], &mut tail[0]);
                }
            }
            let nrm = norm(&cols[j]);
            let floor = T::lit(1e-10) * scale.max(T::one());
            if nrm > floor || attempts > 8 {
                cols[j].iter_mut().for_each(|v| *v = *v / nrm);
                break;
            }
            cols[j] = rng.unit_vector(m.rows());
            attempts += 1;
        }
    }
    DenseMatrix::from_columns(&cols).expect("columns share a length")
}

/// Random `n x m` matrix with orthonormal columns (`m <= n`).
pub fn random_orthonormal<T: Scalar>(n: usize, m: usize, rng: &mut Rng) -> Result<DenseMatrix<T>> {
    if m > n {
        return Err(Error::DimensionMismatch(format!(
            "cannot fit {m} orthonormal columns in dimension {n}"
        )));
    }
    let g = gaussian_matrix(n, m, T::one(), rng);
    Ok(orthonormalize_columns(&g, rng))
}

/// Result of an orthogonal-iteration run.
#[derive(Debug, Clone)]
pub struct Subspace<T> {
    /// Orthonormal columns, ordered by decreasing singular value.
    pub vectors: DenseMatrix<T>,
    /// Singular values matching `vectors`.
    pub singular_values: Vec<T>,
    /// Relative residual of the invariant-subspace equation at exit.
    pub residual: T,
    pub iterations: usize,
    /// False when `max_iters` ran out before reaching `tol`; `vectors` then
    /// holds the best iterate.
    pub converged: bool,
}

/// Orthogonal iteration on a symmetric positive semi-definite matrix.
fn symmetric_top_eigenvectors<T: Scalar>(
    g: &DenseMatrix<T>,
    m: usize,
    max_iters: usize,
    tol: T,
) -> (DenseMatrix<T>, Vec<T>, T, usize, bool) {
    let d = g.rows();
    let mut rng = Rng::new(0x0a11_ce5e_ed00_0001, 0);
    let mut q = orthonormalize_columns(&gaussian_matrix(d, m, T::one(), &mut rng), &mut rng);
    let mut best = (q.clone(), T::infinity(), vec![T::zero(); m]);
    let mut iters = 0;
    while iters < max_iters.max(1) {
        iters += 1;
        let z = g.matmul(&q).expect("square gram matrix");
        let h = q.transpose().matmul(&z).expect("conforming");
        let scale = (0..m).map(|i| h.get(i, i)).fold(T::zero(), T::max);
        let resid = z.sub(&q.matmul(&h).expect("conforming")).expect("same shape");
        let rel = if scale > T::zero() {
            resid.frobenius_sq().sqrt() / scale
        } else {
            T::zero()
        };
        let eig: Vec<T> = (0..m).map(|i| h.get(i, i)).collect();
        if rel < best.1 {
            best = (q.clone(), rel, eig.clone());
        }
        if rel <= tol {
            return (q, eig, rel, iters, true);
        }
        q = orthonormalize_columns(&z, &mut rng);
    }
    (best.0, best.2, best.1, iters, false)
}

/// Top-`m` left singular vectors of `y`.
///
/// Runs orthogonal iteration on whichever Gram matrix (`Y Y^T` or `Y^T Y`)
/// is smaller; in the second case the left vectors are recovered as
/// `Y v / sigma`.
pub fn top_singular_vectors<T: Scalar>(
    y: &DenseMatrix<T>,
    m: usize,
    max_iters: usize,
    tol: T,
) -> Result<Subspace<T>> {
    let (rows, cols) = y.shape();
    if m == 0 || m > rows.min(cols) {
        return Err(Error::DimensionMismatch(format!(
            "cannot extract {m} singular vectors from a {rows}x{cols} matrix"
        )));
    }
    if rows <= cols {
        let g = y.gram_rows();
        let (q, eig, residual, iterations, converged) = symmetric_top_eigenvectors(&g, m, max_iters, tol);
        Ok(Subspace {
            vectors: q,
            singular_values: eig.into_iter().map(|e| e.max(T::zero()).sqrt()).collect(),
            residual,
            iterations,
            converged,
        })
    } else {
        let g = y.gram_cols();
        let (v, eig, residual, iterations, converged) = symmetric_top_eigenvectors(&g, m, max_iters, tol);
        let u = y.matmul(&v)?;
        let mut rng = Rng::new(0x0a11_ce5e_ed00_0002, 0);
        Ok(Subspace {
            vectors: orthonormalize_columns(&u, &mut rng),
            singular_values: eig.into_iter().map(|e| e.max(T::zero()).sqrt()).collect(),
            residual,
            iterations,
            converged,
        })
    }
}

/// Largest singular value by power iteration on the smaller Gram matrix.
pub fn spectral_norm<T: Scalar>(m: &DenseMatrix<T>, tol: T) -> T {
    if m.max_abs() == T::zero() {
        return T::zero();
    }
    let g = if m.rows() <= m.cols() {
        m.gram_rows()
    } else {
        m.gram_cols()
    };
    let d = g.rows();
    let mut rng = Rng::new(0x0a11_ce5e_ed00_0003, 0);
    let mut v: Vec<T> = rng.unit_vector(d);
    let mut lambda = T::zero();
    for _ in 0..20_000 {
        let w = g.matvec(&v).expect("square");
        let rayleigh = dot(&v, &w);
        let nrm = norm(&w);
        if nrm == T::zero() {
            break;
        }
        v = w.into_iter().map(|x| x / nrm).collect();
        let done = (rayleigh - lambda).abs() <= T::lit(1e-3) * tol * rayleigh;
        lambda = rayleigh;
        if done {
            break;
        }
    }
    // one last Rayleigh quotient with the freshest vector
    let w = g.matvec(&v).expect("square");
    lambda.max(dot(&v, &w)).max(T::zero()).sqrt()
}
