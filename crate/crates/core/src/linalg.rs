//! Small dense linear algebra: a column-major matrix, tall-skinny QR with a
//! positive-diagonal convention, triangular inversion, and the congruence
//! rescaling applied to packed symmetric families of vectors.
//!
//! Everything here is sized for unstable dimensions of a handful of columns;
//! there is no blocking and no pivoting.

use std::ops::{Index, IndexMut};

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("rank deficient: column {column} has pivot {pivot:e} below threshold {threshold:e}")]
    RankDeficient {
        column: usize,
        pivot: f64,
        threshold: f64,
    },
    #[error("singular triangular matrix: diagonal entry {index} is {value:e}")]
    Singular { index: usize, value: f64 },
    #[error("non-finite entry in {what}")]
    NonFinite { what: &'static str },
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
}

/// Dense matrix stored column by column, so `col(j)` is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
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
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds a matrix from column-major storage.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                expected: (rows, cols),
                got: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows(rows: &[&[T]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged row {i}");
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Builds a matrix whose columns are the given vectors. Panics on ragged input.
    pub fn from_columns<V: AsRef<[T]>>(columns: &[V]) -> Self {
        let r = columns.first().map_or(0, |c| c.as_ref().len());
        let mut data = Vec::with_capacity(r * columns.len());
        for c in columns {
            assert_eq!(c.as_ref().len(), r, "ragged column");
            data.extend_from_slice(c.as_ref());
        }
        Self {
            rows: r,
            cols: columns.len(),
            data,
        }
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
    pub fn col(&self, j: usize) -> &[T] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [T] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn copy_from(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape());
        self.data.copy_from_slice(&other.data);
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self, LinalgError> {
        if self.cols != rhs.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: (self.cols, rhs.cols),
                got: rhs.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        self.matmul_into(rhs, &mut out);
        Ok(out)
    }

    /// `out = self * rhs`; shapes are checked with debug assertions only.
    pub fn matmul_into(&self, rhs: &Self, out: &mut Self) {
        debug_assert_eq!(self.cols, rhs.rows);
        debug_assert_eq!(out.shape(), (self.rows, rhs.cols));
        out.fill(T::zero());
        for j in 0..rhs.cols {
            for k in 0..self.cols {
                let s = rhs[(k, j)];
                if s == T::zero() {
                    continue;
                }
                let src = self.col(k);
                let dst = &mut out.data[j * self.rows..(j + 1) * self.rows];
                for (d, &a) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
    }

    /// `out = self * x`.
    pub fn mul_vec_into(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        out.iter_mut().for_each(|o| *o = T::zero());
        for (k, &xk) in x.iter().enumerate() {
            if xk == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.col(k)) {
                *o += a * xk;
            }
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn frobenius_norm(&self) -> T {
        norm(&self.data)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// True when every entry strictly below the diagonal is exactly zero.
    pub fn is_upper_triangular(&self) -> bool {
        (0..self.cols).all(|j| ((j + 1)..self.rows).all(|i| self[(i, j)] == T::zero()))
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[j * self.rows + i]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[j * self.rows + i]
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

#[inline]
pub fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Number of stored entries of a symmetric `m x m` family (lower triangle).
#[inline]
pub const fn packed_len(m: usize) -> usize {
    m * (m + 1) / 2
}

/// Packed position of the symmetric pair `(i, j)`; order of the arguments is irrelevant.
#[inline]
pub const fn sym_index(i: usize, j: usize) -> usize {
    if i >= j {
        i * (i + 1) / 2 + j
    } else {
        j * (j + 1) / 2 + i
    }
}

/// Thin QR factors: `q` has orthonormal columns, `r` is upper-triangular
/// with a strictly positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct QrPair<T> {
    pub q: Matrix<T>,
    pub r: Matrix<T>,
}

/// Thin QR of an `n x m` matrix (`m <= n`) with a positive diagonal in `r`.
pub fn qr_positive<T: Real>(a: &Matrix<T>) -> Result<QrPair<T>, LinalgError> {
    let (n, m) = a.shape();
    if m > n || m == 0 {
        return Err(LinalgError::DimensionMismatch {
            expected: (n, n.min(m.max(1))),
            got: (n, m),
        });
    }
    let mut q = Matrix::zeros(n, m);
    let mut r = Matrix::zeros(m, m);
    qr_positive_into(a, &mut q, &mut r)?;
    Ok(QrPair { q, r })
}

/// In-place variant of [`qr_positive`]; `q` must be `n x m`, `r` must be `m x m`.
///
/// Modified Gram-Schmidt with a second orthogonalization pass. The pivot is
/// the norm of the residual, so the diagonal of `r` comes out positive and
/// the factorization is unique.
pub fn qr_positive_into<T: Real>(
    a: &Matrix<T>,
    q: &mut Matrix<T>,
    r: &mut Matrix<T>,
) -> Result<(), LinalgError> {
    let (n, m) = a.shape();
    debug_assert_eq!(q.shape(), (n, m));
    debug_assert_eq!(r.shape(), (m, m));
    if !a.is_finite() {
        return Err(LinalgError::NonFinite { what: "QR input" });
    }
    let threshold = T::rank_tolerance() * a.frobenius_norm();
    r.fill(T::zero());
    q.as_mut_slice().copy_from_slice(a.as_slice());
    for j in 0..m {
        for _pass in 0..2 {
            for i in 0..j {
                let (done, rest) = q.as_mut_slice().split_at_mut(j * n);
                let qi = &done[i * n..(i + 1) * n];
                let vj = &mut rest[..n];
                let proj = dot(qi, vj);
                r[(i, j)] += proj;
                axpy(-proj, qi, vj);
            }
        }
        let pivot = norm(q.col(j));
        if pivot.is_nan() || pivot <= threshold {
            return Err(LinalgError::RankDeficient {
                column: j,
                pivot: pivot.to_f64_lossy(),
                threshold: threshold.to_f64_lossy(),
            });
        }
        r[(j, j)] = pivot;
        let inv = pivot.recip();
        q.col_mut(j).iter_mut().for_each(|x| *x *= inv);
    }
    Ok(())
}

/// Inverse of an upper-triangular matrix by back substitution.
pub fn upper_tri_inverse<T: Real>(r: &Matrix<T>) -> Result<Matrix<T>, LinalgError> {
    let (m, c) = r.shape();
    if m != c {
        return Err(LinalgError::DimensionMismatch {
            expected: (m, m),
            got: (m, c),
        });
    }
    let mut out = Matrix::zeros(m, m);
    upper_tri_inverse_into(r, &mut out)?;
    Ok(out)
}

pub fn upper_tri_inverse_into<T: Real>(
    r: &Matrix<T>,
    out: &mut Matrix<T>,
) -> Result<(), LinalgError> {
    let m = r.rows();
    debug_assert_eq!(out.shape(), (m, m));
    let tol = T::rank_tolerance();
    for i in 0..m {
        let d = r[(i, i)];
        if d.is_nan() || d.abs() <= tol {
            return Err(LinalgError::Singular {
                index: i,
                value: d.to_f64_lossy(),
            });
        }
    }
    out.fill(T::zero());
    for j in 0..m {
        out[(j, j)] = r[(j, j)].recip();
        for i in (0..j).rev() {
            let mut s = T::zero();
            for k in (i + 1)..=j {
                s += r[(i, k)] * out[(k, j)];
            }
            out[(i, j)] = -s / r[(i, i)];
        }
    }
    Ok(())
}

/// Congruence `A -> Sᵀ A S` applied component-wise to a packed symmetric
/// family of vectors.
///
/// `packed` is `n x m(m+1)/2`: column `sym_index(i, j)` holds the vector
/// `a^{ij}`. For each component `s`, the symmetric `m x m` matrix built from
/// the `s`-th entries is replaced by `Sᵀ A S` where `S = scale`. Only `i >= j`
/// is stored, so the output is symmetric by construction.
pub fn congruence_rescale<T: Real>(packed: &Matrix<T>, scale: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(packed.rows(), packed.cols());
    let m = scale.rows();
    let mut scratch = CongruenceScratch::new(m);
    congruence_rescale_into(packed, scale, &mut out, &mut scratch);
    out
}

/// Reusable `m x m` buffers for [`congruence_rescale_into`].
#[derive(Debug, Clone)]
pub struct CongruenceScratch<T> {
    full: Matrix<T>,
    half: Matrix<T>,
}

impl<T: Real> CongruenceScratch<T> {
    pub fn new(m: usize) -> Self {
        Self {
            full: Matrix::zeros(m, m),
            half: Matrix::zeros(m, m),
        }
    }
}

pub fn congruence_rescale_into<T: Real>(
    packed: &Matrix<T>,
    scale: &Matrix<T>,
    out: &mut Matrix<T>,
    scratch: &mut CongruenceScratch<T>,
) {
    let m = scale.rows();
    let n = packed.rows();
    debug_assert_eq!(packed.cols(), packed_len(m));
    debug_assert_eq!(out.shape(), packed.shape());
    for s in 0..n {
        for i in 0..m {
            for j in 0..=i {
                let v = packed[(s, sym_index(i, j))];
                scratch.full[(i, j)] = v;
                scratch.full[(j, i)] = v;
            }
        }
        // half = A S
        scratch.full.matmul_into(scale, &mut scratch.half);
        // out_ij = sum_p S_pi half_pj, lower triangle only
        for i in 0..m {
            for j in 0..=i {
                let mut acc = T::zero();
                for p in 0..m {
                    acc += scale[(p, i)] * scratch.half[(p, j)];
                }
                out[(s, sym_index(i, j))] = acc;
            }
        }
    }
}
