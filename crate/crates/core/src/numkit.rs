//! Dense real linear algebra: row-major matrices, covariance, and symmetric /
//! generalized symmetric eigendecomposition by cyclic Jacobi rotations.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    Singular { row: usize, pivot: f64 },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("Jacobi iteration did not converge after {sweeps} sweeps (off-diagonal {off:e})")]
    NoConvergence { sweeps: usize, off: f64 },
}

pub type Result<T> = std::result::Result<T, NumError>;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    /// Wraps row-major `data`, rejecting a length mismatch or any non-finite value.
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(NumError::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumError::NonFinite { row: pos / cols.max(1), col: pos % cols.max(1) });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumError::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn diag(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
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
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[T]) {
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Rows picked by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: idx.len(), cols: self.cols, data }
    }

    /// Columns picked by index, in the given order.
    pub fn select_cols(&self, idx: &[usize]) -> Self {
        Self::from_fn(self.rows, idx.len(), |i, j| self[(i, idx[j])])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(NumError::Shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn col_means(&self) -> Vec<T> {
        let mut means = vec![T::zero(); self.cols];
        for i in 0..self.rows {
            for (m, &v) in means.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let n = T::of(self.rows.max(1) as f64);
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Subtracts `offsets[j]` from every entry of column `j`.
    pub fn sub_row_vector(&self, offsets: &[T]) -> Self {
        let mut out = self.clone();
        for i in 0..out.rows {
            for (v, &o) in out.row_mut(i).iter_mut().zip(offsets) {
                *v -= o;
            }
        }
        out
    }

    /// Adds `offsets[j]` to every entry of column `j`.
    pub fn add_row_vector(&self, offsets: &[T]) -> Self {
        let mut out = self.clone();
        for i in 0..out.rows {
            for (v, &o) in out.row_mut(i).iter_mut().zip(offsets) {
                *v += o;
            }
        }
        out
    }

    /// Maximum absolute asymmetry `|m_ij - m_ji|`.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        product(self, false, rhs, false)
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Self) -> Result<Self> {
        product(self, true, rhs, false)
    }

    /// `self · rhsᵀ` without materializing the transpose.
    pub fn matmul_t(&self, rhs: &Self) -> Result<Self> {
        product(self, false, rhs, true)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(NumError::Shape(format!("{}x{} times len {}", self.rows, self.cols, v.len())));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn cast<U: Scalar>(&self) -> Mat<U> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| U::of(v.as_f64())).collect() }
    }
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// `out = alpha * op(a) * op(b) + beta * out`, where `op` optionally transposes.
pub fn gemm_into<T: Scalar>(
    alpha: T,
    a: &Mat<T>,
    trans_a: bool,
    b: &Mat<T>,
    trans_b: bool,
    beta: T,
    out: &mut Mat<T>,
) -> Result<()> {
    let (m, k, rsa, csa) =
        if trans_a { (a.cols, a.rows, 1, a.cols) } else { (a.rows, a.cols, a.cols, 1) };
    let (k2, n, rsb, csb) =
        if trans_b { (b.cols, b.rows, 1, b.cols) } else { (b.rows, b.cols, b.cols, 1) };
    if k != k2 || out.rows != m || out.cols != n {
        return Err(NumError::Shape(format!(
            "cannot multiply {m}x{k} by {k2}x{n} into {}x{}",
            out.rows, out.cols
        )));
    }
    T::gemm(m, k, n, alpha, &a.data, rsa, csa, &b.data, rsb, csb, beta, &mut out.data, n, 1);
    Ok(())
}

fn product<T: Scalar>(a: &Mat<T>, ta: bool, b: &Mat<T>, tb: bool) -> Result<Mat<T>> {
    let m = if ta { a.cols } else { a.rows };
    let n = if tb { b.rows } else { b.cols };
    let mut out = Mat::zeros(m, n);
    gemm_into(T::one(), a, ta, b, tb, T::zero(), &mut out)?;
    Ok(out)
}

/// Sample covariance `Xcᵀ·Xc / (n-1)`; `Xc` is column-centered when `center` is set.
pub fn covariance<T: Scalar>(x: &Mat<T>, center: bool) -> Result<Mat<T>> {
    if x.rows < 2 {
        return Err(NumError::Dimension(format!("covariance needs at least 2 rows, got {}", x.rows)));
    }
    let xc = if center { x.sub_row_vector(&x.col_means()) } else { x.clone() };
    let mut cov = xc.t_matmul(&xc)?.scale(T::one() / T::of((x.rows - 1) as f64));
    symmetrize(&mut cov);
    Ok(cov)
}

fn symmetrize<T: Scalar>(m: &mut Mat<T>) {
    let half = T::of(0.5);
    for i in 0..m.rows {
        for j in (i + 1)..m.cols {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Eigenpairs sorted by descending eigenvalue; column `i` of `vectors` pairs
/// with `values[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EigResult<T> {
    pub values: Vec<T>,
    pub vectors: Mat<T>,
}

impl<T: Scalar> EigResult<T> {
    pub fn vector(&self, i: usize) -> Vec<T> {
        self.vectors.column(i)
    }
}

const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-8;

fn check_symmetric<T: Scalar>(m: &Mat<T>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(NumError::Shape(format!("{what} must be square, got {}x{}", m.rows, m.cols)));
    }
    let tol = T::of(SYMMETRY_TOL) * T::one().max(m.max_abs());
    if m.asymmetry() > tol {
        return Err(NumError::Shape(format!(
            "{what} is not symmetric (max asymmetry {:e})",
            m.asymmetry().as_f64()
        )));
    }
    Ok(())
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Each eigenvector is flipped so its largest-magnitude component (first one
/// on ties) is positive.
pub fn sym_eig<T: Scalar>(m: &Mat<T>) -> Result<EigResult<T>> {
    check_symmetric(m, "matrix")?;
    let n = m.rows;
    let mut a = m.clone();
    symmetrize(&mut a);
    let mut v = Mat::identity(n);
    let scale = a.frobenius_norm();
    let tol = T::jacobi_tol() * scale;

    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&a);
        if off <= tol {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(NumError::NoConvergence { sweeps, off: off.as_f64() });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
        sweeps += 1;
    }

    let values: Vec<T> = (0..n).map(|i| a[(i, i)]).collect();
    Ok(sorted_pairs(values, v))
}

fn off_diagonal_norm<T: Scalar>(a: &Mat<T>) -> T {
    let mut s = T::zero();
    for i in 0..a.rows {
        for j in 0..a.cols {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation zeroing `a[p][q]`; accumulates the rotation into `v`.
fn rotate<T: Scalar>(a: &mut Mat<T>, v: &mut Mat<T>, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == T::zero() {
        return;
    }
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    // Below rounding level of both diagonal entries: drop it outright.
    let eps = T::epsilon();
    if apq.abs() <= eps * app.abs() * T::of(0.5) && apq.abs() <= eps * aqq.abs() * T::of(0.5) {
        a[(p, q)] = T::zero();
        a[(q, p)] = T::zero();
        return;
    }
    let theta = (aqq - app) / (T::of(2.0) * apq);
    let t = if theta.abs() > T::of(1e150).min(T::max_value().sqrt()) {
        T::one() / (T::of(2.0) * theta)
    } else {
        theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt())
    };
    let c = T::one() / (t * t + T::one()).sqrt();
    let s = t * c;
    let n = a.rows;
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
    a[(p, q)] = T::zero();
    a[(q, p)] = T::zero();
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

fn sorted_pairs<T: Scalar>(values: Vec<T>, vectors: Mat<T>) -> EigResult<T> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
    let mut out = Mat::zeros(vectors.rows, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = vectors.column(src);
        canonical_sign(&mut col);
        out.set_column(dst, &col);
    }
    EigResult { values: order.iter().map(|&i| values[i]).collect(), vectors: out }
}

/// Flips `v` so that its largest-magnitude entry is positive.
pub fn canonical_sign<T: Scalar>(v: &mut [T]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < T::zero()) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Diagonal loading applied to `B` before solving `A v = λ B v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Ridge {
    /// No loading; `B` itself must be positive definite.
    None,
    /// `1e-6 · trace(B) / dim`.
    Auto,
    /// Explicit loading.
    Fixed(f64),
}

impl Ridge {
    pub fn amount<T: Scalar>(self, b: &Mat<T>) -> T {
        match self {
            Ridge::None => T::zero(),
            Ridge::Auto => T::of(1e-6) * b.trace() / T::of(b.rows.max(1) as f64),
            Ridge::Fixed(e) => T::of(e),
        }
    }
}

/// Solves `A v = λ B v` with the automatic ridge on `B`.
pub fn generalized_eig<T: Scalar>(a: &Mat<T>, b: &Mat<T>) -> Result<EigResult<T>> {
    generalized_eig_with(a, b, Ridge::Auto)
}

/// Solves `A v = λ (B + εI) v` by whitening with the Cholesky factor of the
/// loaded `B`. Returned vectors are orthonormal in the loaded `B` metric.
pub fn generalized_eig_with<T: Scalar>(a: &Mat<T>, b: &Mat<T>, ridge: Ridge) -> Result<EigResult<T>> {
    check_symmetric(a, "A")?;
    check_symmetric(b, "B")?;
    if a.rows != b.rows {
        return Err(NumError::Shape(format!("A is {0}x{0} but B is {1}x{1}", a.rows, b.rows)));
    }
    let n = a.rows;
    let mut loaded = b.clone();
    symmetrize(&mut loaded);
    let eps = ridge.amount(b);
    for i in 0..n {
        loaded[(i, i)] += eps;
    }
    let l = cholesky(&loaded)?;

    // C = L⁻¹ A L⁻ᵀ = L⁻¹ (L⁻¹ A)ᵀ since A is symmetric.
    let y = forward_solve(&l, a);
    let mut c = forward_solve(&l, &y.transpose());
    symmetrize(&mut c);
    let inner = sym_eig(&c)?;
    let mut vectors = Mat::zeros(n, n);
    for k in 0..n {
        let mut col = back_solve_transposed(&l, &inner.vector(k));
        canonical_sign(&mut col);
        vectors.set_column(k, &col);
    }
    Ok(EigResult { values: inner.values, vectors })
}

/// Lower-triangular `L` with `L Lᵀ = m`.
pub fn cholesky<T: Scalar>(m: &Mat<T>) -> Result<Mat<T>> {
    let n = m.rows;
    let mut l = Mat::zeros(n, n);
    let floor = T::epsilon() * T::one().max(m.max_abs());
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) {
            return Err(NumError::Singular { row: j, pivot: d.as_f64() });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L X = B` for lower-triangular `L`.
fn forward_solve<T: Scalar>(l: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    let n = l.rows;
    let mut x = b.clone();
    for col in 0..b.cols {
        for i in 0..n {
            let mut s = x[(i, col)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = s / l[(i, i)];
        }
    }
    x
}

/// Solves `Lᵀ x = w` for lower-triangular `L`.
fn back_solve_transposed<T: Scalar>(l: &Mat<T>, w: &[T]) -> Vec<T> {
    let n = l.rows;
    let mut x = w.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}
