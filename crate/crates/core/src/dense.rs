//! Dense double-precision matrices and the handful of factorizations the
//! closed-form solvers need.
//!
//! Everything here is sized for the small side of the problem: L×L systems
//! on the fast path, and I×I systems only on the explicit (verification)
//! path, which is bounded by [`dense_limit`].

use std::fmt;
use std::ops::{Index, IndexMut};
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sparse::InteractionMatrix;

/// Default cap on the side length of square dense matrices built from the
/// item space.
pub const DEFAULT_DENSE_LIMIT: usize = 20_000;

static DENSE_LIMIT: AtomicUsize = AtomicUsize::new(DEFAULT_DENSE_LIMIT);

/// Current cap on I for routines that materialize I×I matrices.
pub fn dense_limit() -> usize {
    DENSE_LIMIT.load(Ordering::Relaxed)
}

pub fn set_dense_limit(limit: usize) {
    DENSE_LIMIT.store(limit, Ordering::Relaxed);
}

pub(crate) fn check_dense_limit(n: usize, what: &'static str) -> Result<()> {
    let limit = dense_limit();
    if n > limit {
        return Err(Error::param(
            "dense_limit",
            format!("{what} needs a dense {n}x{n} matrix but the dense limit is {limit}"),
        ));
    }
    Ok(())
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(r)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        DenseMatrix { rows, cols, values }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
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

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for (c, &v) in self.row(r).iter().enumerate() {
                out.values[c * self.rows + r] = v;
            }
        }
        out
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        if rhs.cols == 0 {
            return Ok(out);
        }
        out.values
            .par_chunks_mut(rhs.cols)
            .enumerate()
            .for_each(|(r, out_row)| {
                for (k, &a) in self.row(r).iter().enumerate() {
                    if a != 0.0 {
                        for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                            *o += a * b;
                        }
                    }
                }
            });
        Ok(out)
    }

    /// `self · rhsᵀ`, i.e. dot products between rows of both operands.
    pub fn matmul_t(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != rhs.cols {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.rows);
        if rhs.rows == 0 {
            return Ok(out);
        }
        out.values
            .par_chunks_mut(rhs.rows)
            .enumerate()
            .for_each(|(r, out_row)| {
                let a = self.row(r);
                for (c, o) in out_row.iter_mut().enumerate() {
                    *o = dot(a, rhs.row(c));
                }
            });
        Ok(out)
    }

    /// `selfᵀ · rhs`, accumulated over shared rows.
    pub fn t_matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let b = rhs.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a != 0.0 {
                    for (o, &bv) in out.row_mut(i).iter_mut().zip(b) {
                        *o += a * bv;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(rhs, |a, b| a - b)
    }

    fn zip_with(&self, rhs: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> Result<DenseMatrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::Shape(format!(
                "element-wise op on {:?} and {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .zip(&rhs.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_to_diag(&mut self, s: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += s;
        }
    }

    /// Multiplies column `c` by `d[c]`, i.e. `self · diagMat(d)`.
    pub fn scale_cols(&mut self, d: &[f64]) {
        assert_eq!(d.len(), self.cols);
        for r in 0..self.rows {
            for (v, &s) in self.row_mut(r).iter_mut().zip(d) {
                *v *= s;
            }
        }
    }

    /// Multiplies row `r` by `d[r]`, i.e. `diagMat(d) · self`.
    pub fn scale_rows(&mut self, d: &[f64]) {
        assert_eq!(d.len(), self.rows);
        for (r, &s) in d.iter().enumerate() {
            self.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(r)) {
                *s += v;
            }
        }
        sums
    }

    /// Largest |M_ij − M_ji| relative to max |M_ij|.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for r in 0..self.rows {
            for c in r + 1..self.cols {
                worst = worst.max((self[(r, c)] - self[(c, r)]).abs());
            }
        }
        worst / scale
    }

    pub fn symmetrize(&mut self) {
        for r in 0..self.rows {
            for c in r + 1..self.cols {
                let m = 0.5 * (self[(r, c)] + self[(c, r)]);
                self[(r, c)] = m;
                self[(c, r)] = m;
            }
        }
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.values[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.values[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn factor(m: &DenseMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Shape(format!("cholesky of {:?}", m.shape())));
        }
        let n = m.rows();
        let mut lower = vec![0.0; n * n];
        for j in 0..n {
            let mut d = m[(j, j)];
            for k in 0..j {
                d -= lower[j * n + k] * lower[j * n + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let d = d.sqrt();
            lower[j * n + j] = d;
            for i in j + 1..n {
                let s = m[(i, j)] - dot(&lower[i * n..i * n + j], &lower[j * n..j * n + j]);
                lower[i * n + j] = s / d;
            }
        }
        Ok(Cholesky { n, lower })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `M x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            let s = b[i] - dot(&self.lower[i * n..i * n + i], &b[..i]);
            b[i] = s / self.lower[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.lower[k * n + i] * b[k];
            }
            b[i] = s / self.lower[i * n + i];
        }
    }

    /// Solves `M X = B` column by column.
    pub fn solve(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if b.rows() != self.n {
            return Err(Error::Shape(format!(
                "rhs has {} rows, system has {}",
                b.rows(),
                self.n
            )));
        }
        // Work on Bᵀ so each right-hand side is contiguous.
        let mut bt = b.transpose();
        if self.n > 0 {
            bt.values_mut()
                .par_chunks_mut(self.n)
                .for_each(|col| self.solve_in_place(col));
        }
        Ok(bt.transpose())
    }
}

/// Solves `M S = B` for symmetric positive-definite `M` by Cholesky.
pub fn spd_solve(m: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if !m.is_square() {
        return Err(Error::Shape(format!("spd_solve on {:?}", m.shape())));
    }
    if m.rows() != b.rows() {
        return Err(Error::Shape(format!(
            "spd_solve: system {}x{}, rhs {}x{}",
            m.rows(),
            m.cols(),
            b.rows(),
            b.cols()
        )));
    }
    check_dense_limit(m.rows(), "spd_solve")?;
    let asym = m.asymmetry();
    if asym > 1e-9 {
        return Err(Error::Contract(format!(
            "spd_solve needs a symmetric matrix (relative asymmetry {asym:e})"
        )));
    }
    Cholesky::factor(m)?.solve(b)
}

/// Solves a general square system `M S = B` by LU with partial pivoting.
pub fn lu_solve(m: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if !m.is_square() || m.rows() != b.rows() {
        return Err(Error::Shape(format!(
            "lu_solve: system {:?}, rhs {:?}",
            m.shape(),
            b.shape()
        )));
    }
    let n = m.rows();
    let mut a = m.clone();
    let mut x = b.clone();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for k in 0..n {
        let (p, pivot) = (k..n)
            .map(|r| (r, a[(r, k)].abs()))
            .fold(
                (k, -1.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if pivot <= scale * 1e-14 {
            return Err(Error::Numeric(format!(
                "singular system in lu_solve (column {k}, pivot {pivot:e})"
            )));
        }
        if p != k {
            for c in 0..n {
                a.values.swap(k * n + c, p * n + c);
            }
            for c in 0..x.cols() {
                let w = x.cols();
                x.values.swap(k * w + c, p * w + c);
            }
        }
        let akk = a[(k, k)];
        for r in k + 1..n {
            let f = a[(r, k)] / akk;
            if f == 0.0 {
                continue;
            }
            a[(r, k)] = 0.0;
            for c in k + 1..n {
                a[(r, c)] -= f * a[(k, c)];
            }
            for c in 0..x.cols() {
                x[(r, c)] -= f * x[(k, c)];
            }
        }
    }
    for k in (0..n).rev() {
        for c in 0..x.cols() {
            let mut s = x[(k, c)];
            for j in k + 1..n {
                s -= a[(k, j)] * x[(j, c)];
            }
            x[(k, c)] = s / a[(k, k)];
        }
    }
    Ok(x)
}

/// Eigenvalues (ascending) and matching unit eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct EigPairs {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

impl EigPairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn vector(&self, j: usize) -> Vec<f64> {
        self.vectors.col(j)
    }
}

/// Flips `v` so its first non-negligible component is positive.
pub(crate) fn canonical_sign(v: &mut [f64]) {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return;
    }
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-10 * scale) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Full symmetric eigendecomposition, ascending, sign-normalized.
pub fn symmetric_eigen(m: &DenseMatrix) -> Result<EigPairs> {
    if !m.is_square() {
        return Err(Error::Shape(format!("eigen of {:?}", m.shape())));
    }
    let asym = m.asymmetry();
    if asym > 1e-9 {
        return Err(Error::Contract(format!(
            "symmetric eigensolver given a non-symmetric matrix (relative asymmetry {asym:e})"
        )));
    }
    let n = m.rows();
    if n == 0 {
        return Ok(EigPairs {
            values: Vec::new(),
            vectors: DenseMatrix::zeros(0, 0),
        });
    }
    let mut sym = m.clone();
    sym.symmetrize();
    let max_iter = 100 * n.max(10);
    let eig = SymmetricEigen::try_new(sym.to_nalgebra(), f64::EPSILON, max_iter).ok_or_else(
        || {
            Error::Numeric(format!(
                "symmetric eigensolver did not converge on a {n}x{n} matrix within {max_iter} iterations"
            ))
        },
    )?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let values = order.iter().map(|&j| eig.eigenvalues[j]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(src).iter().copied().collect();
        let norm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        canonical_sign(&mut v);
        for (r, x) in v.into_iter().enumerate() {
            vectors[(r, dst)] = x;
        }
    }
    Ok(EigPairs { values, vectors })
}

/// The `k` eigenpairs with smallest eigenvalues, ascending.
pub fn smallest_eigenpairs(m: &DenseMatrix, k: usize) -> Result<EigPairs> {
    if k > m.rows() {
        return Err(Error::param(
            "k",
            format!(
                "asked for {k} eigenpairs of a {}x{} matrix",
                m.rows(),
                m.cols()
            ),
        ));
    }
    let full = symmetric_eigen(m)?;
    Ok(take_columns(&full, 0..k))
}

/// The `k` eigenpairs with largest eigenvalues, descending.
pub fn largest_eigenpairs(m: &DenseMatrix, k: usize) -> Result<EigPairs> {
    if k > m.rows() {
        return Err(Error::param(
            "k",
            format!(
                "asked for {k} eigenpairs of a {}x{} matrix",
                m.rows(),
                m.cols()
            ),
        ));
    }
    let full = symmetric_eigen(m)?;
    let n = full.len();
    Ok(take_columns(&full, (n - k..n).rev()))
}

fn take_columns(full: &EigPairs, cols: impl Iterator<Item = usize>) -> EigPairs {
    let cols: Vec<usize> = cols.collect();
    let n = full.vectors.rows();
    let mut vectors = DenseMatrix::zeros(n, cols.len());
    for (dst, &src) in cols.iter().enumerate() {
        for r in 0..n {
            vectors[(r, dst)] = full.vectors[(r, src)];
        }
    }
    EigPairs {
        values: cols.iter().map(|&j| full.values[j]).collect(),
        vectors,
    }
}

/// Orthonormalizes the rows of an L×n matrix (L ≤ n) with twice-applied
/// modified Gram–Schmidt. Output rows follow the sign convention.
pub fn row_orthonormalize(v: &DenseMatrix) -> Result<DenseMatrix> {
    let (l, n) = v.shape();
    if l > n {
        return Err(Error::RankDeficient { row: n, norm: 0.0 });
    }
    let mut out = v.clone();
    for r in 0..l {
        let original = dot(v.row(r), v.row(r)).sqrt();
        let mut row = out.row(r).to_vec();
        for _ in 0..2 {
            for prev in 0..r {
                let p = out.row(prev);
                let c = dot(&row, p);
                for (x, &y) in row.iter_mut().zip(p) {
                    *x -= c * y;
                }
            }
        }
        let norm = dot(&row, &row).sqrt();
        if !(norm > 1e-10 * original.max(f64::MIN_POSITIVE)) || original == 0.0 {
            return Err(Error::RankDeficient { row: r, norm });
        }
        row.iter_mut().for_each(|x| *x /= norm);
        canonical_sign(&mut row);
        out.row_mut(r).copy_from_slice(&row);
    }
    Ok(out)
}

/// Leading `l` right singular vectors of X as rows (L×I), ordered by
/// descending singular value. Goes through the dense item Gram matrix.
pub fn top_right_singular_vectors(x: &InteractionMatrix, l: usize) -> Result<DenseMatrix> {
    let n = x.n_items();
    if l > n {
        return Err(Error::param(
            "latent_dim",
            format!("asked for {l} singular vectors of a matrix with {n} columns"),
        ));
    }
    check_dense_limit(n, "top_right_singular_vectors")?;
    let gram = x.gram();
    let top = largest_eigenpairs(&gram, l)?;
    Ok(top.vectors.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        let a = random(n, n, rng);
        let mut m = a.t_matmul(&a).unwrap();
        m.add_to_diag(1.0);
        m
    }

    /// Cyclic Jacobi eigenvalue iteration; slow but independent of nalgebra.
    fn jacobi_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
        let n = m.rows();
        let mut a = m.clone();
        for _sweep in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a[(p, q)] * a[(p, q)];
                }
            }
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
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
                }
            }
        }
        let mut vals = a.diag();
        vals.sort_by(f64::total_cmp);
        vals
    }

    #[test]
    fn spd_solve_identity_and_scaled_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random(4, 3, &mut rng);
        let s = spd_solve(&DenseMatrix::identity(4), &b).unwrap();
        assert!(s.max_abs_diff(&b) < 1e-15);

        let two = DenseMatrix::identity(3).scale(2.0);
        let s = spd_solve(&two, &DenseMatrix::identity(3)).unwrap();
        assert!(s.max_abs_diff(&DenseMatrix::identity(3).scale(0.5)) < 1e-15);
    }

    #[test]
    fn spd_solve_residual_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..100 {
            let n = if trial == 0 {
                20
            } else {
                rng.random_range(1..25)
            };
            let m = random_spd(n, &mut rng);
            let b = random(n, rng.random_range(1..6), &mut rng);
            let s = spd_solve(&m, &b).unwrap();
            let back = m.matmul(&s).unwrap();
            assert!(back.max_abs_diff(&b) <= 1e-8 * b.max_abs(), "trial {trial}");
        }
    }

    #[test]
    fn spd_solve_rejects_indefinite() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let err = spd_solve(&m, &DenseMatrix::identity(2)).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { pivot: 1, .. }));
    }

    #[test]
    fn lu_solve_matches_multiply_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = random(12, 12, &mut rng);
        m.add_to_diag(3.0);
        let b = random(12, 4, &mut rng);
        let x = lu_solve(&m, &b).unwrap();
        assert!(m.matmul(&x).unwrap().max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn smallest_eigenpairs_of_diagonal() {
        let m = DenseMatrix::from_diag(&[3.0, 1.0, 2.0]);
        let e = smallest_eigenpairs(&m, 2).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0]);
        assert_eq!(e.vector(0), vec![0.0, 1.0, 0.0]);
        assert_eq!(e.vector(1), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn smallest_eigenpair_of_identity_is_a_unit_vector() {
        let m = DenseMatrix::identity(5);
        let e = smallest_eigenpairs(&m, 1).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        let v = e.vector(0);
        assert!((dot(&v, &v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigenpairs_agree_with_jacobi_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(15, 15, &mut rng);
        let m = a.add(&a.transpose()).unwrap();
        let oracle = jacobi_eigenvalues(&m);
        let e = smallest_eigenpairs(&m, 15).unwrap();
        for (got, want) in e.values.iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
        let k = 6;
        let small = smallest_eigenpairs(&m, k).unwrap();
        assert_eq!(small.values, e.values[..k].to_vec());
        for j in 0..k {
            let v = small.vector(j);
            let mv: Vec<f64> = (0..15).map(|r| dot(m.row(r), &v)).collect();
            let resid: f64 = mv
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - small.values[j] * b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(resid <= 1e-8 * m.max_abs());
            assert!((dot(&v, &v).sqrt() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn orthonormalize_scaled_axes() {
        let v = DenseMatrix::from_rows(&[vec![2.0, 0.0, 0.0], vec![0.0, 3.0, 0.0]]).unwrap();
        let o = row_orthonormalize(&v).unwrap();
        let want = DenseMatrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        assert!(o.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn orthonormalize_random_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random(8, 50, &mut rng);
        let o = row_orthonormalize(&v).unwrap();
        let gram = o.matmul_t(&o).unwrap();
        assert!(gram.max_abs_diff(&DenseMatrix::identity(8)) < 1e-9);
        // Each original row lies in the span of the output rows.
        let coeffs = v.matmul_t(&o).unwrap();
        let projected = coeffs.matmul(&o).unwrap();
        assert!(projected.max_abs_diff(&v) < 1e-9);
        // Idempotent up to the sign convention, which is already applied.
        let again = row_orthonormalize(&o).unwrap();
        assert!(again.max_abs_diff(&o) < 1e-12);
    }

    #[test]
    fn orthonormalize_rejects_dependent_rows() {
        let v = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]]).unwrap();
        assert!(matches!(
            row_orthonormalize(&v),
            Err(Error::RankDeficient { row: 1, .. })
        ));
    }

    #[test]
    fn singular_vectors_of_single_column() {
        let x = InteractionMatrix::from_pairs(4, 3, vec![(0, 1), (2, 1), (3, 1)]).unwrap();
        let w = top_right_singular_vectors(&x, 1).unwrap();
        assert_eq!(w.row(0), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn singular_vectors_of_identity_are_orthonormal() {
        let x = InteractionMatrix::identity(6);
        let w = top_right_singular_vectors(&x, 3).unwrap();
        let gram = w.matmul_t(&w).unwrap();
        assert!(gram.max_abs_diff(&DenseMatrix::identity(3)) < 1e-10);
    }

    #[test]
    fn singular_values_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut pairs = Vec::new();
        for u in 0..60 {
            for i in 0..25 {
                if rng.random_bool(0.2) {
                    pairs.push((u, i));
                }
            }
        }
        let x = InteractionMatrix::from_pairs(60, 25, pairs).unwrap();
        let w = top_right_singular_vectors(&x, 5).unwrap();
        let dense = x.to_dense();
        let gram = dense.t_matmul(&dense).unwrap();
        let oracle = jacobi_eigenvalues(&gram);
        for r in 0..5 {
            let v = w.row(r);
            let gv: Vec<f64> = (0..25).map(|i| dot(gram.row(i), v)).collect();
            let lambda = dot(v, &gv);
            assert!(
                (lambda - oracle[24 - r]).abs() < 1e-8,
                "{lambda} vs {}",
                oracle[24 - r]
            );
        }
    }
}
