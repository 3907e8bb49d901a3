//! Dense symmetric linear algebra: Cholesky factorization, SPD solves,
//! log-determinants, cyclic Jacobi eigendecomposition and PSD square roots.
//!
//! Everything here is a pure function of its inputs. Positive-definiteness
//! failures are reported, never repaired; regularization belongs to
//! [`crate::distributions`].

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Absolute tolerance used when validating symmetry.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Cap on cyclic Jacobi sweeps.
pub const MAX_JACOBI_SWEEPS: usize = 100;
/// Relative pivot threshold for [`cholesky`], scaled by `dim · max diag`.
pub const PIVOT_TOL: f64 = 1e-12;
/// Relative band below zero inside which [`sqrtm_psd`] clamps eigenvalues.
pub const PSD_CLAMP_TOL: f64 = 1e-10;

/// General dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from row-major values.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
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
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
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

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: v.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        math::sqrt(self.data.iter().map(|x| x * x).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Symmetric square matrix, stored densely in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Validates symmetry (absolute tolerance [`SYMMETRY_TOL`]) and finiteness.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSpec("matrix dimension must be positive"));
        }
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                actual: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("symmetric matrix"));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if math::abs(data[i * dim + j] - data[j * dim + i]) > SYMMETRY_TOL {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(SymMatrix { dim, data })
    }

    /// Builds from the lower triangle of `f` (`f(i, j)` with `j <= i`),
    /// mirroring it so the result is exactly symmetric.
    pub fn from_lower_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let v = f(i, j);
                data[i * dim + j] = v;
                data[j * dim + i] = v;
            }
        }
        SymMatrix { dim, data }
    }

    /// Symmetrizes an arbitrary square matrix as `(m + mᵀ) / 2`.
    pub fn symmetrize(m: &Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::DimensionMismatch {
                expected: m.rows(),
                actual: m.cols(),
            });
        }
        Ok(Self::from_lower_fn(m.rows(), |i, j| {
            0.5 * (m.get(i, j) + m.get(j, i))
        }))
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        Self::from_lower_fn(dim, |i, j| if i == j { s } else { 0.0 })
    }

    pub fn diag(values: &[f64]) -> Self {
        Self::from_lower_fn(values.len(), |i, j| if i == j { values[i] } else { 0.0 })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        math::sqrt(self.data.iter().map(|x| x * x).sum())
    }

    /// Squared Frobenius norm of `self − other`.
    pub fn frobenius_dist_sq(&self, other: &SymMatrix) -> Result<f64> {
        check_dim(self.dim, other.dim)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.dim,
            cols: self.dim,
            data: self.data.clone(),
        }
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, v.len())?;
        Ok((0..self.dim).map(|i| dot(self.row(i), v)).collect())
    }

    /// Congruence `m · self · mᵀ`, returned exactly symmetric.
    pub fn congruence(&self, m: &Matrix) -> Result<SymMatrix> {
        check_dim(self.dim, m.cols())?;
        let ms = m.matmul(&self.to_matrix())?;
        let out = ms.matmul(&m.transpose())?;
        SymMatrix::symmetrize(&out)
    }
}

/// Lower-triangular Cholesky factor with strictly positive diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerTriangular {
    dim: usize,
    data: Vec<f64>,
}

impl LowerTriangular {
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.dim,
            cols: self.dim,
            data: self.data.clone(),
        }
    }

    /// `ln det(L·Lᵀ) = 2 Σ ln L[i][i]`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim).map(|i| math::ln(self.get(i, i))).sum::<f64>()
    }

    /// Solves `(L·Lᵀ) x = b` for a vector `b`.
    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, b.len())?;
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        Ok(x)
    }

    /// Solves `(L·Lᵀ) X = B` column by column; `B` must have `dim` rows.
    pub fn solve_mat(&self, b: &Matrix) -> Result<Matrix> {
        check_dim(self.dim, b.rows())?;
        let mut out = Matrix::zeros(b.rows(), b.cols());
        let mut col = vec![0.0; self.dim];
        for j in 0..b.cols() {
            for (i, c) in col.iter_mut().enumerate() {
                *c = b.get(i, j);
            }
            self.solve_in_place(&mut col);
            for (i, &c) in col.iter().enumerate() {
                out.set(i, j, c);
            }
        }
        Ok(out)
    }

    /// `(L·Lᵀ)⁻¹` as a symmetric matrix.
    pub fn inverse(&self) -> SymMatrix {
        let inv = self
            .solve_mat(&Matrix::identity(self.dim))
            .expect("identity has matching rows");
        SymMatrix::symmetrize(&inv).expect("square")
    }

    /// `trace((L·Lᵀ)⁻¹ · B)`.
    pub fn trace_solve(&self, b: &SymMatrix) -> Result<f64> {
        check_dim(self.dim, b.dim())?;
        let x = self.solve_mat(&b.to_matrix())?;
        Ok((0..self.dim).map(|i| x.get(i, i)).sum())
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.dim;
        // forward: L y = b
        for i in 0..n {
            let row = &self.data[i * n..i * n + i];
            let s = dot(row, &x[..i]);
            x[i] = (x[i] - s) / self.get(i, i);
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.get(k, i) * x[k];
            }
            x[i] = s / self.get(i, i);
        }
    }
}

/// Cholesky factorization `a = L·Lᵀ`.
///
/// Fails with [`Error::NotPositiveDefinite`] when a pivot falls to
/// `dim · 1e-12 · max diag` or below.
pub fn cholesky(a: &SymMatrix) -> Result<LowerTriangular> {
    let n = a.dim();
    let max_diag = (0..n).map(|i| a.get(i, i)).fold(0.0_f64, f64::max);
    let threshold = n as f64 * PIVOT_TOL * max_diag;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let s = dot(&l[j * n..j * n + j], &l[j * n..j * n + j]);
        let pivot = a.get(j, j) - s;
        if !(pivot > threshold) {
            return Err(Error::NotPositiveDefinite { row: j, pivot });
        }
        let d = math::sqrt(pivot);
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let s = dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            l[i * n + j] = (a.get(i, j) - s) / d;
        }
    }
    Ok(LowerTriangular { dim: n, data: l })
}

/// Log-determinant of `L·Lᵀ` from its Cholesky factor.
pub fn log_det(l: &LowerTriangular) -> f64 {
    l.log_det()
}

/// Solves `(L·Lᵀ) X = B` where `B` is a matrix with `dim` rows.
pub fn spd_solve(l: &LowerTriangular, b: &Matrix) -> Result<Matrix> {
    l.solve_mat(b)
}

/// `trace((L·Lᵀ)⁻¹ B)`.
pub fn trace_solve(l: &LowerTriangular, b: &SymMatrix) -> Result<f64> {
    l.trace_solve(b)
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as the columns of the returned matrix.
pub fn eigh(a: &SymMatrix) -> Result<(Vec<f64>, Matrix)> {
    let (values, vectors) = jacobi(a, true)?;
    Ok((values, vectors.unwrap_or_else(|| Matrix::identity(a.dim()))))
}

/// Eigenvalues only, ascending.
pub fn eigvalsh(a: &SymMatrix) -> Result<Vec<f64>> {
    Ok(jacobi(a, false)?.0)
}

fn jacobi(a: &SymMatrix, want_vectors: bool) -> Result<(Vec<f64>, Option<Matrix>)> {
    let n = a.dim();
    let mut m = a.as_slice().to_vec();
    let mut v = want_vectors.then(|| Matrix::identity(n));
    let norm = a.frobenius_norm();
    let target = 1e-15 * norm;

    let mut converged = false;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        if math::sqrt(2.0 * off) <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (math::abs(theta) + math::sqrt(theta * theta + 1.0));
                let c = 1.0 / math::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                if let Some(v) = v.as_mut() {
                    for k in 0..n {
                        let vkp = v.get(k, p);
                        let vkq = v.get(k, q);
                        v.set(k, p, c * vkp - s * vkq);
                        v.set(k, q, s * vkp + c * vkq);
                    }
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            sweeps: MAX_JACOBI_SWEEPS,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = v.map(|v| Matrix::from_fn(n, n, |r, c| v.get(r, order[c])));
    Ok((values, vectors))
}

/// Principal square root of a symmetric positive semidefinite matrix.
///
/// Eigenvalues within `1e-10 · ‖a‖_F` below zero are clamped to zero; anything
/// more negative is [`Error::NotPsd`].
pub fn sqrtm_psd(a: &SymMatrix) -> Result<SymMatrix> {
    let (values, vectors) = eigh(a)?;
    let roots = clamped_roots(&values, a.frobenius_norm())?;
    let n = a.dim();
    Ok(SymMatrix::from_lower_fn(n, |i, j| {
        (0..n)
            .map(|k| vectors.get(i, k) * roots[k] * vectors.get(j, k))
            .sum()
    }))
}

/// `trace(a^{1/2})` for symmetric PSD `a`, skipping the reconstruction.
pub fn trace_sqrtm_psd(a: &SymMatrix) -> Result<f64> {
    let values = eigvalsh(a)?;
    Ok(clamped_roots(&values, a.frobenius_norm())?.iter().sum())
}

fn clamped_roots(values: &[f64], norm: f64) -> Result<Vec<f64>> {
    let band = PSD_CLAMP_TOL * norm;
    values
        .iter()
        .map(|&l| {
            if l < -band {
                Err(Error::NotPsd { eigenvalue: l })
            } else {
                Ok(math::sqrt(l.max(0.0)))
            }
        })
        .collect()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sym(dim: usize, v: &[f64]) -> SymMatrix {
        SymMatrix::new(dim, v.to_vec()).unwrap()
    }

    #[test]
    fn cholesky_examples() {
        let l = cholesky(&SymMatrix::diag(&[4.0, 9.0])).unwrap();
        assert_eq!(l.to_matrix().as_slice(), &[2.0, 0.0, 0.0, 3.0]);

        let l = cholesky(&sym(2, &[4.0, 2.0, 2.0, 5.0])).unwrap();
        assert_eq!(l.to_matrix().as_slice(), &[2.0, 0.0, 1.0, 2.0]);

        let l = cholesky(&SymMatrix::identity(5)).unwrap();
        assert_eq!(l.to_matrix(), Matrix::identity(5));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let err = cholesky(&sym(2, &[1.0, 2.0, 2.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { row: 1, .. }));
        let err = cholesky(&SymMatrix::diag(&[1.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
    }

    #[test]
    fn new_rejects_asymmetric_and_nan() {
        assert!(matches!(
            SymMatrix::new(2, vec![1.0, 0.5, 0.4, 1.0]),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(matches!(
            SymMatrix::new(1, vec![f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn log_det_examples() {
        assert_eq!(cholesky(&SymMatrix::identity(3)).unwrap().log_det(), 0.0);
        let l = cholesky(&SymMatrix::diag(&[4.0, 9.0])).unwrap();
        assert_abs_diff_eq!(log_det(&l), libm::log(36.0), epsilon = 1e-14);
        let l = cholesky(&sym(2, &[4.0, 2.0, 2.0, 5.0])).unwrap();
        assert_abs_diff_eq!(log_det(&l), libm::log(16.0), epsilon = 1e-14);
    }

    #[test]
    fn solve_examples() {
        let b = [0.3, -1.2, 7.0];
        let l = cholesky(&SymMatrix::identity(3)).unwrap();
        assert_eq!(l.solve_vec(&b).unwrap(), b.to_vec());

        let l = cholesky(&SymMatrix::diag(&[4.0, 9.0])).unwrap();
        let x = l.solve_vec(&[4.0, 18.0]).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 2.0, epsilon = 1e-15);

        let l = cholesky(&sym(2, &[4.0, 2.0, 2.0, 5.0])).unwrap();
        let inv = spd_solve(&l, &Matrix::identity(2)).unwrap();
        let want = [5.0 / 16.0, -2.0 / 16.0, -2.0 / 16.0, 4.0 / 16.0];
        for (a, b) in inv.as_slice().iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }

        assert!(matches!(
            l.solve_vec(&[1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn trace_solve_examples() {
        let b = sym(2, &[1.0, 0.5, 0.5, 3.0]);
        let l = cholesky(&SymMatrix::identity(2)).unwrap();
        assert_abs_diff_eq!(trace_solve(&l, &b).unwrap(), 4.0, epsilon = 1e-15);

        let l = cholesky(&SymMatrix::diag(&[2.0, 4.0])).unwrap();
        let t = trace_solve(&l, &SymMatrix::diag(&[6.0, 8.0])).unwrap();
        assert_abs_diff_eq!(t, 5.0, epsilon = 1e-14);

        let l = cholesky(&sym(2, &[4.0, 2.0, 2.0, 5.0])).unwrap();
        let t = trace_solve(&l, &SymMatrix::identity(2)).unwrap();
        assert_abs_diff_eq!(t, 9.0 / 16.0, epsilon = 1e-15);

        assert!(trace_solve(&l, &SymMatrix::identity(3)).is_err());
    }

    #[test]
    fn eigh_examples() {
        let (vals, vecs) = eigh(&SymMatrix::diag(&[3.0, 1.0])).unwrap();
        assert_eq!(vals, vec![1.0, 3.0]);
        assert_eq!(vecs.as_slice(), &[0.0, 1.0, 1.0, 0.0]);

        let (vals, _) = eigh(&sym(2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        assert_abs_diff_eq!(vals[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(vals[1], 3.0, epsilon = 1e-14);

        let (vals, _) = eigh(&SymMatrix::identity(4)).unwrap();
        assert!(vals.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sqrtm_examples() {
        let r = sqrtm_psd(&SymMatrix::diag(&[4.0, 9.0])).unwrap();
        assert_eq!(r.as_slice(), &[2.0, 0.0, 0.0, 3.0]);
        let r = sqrtm_psd(&SymMatrix::identity(3)).unwrap();
        assert_eq!(r, SymMatrix::identity(3));
        let r = sqrtm_psd(&sym(2, &[5.0, 4.0, 4.0, 5.0])).unwrap();
        for (a, b) in r.as_slice().iter().zip([2.0, 1.0, 1.0, 2.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn sqrtm_clamps_tiny_negatives_and_rejects_real_ones() {
        let r = sqrtm_psd(&SymMatrix::diag(&[4.0, -1e-12])).unwrap();
        assert_eq!(r.get(1, 1), 0.0);
        assert!(matches!(
            sqrtm_psd(&SymMatrix::diag(&[4.0, -1e-3])),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn zero_matrix_eigh() {
        let z = SymMatrix::scaled_identity(3, 0.0);
        let (vals, _) = eigh(&z).unwrap();
        assert_eq!(vals, vec![0.0; 3]);
        assert_eq!(trace_sqrtm_psd(&z).unwrap(), 0.0);
    }
}
