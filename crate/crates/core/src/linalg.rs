//! Dense real matrices and the handful of kernels the rest of the crate needs.
//!
//! Everything is row-major `f64`. Matrices are small (d up to a few hundred),
//! so the kernels are straightforward loops rather than blocked BLAS-style code.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                write!(f, "{:>12.5e} ", self[(i, j)])?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Matrix::zeros(d, d);
        for i in 0..d {
            m.data[i * d + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let d = diag.len();
        let mut m = Matrix::zeros(d, d);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * d + i] = v;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting wrong lengths,
    /// empty shapes and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::dim("Matrix::from_vec", "positive shape", format!("{rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::dim("Matrix::from_vec", rows * cols, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Matrix::from_vec"));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Convenience constructor for literals in tests and examples.
    ///
    /// Panics on ragged rows.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn column(values: &[f64]) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn row(values: &[f64]) -> Self {
        Matrix {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
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

    pub fn scalar(v: f64) -> Self {
        Matrix {
            rows: 1,
            cols: 1,
            data: vec![v],
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
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Squared Frobenius norm, summed in storage order.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn dot(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "dot shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Checked product.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "matmul",
                format!("lhs cols == rhs rows ({})", self.cols),
                other.rows,
            ));
        }
        Ok(self.mul_unchecked(other))
    }

    fn mul_unchecked(&self, other: &Matrix) -> Matrix {
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * m..(p + 1) * m];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Matrix {
            rows: n,
            cols: m,
            data: out,
        }
    }

    /// `self * other^T` without materialising the transpose.
    pub fn mul_transpose(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "mul_transpose shape mismatch");
        Matrix::from_fn(self.rows, other.rows, |i, j| {
            self.row_slice(i)
                .iter()
                .zip(other.row_slice(j))
                .map(|(a, b)| a * b)
                .sum()
        })
    }

    /// `self^T * other` without materialising the transpose.
    pub fn transpose_mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "transpose_mul shape mismatch");
        let (n, m) = (self.cols, other.cols);
        let mut out = Matrix::zeros(n, m);
        for p in 0..self.rows {
            let arow = self.row_slice(p);
            let brow = other.row_slice(p);
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * m..(i + 1) * m];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `y = self * x` for a plain vector.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec shape mismatch");
        (0..self.rows)
            .map(|i| self.row_slice(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `y += self * x`.
    pub fn matvec_acc(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(self.cols, x.len(), "matvec shape mismatch");
        assert_eq!(self.rows, y.len(), "matvec shape mismatch");
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += self.row_slice(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `y = self^T * x`.
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "matvec_t shape mismatch");
        let mut y = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (yj, a) in y.iter_mut().zip(self.row_slice(i)) {
                *yj += a * xi;
            }
        }
        y
    }

    /// `self += alpha * u v^T`.
    pub fn rank1_update(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        assert_eq!(self.rows, u.len());
        assert_eq!(self.cols, v.len());
        for (i, &ui) in u.iter().enumerate() {
            let s = alpha * ui;
            if s == 0.0 {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, vj) in row.iter_mut().zip(v) {
                *r += s * vj;
            }
        }
    }

    /// `A^j` by binary exponentiation.
    pub fn pow(&self, j: u32) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::dim("pow", "square matrix", format!("{}x{}", self.rows, self.cols)));
        }
        let mut result = Matrix::identity(self.rows);
        let mut base = self.clone();
        let mut e = j;
        while e > 0 {
            if e & 1 == 1 {
                result = result.mul_unchecked(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul_unchecked(&base);
            }
        }
        Ok(result)
    }

    /// `[I, A, A^2, ..., A^max]`, each computed from the previous one.
    pub fn powers(&self, max: usize) -> Result<Vec<Matrix>> {
        if !self.is_square() {
            return Err(Error::dim("powers", "square matrix", format!("{}x{}", self.rows, self.cols)));
        }
        let mut out = Vec::with_capacity(max + 1);
        out.push(Matrix::identity(self.rows));
        for j in 1..=max {
            let next = out[j - 1].mul_unchecked(self);
            out.push(next);
        }
        Ok(out)
    }

    /// `‖A − Aᵀ‖_F`.
    pub fn asymmetry(&self) -> f64 {
        assert!(self.is_square(), "asymmetry of non-square matrix");
        let d = self.rows;
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                let diff = self[(i, j)] - self[(j, i)];
                s += diff * diff;
            }
        }
        s.sqrt()
    }

    pub fn symmetrized(&self) -> Matrix {
        assert!(self.is_square(), "symmetrize non-square matrix");
        Matrix::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    /// Panics on incompatible shapes; use [`Matrix::matmul`] for a checked product.
    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matrix product shape mismatch");
        self.mul_unchecked(rhs)
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "matrix sum shape mismatch");
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "matrix difference shape mismatch");
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

impl Neg for &Matrix {
    type Output = Matrix;
    fn neg(self) -> Matrix {
        self.scale(-1.0)
    }
}

/// Orthogonal eigendecomposition of a symmetric matrix, `A = V diag(λ) Vᵀ`.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Sorted by descending absolute value.
    pub eigenvalues: Vec<f64>,
    /// Columns are the eigenvectors, in the order of `eigenvalues`.
    pub eigenvectors: Matrix,
}

impl SymEig {
    pub fn reconstruct(&self) -> Matrix {
        let v = &self.eigenvectors;
        let scaled = Matrix::from_fn(v.rows(), v.cols(), |i, j| v[(i, j)] * self.eigenvalues[j]);
        scaled.mul_transpose(v)
    }
}

pub const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-12;

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let d = a.rows();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// The input is symmetrized as `(A + Aᵀ)/2` first. Iteration stops once the
/// off-diagonal Frobenius norm drops to `1e-12·‖A‖_F`.
pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    if !a.is_square() {
        return Err(Error::dim("sym_eig", "square matrix", format!("{}x{}", a.rows(), a.cols())));
    }
    let d = a.rows();
    let mut w = a.symmetrized();
    let mut v = Matrix::identity(d);
    let threshold = JACOBI_REL_TOL * w.norm();

    let mut converged = off_diagonal_norm(&w) <= threshold;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = w[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (w[(q, q)] - w[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                // W <- Jᵀ W J, columns then rows
                for k in 0..d {
                    let wkp = w[(k, p)];
                    let wkq = w[(k, q)];
                    w[(k, p)] = c * wkp - s * wkq;
                    w[(k, q)] = s * wkp + c * wkq;
                }
                for k in 0..d {
                    let wpk = w[(p, k)];
                    let wqk = w[(q, k)];
                    w[(p, k)] = c * wpk - s * wqk;
                    w[(q, k)] = s * wpk + c * wqk;
                }
                w[(p, q)] = 0.0;
                w[(q, p)] = 0.0;

                for k in 0..d {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        converged = off_diagonal_norm(&w) <= threshold;
    }
    if !converged {
        return Err(Error::Convergence {
            sweeps,
            off_norm: off_diagonal_norm(&w),
        });
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| w[(j, j)].abs().total_cmp(&w[(i, i)].abs()));
    let eigenvalues = order.iter().map(|&i| w[(i, i)]).collect();
    let eigenvectors = Matrix::from_fn(d, d, |r, c| v[(r, order[c])]);
    Ok(SymEig {
        eigenvalues,
        eigenvectors,
    })
}

pub const CHAR_POLY_MAX_DIM: usize = 32;

/// Monic characteristic polynomial `z^d + ρ_{d−1} z^{d−1} + … + ρ_0`.
#[derive(Debug, Clone)]
pub struct CharPoly {
    /// `ρ_0, …, ρ_{d−1}`.
    pub coeffs: Vec<f64>,
    /// `‖A^d + Σ ρ_i A^i‖_F`.
    pub residual: f64,
}

impl CharPoly {
    pub fn abs_sum(&self) -> f64 {
        self.coeffs.iter().map(|c| c.abs()).sum()
    }
}

/// Faddeev–LeVerrier recursion. Limited to `d ≤ 32`: the coefficients grow
/// combinatorially and lose all accuracy beyond that.
pub fn char_poly(a: &Matrix) -> Result<CharPoly> {
    if !a.is_square() {
        return Err(Error::dim("char_poly", "square matrix", format!("{}x{}", a.rows(), a.cols())));
    }
    let d = a.rows();
    if d > CHAR_POLY_MAX_DIM {
        return Err(Error::SizeLimit {
            op: "char_poly",
            size: d,
            limit: CHAR_POLY_MAX_DIM,
        });
    }
    // c[d] = 1; M_1 = I; c[d-k] = -tr(A M_k)/k; M_{k+1} = A M_k + c[d-k] I
    let mut c = vec![0.0; d + 1];
    c[d] = 1.0;
    let mut m = Matrix::identity(d);
    for k in 1..=d {
        let am = a * &m;
        c[d - k] = -am.trace() / k as f64;
        m = am;
        for i in 0..d {
            m[(i, i)] += c[d - k];
        }
    }

    // Horner evaluation of p(A).
    let mut p = Matrix::identity(d);
    for i in (0..d).rev() {
        p = a * &p;
        for r in 0..d {
            p[(r, r)] += c[i];
        }
    }
    c.truncate(d);
    Ok(CharPoly {
        coeffs: c,
        residual: p.norm(),
    })
}

/// Spectral radius of a general square matrix via the Gelfand limit
/// `ρ(A) = lim ‖A^{2^s}‖^{1/2^s}`, evaluated by normalised repeated squaring.
pub fn spectral_radius(a: &Matrix) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::dim("spectral_radius", "square matrix", format!("{}x{}", a.rows(), a.cols())));
    }
    let n0 = a.norm();
    if n0 == 0.0 {
        return Ok(0.0);
    }
    let mut log_norm = n0.ln();
    let mut m = a.scale(1.0 / n0);
    let mut estimate = n0;
    for s in 1..=60 {
        let sq = &m * &m;
        let n = sq.norm();
        if n == 0.0 || !n.is_finite() {
            return Ok(if n == 0.0 { 0.0 } else { estimate });
        }
        log_norm = 2.0 * log_norm + n.ln();
        m = sq.scale(1.0 / n);
        let next = (log_norm / 2f64.powi(s)).exp();
        if (next - estimate).abs() <= 1e-15 * next.max(1e-300) {
            return Ok(next);
        }
        estimate = next;
    }
    Ok(estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn random_sym(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
        random(d, d, rng).symmetrized()
    }

    fn det3(m: &Matrix) -> f64 {
        m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
            - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
            + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
    }

    /// Roots of det(A − λI) for a symmetric 3×3 by scanning for sign changes
    /// and bisecting each bracket.
    fn cubic_roots_by_bisection(a: &Matrix) -> Vec<f64> {
        let f = |l: f64| {
            let mut m = a.clone();
            for i in 0..3 {
                m[(i, i)] -= l;
            }
            det3(&m)
        };
        let bound = 1.0 + a.norm();
        let n = 200_000;
        let mut roots = Vec::new();
        let mut prev_x = -bound;
        let mut prev_f = f(prev_x);
        for step in 1..=n {
            let x = -bound + 2.0 * bound * step as f64 / n as f64;
            let fx = f(x);
            if prev_f == 0.0 {
                roots.push(prev_x);
            } else if prev_f.signum() != fx.signum() && fx != 0.0 {
                let (mut lo, mut hi) = (prev_x, x);
                let flo = prev_f;
                while hi - lo > 1e-13 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid).signum() == flo.signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
            prev_x = x;
            prev_f = fx;
        }
        roots
    }

    #[test]
    fn identity_eigenvalues() {
        let e = sym_eig(&Matrix::identity(3)).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 1.0, 1.0]);
        let vvt = e.eigenvectors.mul_transpose(&e.eigenvectors);
        assert!((&vvt - &Matrix::identity(3)).norm() < 1e-14);
    }

    #[test]
    fn diag_with_single_nonzero_sorts_first() {
        let e = sym_eig(&Matrix::from_diag(&[0.0, 0.0, 0.0, 2.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![2.0, 0.0, 0.0, 0.0]);
        assert_eq!(e.eigenvectors[(3, 0)].abs(), 1.0);
    }

    #[test]
    fn random_3x3_matches_cubic_roots() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let a = random_sym(3, &mut rng);
            let mut oracle = cubic_roots_by_bisection(&a);
            assert_eq!(oracle.len(), 3);
            let mut got = sym_eig(&a).unwrap().eigenvalues;
            oracle.sort_by(f64::total_cmp);
            got.sort_by(f64::total_cmp);
            for (g, o) in got.iter().zip(&oracle) {
                assert!((g - o).abs() < 1e-8, "{g} vs {o}");
            }
        }
    }

    #[test]
    fn sym_eig_rejects_non_square() {
        assert!(matches!(sym_eig(&Matrix::zeros(2, 3)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn sym_eig_invariants_on_many_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..1000 {
            let d = 2 + trial % 15;
            let a = random_sym(d, &mut rng);
            let e = sym_eig(&a).unwrap();
            let v = &e.eigenvectors;
            let orth = (&v.mul_transpose(v) - &Matrix::identity(d)).norm();
            assert!(orth <= 1e-10 * d as f64, "orthogonality {orth} at d={d}");
            let recon = (&e.reconstruct() - &a).norm();
            assert!(recon <= 1e-9 * (1.0 + a.norm()), "reconstruction {recon} at d={d}");
            for w in e.eigenvalues.windows(2) {
                assert!(w[0].abs() >= w[1].abs());
            }
        }
    }

    #[test]
    fn char_poly_of_zero() {
        let cp = char_poly(&Matrix::zeros(2, 2)).unwrap();
        assert_eq!(cp.coeffs, vec![0.0, 0.0]);
        assert_eq!(cp.residual, 0.0);
    }

    #[test]
    fn char_poly_of_cyclic_shift() {
        // det(zI − P) for the 4-cycle is z^4 − 1.
        let mut p = Matrix::zeros(4, 4);
        p[(0, 3)] = 1.0;
        for i in 1..4 {
            p[(i, i - 1)] = 1.0;
        }
        let cp = char_poly(&p).unwrap();
        assert_eq!(cp.coeffs, vec![-1.0, 0.0, 0.0, 0.0]);
        assert_eq!(cp.residual, 0.0);
    }

    #[test]
    fn char_poly_of_diag() {
        // (z)^3 (z − 2) = z^4 − 2z^3
        let cp = char_poly(&Matrix::from_diag(&[0.0, 0.0, 0.0, 2.0])).unwrap();
        assert_eq!(cp.coeffs, vec![0.0, 0.0, 0.0, -2.0]);
    }

    #[test]
    fn char_poly_size_guard() {
        let err = char_poly(&Matrix::identity(33)).unwrap_err();
        assert!(matches!(err, Error::SizeLimit { size: 33, limit: 32, .. }));
        assert!(char_poly(&Matrix::identity(32)).is_ok());
    }

    #[test]
    fn cayley_hamilton_residual_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..200 {
            let d = 1 + trial % 8;
            let a = random(d, d, &mut rng);
            let cp = char_poly(&a).unwrap();
            let bound = 1e-6 * (1.0 + a.norm()).powi(d as i32);
            assert!(cp.residual <= bound, "residual {} > {bound}", cp.residual);
        }
    }

    #[test]
    fn pow_matches_repeated_multiplication() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random(5, 5, &mut rng).scale(0.4);
        let mut naive = Matrix::identity(5);
        let powers = a.powers(64).unwrap();
        for j in 0..=64u32 {
            let fast = a.pow(j).unwrap();
            let rel = (&fast - &naive).norm() / (1.0 + naive.norm());
            assert!(rel <= 1e-10, "j={j} rel={rel}");
            assert!((&powers[j as usize] - &naive).norm() / (1.0 + naive.norm()) <= 1e-10);
            naive = &naive * &a;
        }
    }

    #[test]
    fn transposed_products_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(4, 3, &mut rng);
        let b = random(5, 3, &mut rng);
        let c = random(4, 2, &mut rng);
        assert!((&a.mul_transpose(&b) - &(&a * &b.transpose())).norm() < 1e-13);
        assert!((&a.transpose_mul(&c) - &(&a.transpose() * &c)).norm() < 1e-13);
        let x = [1.0, -2.0, 0.5, 3.0];
        let y1 = a.matvec_t(&x);
        let y2 = a.transpose().matvec(&x);
        for (p, q) in y1.iter().zip(&y2) {
            assert!((p - q).abs() < 1e-13);
        }
    }

    #[test]
    fn from_vec_validates() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(Matrix::from_vec(0, 2, vec![]).is_err());
    }

    #[test]
    fn spectral_radius_of_known_matrices() {
        assert!((spectral_radius(&Matrix::from_diag(&[0.3, -0.8, 0.5])).unwrap() - 0.8).abs() < 1e-12);
        // rotation scaled by 0.7 has complex eigenvalues of modulus 0.7
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let r = Matrix::from_rows(&[&[c, -s], &[s, c]]).scale(0.7);
        assert!((spectral_radius(&r).unwrap() - 0.7).abs() < 1e-12);
        // nilpotent
        let n = Matrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(spectral_radius(&n).unwrap(), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mat(r: usize, c: usize) -> impl Strategy<Value = Matrix> {
            proptest::collection::vec(-2.0f64..2.0, r * c)
                .prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
        }

        proptest! {
            #[test]
            fn product_is_associative(
                (a, b, c) in (1usize..6, 1usize..6, 1usize..6, 1usize..6)
                    .prop_flat_map(|(p, q, r, s)| (mat(p, q), mat(q, r), mat(r, s)))
            ) {
                let left = &(&a * &b) * &c;
                let right = &a * &(&b * &c);
                let rel = (&left - &right).norm() / (1.0 + left.norm());
                prop_assert!(rel <= 1e-12);
            }

            #[test]
            fn transpose_involution_and_norm(a in (1usize..7, 1usize..7).prop_flat_map(|(r, c)| mat(r, c))) {
                prop_assert_eq!(a.transpose().transpose(), a.clone());
                let direct: f64 = a.as_slice().iter().map(|v| v * v).sum();
                prop_assert_eq!(a.norm_sq(), direct);
            }
        }
    }
}
