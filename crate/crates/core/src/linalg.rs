//! Small dense linear algebra helpers and symmetric eigen-solvers.
//!
//! Matrices here are tiny (agent count, decision dimension, or their product at desk scale),
//! so a row-major `Vec` is all the storage needed. Dense symmetric eigenvalues are delegated to
//! `nalgebra` in double precision; the matrix-free minimum eigenvalue uses a restarted Lanczos
//! iteration written against an operator closure.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
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
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds from a row-major flat buffer; `None` on length mismatch.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Self { rows, cols, data })
    }

    /// Builds from nested rows; `None` if the rows are ragged.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Option<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != ncols {
                return None;
            }
            data.extend_from_slice(r);
        }
        Some(Self {
            rows: nrows,
            cols: ncols,
            data,
        })
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

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `(A + Aᵀ) / 2`. Panics if not square.
    pub fn symmetrized(&self) -> Self {
        assert!(self.is_square(), "symmetrize needs a square matrix");
        let half = T::lit(0.5);
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = (self[(i, j)] + self[(j, i)]) * half;
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn max_abs_asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Largest absolute row sum (induced infinity norm).
    pub fn norm_inf(&self) -> T {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<T> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[inline]
pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn norm_inf<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
}

pub fn distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}

/// `y += a * x`
#[inline]
pub fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Eigenvalues of a symmetric matrix in ascending order. The solve runs in `f64` regardless of `T`.
pub fn symmetric_eigenvalues<T: Scalar>(a: &DenseMatrix<T>) -> Vec<T> {
    assert!(a.is_square(), "eigenvalues need a square matrix");
    let n = a.rows();
    if n == 0 {
        return Vec::new();
    }
    let m = DMatrix::from_fn(n, n, |i, j| a[(i, j)].as_f64());
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev.into_iter().map(T::lit).collect()
}

pub fn symmetric_min_eigenvalue<T: Scalar>(a: &DenseMatrix<T>) -> T {
    symmetric_eigenvalues(a)
        .first()
        .copied()
        .unwrap_or_else(T::nan)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanczosOptions {
    /// Residual tolerance `‖Av − θv‖ ≤ tol · max(1, |θ|)`.
    pub tol: f64,
    pub krylov_dim: usize,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            krylov_dim: 40,
            max_restarts: 500,
            seed: 0x5eed_1a2c_705e_0001,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("iterative eigensolver did not converge after {matvecs} operator applications (residual {residual:e})")]
    NotConverged { matvecs: usize, residual: f64 },
    #[error("operator dimension must be positive")]
    EmptyOperator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenEstimate<T> {
    pub value: T,
    pub vector: Vec<T>,
    pub residual: T,
    pub matvecs: usize,
}

/// Smallest eigenvalue of the symmetric operator `apply` on ℝ^dim via explicitly restarted
/// Lanczos with full reorthogonalization. Each cycle restarts from the current Ritz vector.
pub fn lanczos_min_eig<T, F>(
    dim: usize,
    apply: F,
    opts: &LanczosOptions,
) -> Result<EigenEstimate<T>, EigenError>
where
    T: Scalar,
    F: Fn(&[T]) -> Vec<T>,
{
    if dim == 0 {
        return Err(EigenError::EmptyOperator);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut start: Vec<T> = (0..dim)
        .map(|_| T::lit(rng.random::<f64>() - 0.5))
        .collect();
    normalize(&mut start);

    let k_max = opts.krylov_dim.clamp(1, dim);
    let tol = T::lit(opts.tol);
    let mut matvecs = 0usize;
    let mut last_residual = T::infinity();

    for _ in 0..opts.max_restarts.max(1) {
        let mut basis: Vec<Vec<T>> = Vec::with_capacity(k_max);
        let mut diag: Vec<T> = Vec::with_capacity(k_max);
        let mut off: Vec<T> = Vec::with_capacity(k_max);
        basis.push(start.clone());

        for j in 0..k_max {
            let mut w = apply(&basis[j]);
            matvecs += 1;
            let a = dot(&w, &basis[j]);
            diag.push(a);
            // full reorthogonalization, twice for stability
            for _ in 0..2 {
                for v in &basis {
                    let c = dot(&w, v);
                    axpy(-c, v, &mut w);
                }
            }
            let b = norm2(&w);
            if j + 1 == k_max || b <= T::epsilon() * T::lit(64.0) * a.abs().max(T::one()) {
                break;
            }
            off.push(b);
            w.iter_mut().for_each(|v| *v /= b);
            basis.push(w);
        }

        let k = diag.len();
        let tri = DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                diag[i].as_f64()
            } else if i + 1 == j {
                off[i].as_f64()
            } else if j + 1 == i {
                off[j].as_f64()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(tri);
        let (idx, theta) = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty tridiagonal");
        let coeffs = eig.eigenvectors.column(idx);

        let mut ritz = vec![T::zero(); dim];
        for (c, v) in coeffs.iter().zip(&basis) {
            axpy(T::lit(*c), v, &mut ritz);
        }
        normalize(&mut ritz);
        let theta = T::lit(theta);
        let mut r = apply(&ritz);
        matvecs += 1;
        axpy(-theta, &ritz, &mut r);
        let residual = norm2(&r);
        last_residual = residual;
        if residual <= tol * theta.abs().max(T::one()) {
            return Ok(EigenEstimate {
                value: theta,
                vector: ritz,
                residual,
                matvecs,
            });
        }
        start = ritz;
    }
    Err(EigenError::NotConverged {
        matvecs,
        residual: last_residual.as_f64(),
    })
}

fn normalize<T: Scalar>(v: &mut [T]) {
    let n = norm2(v);
    if n > T::zero() {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
