//! Sparse multivariate polynomials with term-wise analytic derivatives.

use thiserror::Error;

use super::{BoxLipschitz, SmoothFunction};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolynomialError {
    #[error("polynomial dimension must be positive")]
    ZeroDimension,
    #[error("term {term} has {found} exponents, expected {expected}")]
    ExponentLength {
        term: usize,
        expected: usize,
        found: usize,
    },
    #[error("term {0} has a non-finite coefficient")]
    NonFiniteCoefficient(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Monomial<T> {
    pub exponents: Vec<u32>,
    pub coeff: T,
}

impl<T: Scalar> Monomial<T> {
    pub fn new(exponents: Vec<u32>, coeff: T) -> Self {
        Self { exponents, coeff }
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    fn eval(&self, x: &[T]) -> T {
        self.exponents
            .iter()
            .zip(x)
            .fold(self.coeff, |acc, (&e, &xi)| match e {
                0 => acc,
                1 => acc * xi,
                _ => acc * xi.powi(e as i32),
            })
    }

    fn partial(&self, j: usize) -> Option<Self> {
        let e = self.exponents[j];
        if e == 0 || self.coeff == T::zero() {
            return None;
        }
        let mut exponents = self.exponents.clone();
        exponents[j] = e - 1;
        Some(Self {
            exponents,
            coeff: self.coeff * T::from_u32(e).expect("small exponent"),
        })
    }
}

/// `Σ_t c_t Π_j x_j^{e_tj}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial<T> {
    dim: usize,
    terms: Vec<Monomial<T>>,
}

impl<T: Scalar> Polynomial<T> {
    pub fn new(dim: usize, terms: Vec<Monomial<T>>) -> Result<Self, PolynomialError> {
        if dim == 0 {
            return Err(PolynomialError::ZeroDimension);
        }
        for (t, m) in terms.iter().enumerate() {
            if m.exponents.len() != dim {
                return Err(PolynomialError::ExponentLength {
                    term: t,
                    expected: dim,
                    found: m.exponents.len(),
                });
            }
            if !m.coeff.is_finite() {
                return Err(PolynomialError::NonFiniteCoefficient(t));
            }
        }
        Ok(Self { dim, terms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Monomial<T>] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[T]) -> T {
        assert_eq!(x.len(), self.dim, "polynomial dimension mismatch");
        self.terms.iter().map(|t| t.eval(x)).sum()
    }

    pub fn partial(&self, j: usize) -> Self {
        Self {
            dim: self.dim,
            terms: self.terms.iter().filter_map(|t| t.partial(j)).collect(),
        }
    }

    /// Upper bound of `|p(x)|` over the box `[−r, r]^n`.
    pub fn abs_bound_on_box(&self, radius: T) -> T {
        self.terms
            .iter()
            .map(|t| t.coeff.abs() * radius.powi(t.degree() as i32))
            .sum()
    }
}

/// Polynomial objective with precomputed gradient and Hessian polynomials.
#[derive(Debug, Clone)]
pub struct PolynomialObjective<T> {
    poly: Polynomial<T>,
    grad: Vec<Polynomial<T>>,
    hess: Vec<Vec<Polynomial<T>>>,
}

impl<T: Scalar> PolynomialObjective<T> {
    pub fn new(poly: Polynomial<T>) -> Self {
        let n = poly.dim();
        let grad: Vec<_> = (0..n).map(|j| poly.partial(j)).collect();
        let hess = grad
            .iter()
            .map(|g| (0..n).map(|k| g.partial(k)).collect())
            .collect();
        Self { poly, grad, hess }
    }

    pub fn polynomial(&self) -> &Polynomial<T> {
        &self.poly
    }
}

impl<T: Scalar> SmoothFunction<T> for PolynomialObjective<T> {
    fn dim(&self) -> usize {
        self.poly.dim()
    }

    fn value(&self, x: &[T]) -> T {
        self.poly.eval(x)
    }

    fn gradient(&self, x: &[T]) -> Option<Vec<T>> {
        Some(self.grad.iter().map(|g| g.eval(x)).collect())
    }

    fn hessian(&self, x: &[T]) -> Option<DenseMatrix<T>> {
        let n = self.poly.dim();
        let mut h = DenseMatrix::zeros(n, n);
        for j in 0..n {
            for k in 0..n {
                h[(j, k)] = self.hess[j][k].eval(x);
            }
        }
        Some(h)
    }

    /// Frobenius-norm bounds of the second and third derivative tensors over the box.
    fn box_lipschitz(&self, radius: T) -> Option<BoxLipschitz<T>> {
        let mut second = T::zero();
        let mut third = T::zero();
        for row in &self.hess {
            for h in row {
                let b = h.abs_bound_on_box(radius);
                second += b * b;
                for l in 0..self.poly.dim() {
                    let t = h.partial(l).abs_bound_on_box(radius);
                    third += t * t;
                }
            }
        }
        Some(BoxLipschitz {
            grad: second.sqrt(),
            hess: third.sqrt(),
        })
    }
}
