//! Objective hierarchy: local `f_i`, global `f = Σ f_i`, stacked `F(x̂) = Σ f_i(x̂_i)` and the
//! penalized auxiliary function
//!
//! ```text
//! Q_α(x̂) = F(x̂) + (1/2α) x̂ᵀ(I − W ⊗ I_n) x̂
//! ```
//!
//! whose plain gradient descent with step `α` reproduces the DGD iterates exactly.

pub mod builtin;
pub mod finite_diff;
pub mod polynomial;

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::NetworkGraph;
use crate::linalg::{
    lanczos_min_eig, norm2, symmetric_min_eigenvalue, DenseMatrix, EigenError, LanczosOptions,
};
use crate::mixing::MixingMatrix;
use crate::scalar::Scalar;
use crate::state::StackedState;

/// Problem sizes `m · n` up to this use the dense eigensolver for `λ_min(∇²Q_α)`.
pub const DENSE_EIGEN_CUTOVER: usize = 400;

/// A smooth function ℝⁿ → ℝ. Derivatives are optional; missing ones fall back to central
/// finite differences inside [`LocalObjective`].
pub trait SmoothFunction<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[T]) -> T;
    fn gradient(&self, _x: &[T]) -> Option<Vec<T>> {
        None
    }
    fn hessian(&self, _x: &[T]) -> Option<DenseMatrix<T>> {
        None
    }
    /// Gradient and Hessian Lipschitz constants valid on the box `[−r, r]^n`, if derivable.
    fn box_lipschitz(&self, _radius: T) -> Option<BoxLipschitz<T>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxLipschitz<T> {
    pub grad: T,
    pub hess: T,
}

type ValueFn<T> = dyn Fn(&[T]) -> T + Send + Sync;
type GradFn<T> = dyn Fn(&[T]) -> Vec<T> + Send + Sync;
type HessFn<T> = dyn Fn(&[T]) -> DenseMatrix<T> + Send + Sync;

/// Smooth function assembled from closures.
pub struct ClosureObjective<T> {
    dim: usize,
    value: Box<ValueFn<T>>,
    gradient: Option<Box<GradFn<T>>>,
    hessian: Option<Box<HessFn<T>>>,
}

impl<T: Scalar> ClosureObjective<T> {
    pub fn new(dim: usize, value: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        Self {
            dim,
            value: Box::new(value),
            gradient: None,
            hessian: None,
        }
    }

    pub fn with_gradient(mut self, g: impl Fn(&[T]) -> Vec<T> + Send + Sync + 'static) -> Self {
        self.gradient = Some(Box::new(g));
        self
    }

    pub fn with_hessian(
        mut self,
        h: impl Fn(&[T]) -> DenseMatrix<T> + Send + Sync + 'static,
    ) -> Self {
        self.hessian = Some(Box::new(h));
        self
    }
}

impl<T: Scalar> SmoothFunction<T> for ClosureObjective<T> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[T]) -> T {
        (self.value)(x)
    }
    fn gradient(&self, x: &[T]) -> Option<Vec<T>> {
        self.gradient.as_ref().map(|g| g(x))
    }
    fn hessian(&self, x: &[T]) -> Option<DenseMatrix<T>> {
        self.hessian.as_ref().map(|h| h(x))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("objective dimension must be positive")]
    ZeroDimension,
    #[error("analytic gradient disagrees with finite differences at probe {probe} (relative error {rel_error:e})")]
    GradientMismatch { probe: usize, rel_error: f64 },
    #[error("{which} Lipschitz constant must be finite and nonnegative, got {value}")]
    InvalidLipschitz { which: &'static str, value: f64 },
    #[error("step size must be positive and finite, got {0}")]
    NonPositiveStepSize(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("a problem needs at least one local objective")]
    NoObjectives,
    #[error("{objectives} objectives for a graph with {agents} agents")]
    AgentCount { objectives: usize, agents: usize },
    #[error("mixing matrix is {mixing}x{mixing} but the graph has {agents} agents")]
    MixingSize { mixing: usize, agents: usize },
    #[error("objective {agent} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        agent: usize,
        expected: usize,
        found: usize,
    },
    #[error("mixing matrix does not follow the graph at ({0}, {1})")]
    MixingGraphMismatch(usize, usize),
    #[error("communication graph is not connected")]
    Disconnected,
    #[error("unknown builtin problem '{0}'")]
    UnknownBuiltin(String),
}

/// One agent's private objective with optional Lipschitz metadata.
#[derive(Clone)]
pub struct LocalObjective<T: Scalar> {
    func: Arc<dyn SmoothFunction<T>>,
    lipschitz_grad: Option<T>,
    lipschitz_hess: Option<T>,
}

impl<T: Scalar> fmt::Debug for LocalObjective<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LocalObjective")
            .field("dim", &self.func.dim())
            .field("lipschitz_grad", &self.lipschitz_grad)
            .field("lipschitz_hess", &self.lipschitz_hess)
            .finish()
    }
}

const PROBE_COUNT: usize = 6;
const PROBE_SEED: u64 = 0x0b1e_c71e;

/// Tolerance for the registration-time gradient probe: `1e-5`, or looser when the scalar type
/// cannot reach it with central differences.
fn gradient_probe_tol<T: Scalar>() -> T {
    T::lit(1e-5).max(T::lit(100.0) * T::epsilon().cbrt().powi(2))
}

impl<T: Scalar> LocalObjective<T> {
    /// Registers `func`, checking any analytic gradient against central differences on a fixed
    /// probe set.
    pub fn new(func: impl SmoothFunction<T> + 'static) -> Result<Self, ObjectiveError> {
        Self::from_arc(Arc::new(func))
    }

    pub fn from_arc(func: Arc<dyn SmoothFunction<T>>) -> Result<Self, ObjectiveError> {
        let n = func.dim();
        if n == 0 {
            return Err(ObjectiveError::ZeroDimension);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
        let tol = gradient_probe_tol::<T>();
        for probe in 0..PROBE_COUNT {
            let x: Vec<T> = (0..n)
                .map(|_| T::lit(rng.random_range(-1.0..1.0)))
                .collect();
            if let Some(g) = func.gradient(&x) {
                let fd = finite_diff::gradient(|p| func.value(p), &x);
                let rel = finite_diff::relative_error(&g, &fd);
                // written so that a NaN error also counts as a mismatch
                #[allow(clippy::neg_cmp_op_on_partial_ord)]
                let mismatch = g.len() != n || !(rel <= tol);
                if mismatch {
                    return Err(ObjectiveError::GradientMismatch {
                        probe,
                        rel_error: rel.as_f64(),
                    });
                }
            }
        }
        Ok(Self {
            func,
            lipschitz_grad: None,
            lipschitz_hess: None,
        })
    }

    pub fn with_lipschitz(mut self, grad: Option<T>, hess: Option<T>) -> Result<Self, ObjectiveError> {
        for (which, v) in [("gradient", grad), ("Hessian", hess)] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= T::zero()) {
                    return Err(ObjectiveError::InvalidLipschitz {
                        which,
                        value: v.as_f64(),
                    });
                }
            }
        }
        self.lipschitz_grad = grad;
        self.lipschitz_hess = hess;
        Ok(self)
    }

    /// Attaches the function's own box-derived constants, if it can produce them.
    pub fn with_box_lipschitz(self, radius: T) -> Result<Self, ObjectiveError> {
        match self.func.box_lipschitz(radius) {
            Some(b) => self.with_lipschitz(Some(b.grad), Some(b.hess)),
            None => Ok(self),
        }
    }

    pub fn dim(&self) -> usize {
        self.func.dim()
    }

    pub fn function(&self) -> &Arc<dyn SmoothFunction<T>> {
        &self.func
    }

    pub fn lipschitz_grad(&self) -> Option<T> {
        self.lipschitz_grad
    }

    pub fn lipschitz_hess(&self) -> Option<T> {
        self.lipschitz_hess
    }

    pub fn value(&self, x: &[T]) -> T {
        self.func.value(x)
    }

    pub fn gradient(&self, x: &[T]) -> Vec<T> {
        self.func
            .gradient(x)
            .unwrap_or_else(|| finite_diff::gradient(|p| self.func.value(p), x))
    }

    /// Symmetrized Hessian, analytic when available.
    pub fn hessian(&self, x: &[T]) -> DenseMatrix<T> {
        if let Some(h) = self.func.hessian(x) {
            return h.symmetrized();
        }
        if self.func.gradient(x).is_some() {
            finite_diff::hessian_from_gradient(|p| self.gradient(p), x)
        } else {
            finite_diff::hessian_from_values(|p| self.func.value(p), x)
        }
    }
}

/// Fixed step size `α > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct StepSize<T>(T);

impl<T: Scalar> StepSize<T> {
    pub fn new(alpha: T) -> Result<Self, ObjectiveError> {
        if alpha.is_finite() && alpha > T::zero() {
            Ok(Self(alpha))
        } else {
            Err(ObjectiveError::NonPositiveStepSize(alpha.as_f64()))
        }
    }

    pub fn get(self) -> T {
        self.0
    }

    pub fn scaled(self, c: T) -> Result<Self, ObjectiveError> {
        Self::new(self.0 * c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceSpec<T> {
    pub grad_tol: T,
    pub eig_tol: T,
}

impl<T: Scalar> Default for ToleranceSpec<T> {
    fn default() -> Self {
        Self {
            grad_tol: T::lit(1e-6),
            eig_tol: T::lit(1e-6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StationaryKind {
    NotStationary,
    LocalMinimizer,
    SaddleOrMaximizer,
    Degenerate,
}

impl fmt::Display for StationaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NotStationary => "not-stationary",
            Self::LocalMinimizer => "local-minimizer",
            Self::SaddleOrMaximizer => "saddle-or-maximizer",
            Self::Degenerate => "degenerate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryClass<T> {
    pub kind: StationaryKind,
    pub grad_norm: T,
    pub min_hess_eig: T,
}

pub fn classify_stationary<T: Scalar>(
    grad_norm: T,
    min_hess_eig: T,
    tol: ToleranceSpec<T>,
) -> StationaryClass<T> {
    let kind = if grad_norm > tol.grad_tol {
        StationaryKind::NotStationary
    } else if min_hess_eig > tol.eig_tol {
        StationaryKind::LocalMinimizer
    } else if min_hess_eig < -tol.eig_tol {
        StationaryKind::SaddleOrMaximizer
    } else {
        StationaryKind::Degenerate
    };
    StationaryClass {
        kind,
        grad_norm,
        min_hess_eig,
    }
}

/// Aggregated Lipschitz constants; `None` marks a constant as unavailable because at least one
/// agent lacks the metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzConstants<T> {
    pub f_grad: Option<T>,
    pub f_hess: Option<T>,
    pub q_grad: Option<T>,
    pub q_hess: Option<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum EigenMethod {
    /// Dense when `m · n ≤ 400`, iterative otherwise.
    #[default]
    Auto,
    Dense,
    Iterative(LanczosOptions),
}

/// Finite-sum problem over a network: local objectives, topology, and validated mixing weights.
#[derive(Debug, Clone)]
pub struct Problem<T: Scalar> {
    objectives: Vec<LocalObjective<T>>,
    graph: NetworkGraph,
    mixing: MixingMatrix<T>,
    dim: usize,
}

impl<T: Scalar> Problem<T> {
    pub fn new(
        objectives: Vec<LocalObjective<T>>,
        graph: NetworkGraph,
        mixing: MixingMatrix<T>,
    ) -> Result<Self, ProblemError> {
        let dim = objectives.first().ok_or(ProblemError::NoObjectives)?.dim();
        let m = graph.num_agents();
        if objectives.len() != m {
            return Err(ProblemError::AgentCount {
                objectives: objectives.len(),
                agents: m,
            });
        }
        if mixing.num_agents() != m {
            return Err(ProblemError::MixingSize {
                mixing: mixing.num_agents(),
                agents: m,
            });
        }
        for (agent, o) in objectives.iter().enumerate() {
            if o.dim() != dim {
                return Err(ProblemError::DimensionMismatch {
                    agent,
                    expected: dim,
                    found: o.dim(),
                });
            }
        }
        for i in 0..m {
            for j in 0..m {
                if i != j && (mixing.weight(i, j) != T::zero()) != graph.has_edge(i, j) {
                    return Err(ProblemError::MixingGraphMismatch(i, j));
                }
            }
        }
        if !graph.is_connected() {
            return Err(ProblemError::Disconnected);
        }
        Ok(Self {
            objectives,
            graph,
            mixing,
            dim,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.objectives.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `m · n`.
    pub fn stacked_len(&self) -> usize {
        self.num_agents() * self.dim
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    pub fn mixing(&self) -> &MixingMatrix<T> {
        &self.mixing
    }

    pub fn objectives(&self) -> &[LocalObjective<T>] {
        &self.objectives
    }

    pub fn objective(&self, i: usize) -> &LocalObjective<T> {
        &self.objectives[i]
    }

    /// Replaces every agent's Lipschitz metadata with constants valid on `[−r, r]^n`, where the
    /// objective can derive them.
    pub fn with_box_lipschitz(&self, radius: T) -> Result<Self, ObjectiveError> {
        let objectives = self
            .objectives
            .iter()
            .cloned()
            .map(|o| o.with_box_lipschitz(radius))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            objectives,
            ..self.clone()
        })
    }

    /// Replaces every agent's Lipschitz metadata.
    pub fn with_lipschitz(&self, grad: &[Option<T>], hess: &[Option<T>]) -> Result<Self, ObjectiveError> {
        assert_eq!(grad.len(), self.num_agents());
        assert_eq!(hess.len(), self.num_agents());
        let objectives = self
            .objectives
            .iter()
            .cloned()
            .zip(grad.iter().zip(hess))
            .map(|(o, (&g, &h))| o.with_lipschitz(g, h))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            objectives,
            ..self.clone()
        })
    }

    pub fn zero_state(&self) -> StackedState<T> {
        StackedState::zeros(self.num_agents(), self.dim)
    }

    fn check_point(&self, x: &[T]) {
        assert_eq!(x.len(), self.dim, "point has wrong dimension");
    }

    fn check_state(&self, x: &StackedState<T>) {
        assert!(
            x.num_agents() == self.num_agents() && x.dim() == self.dim,
            "stacked state is {}x{}, problem is {}x{}",
            x.num_agents(),
            x.dim(),
            self.num_agents(),
            self.dim
        );
    }

    /// `f(x) = Σ_i f_i(x)`.
    pub fn f_value(&self, x: &[T]) -> T {
        self.check_point(x);
        self.objectives.iter().map(|o| o.value(x)).sum()
    }

    pub fn f_grad(&self, x: &[T]) -> Vec<T> {
        self.check_point(x);
        let mut g = vec![T::zero(); self.dim];
        for o in &self.objectives {
            for (acc, v) in g.iter_mut().zip(o.gradient(x)) {
                *acc += v;
            }
        }
        g
    }

    pub fn f_hess(&self, x: &[T]) -> DenseMatrix<T> {
        self.check_point(x);
        let n = self.dim;
        let mut h = DenseMatrix::zeros(n, n);
        for o in &self.objectives {
            let hi = o.hessian(x);
            for j in 0..n {
                for k in 0..n {
                    h[(j, k)] += hi[(j, k)];
                }
            }
        }
        h
    }

    /// `F(x̂) = Σ_i f_i(x̂_i)`.
    pub fn stacked_value(&self, x: &StackedState<T>) -> T {
        self.check_state(x);
        self.objectives
            .iter()
            .zip(x.blocks())
            .map(|(o, b)| o.value(b))
            .sum()
    }

    /// `∇F(x̂)`, block `i` equal to `∇f_i(x̂_i)`.
    pub fn stacked_grad(&self, x: &StackedState<T>) -> StackedState<T> {
        self.check_state(x);
        let mut g = self.zero_state();
        for (i, o) in self.objectives.iter().enumerate() {
            g.block_mut(i).copy_from_slice(&o.gradient(x.block(i)));
        }
        g
    }

    /// `Q_α(x̂) = F(x̂) + (1/2α) x̂ᵀ(I − Ŵ)x̂`.
    pub fn q_value(&self, alpha: StepSize<T>, x: &StackedState<T>) -> T {
        self.stacked_value(x) + self.penalty(alpha, x)
    }

    /// The consensus penalty `(1/2α) x̂ᵀ(I − Ŵ)x̂`.
    pub fn penalty(&self, alpha: StepSize<T>, x: &StackedState<T>) -> T {
        self.check_state(x);
        let form = self
            .mixing
            .disagreement_form(x)
            .expect("state shape checked");
        form / (T::lit(2.0) * alpha.get())
    }

    /// `∇Q_α(x̂) = ∇F(x̂) + α⁻¹(x̂ − Ŵx̂)`.
    pub fn q_grad(&self, alpha: StepSize<T>, x: &StackedState<T>) -> StackedState<T> {
        let mut g = self.stacked_grad(x);
        let wx = self.mixing.apply_lifted(x).expect("state shape checked");
        let inv = alpha.get().recip();
        for ((gi, &xi), &wi) in g
            .as_mut_slice()
            .iter_mut()
            .zip(x.as_slice())
            .zip(wx.as_slice())
        {
            *gi += inv * (xi - wi);
        }
        g
    }

    pub fn q_grad_norm(&self, alpha: StepSize<T>, x: &StackedState<T>) -> T {
        self.q_grad(alpha, x).norm()
    }

    /// Hessian operator of `Q_α` at `x̂`, with the per-agent Hessians evaluated once.
    pub fn q_hessian(&self, alpha: StepSize<T>, x: &StackedState<T>) -> QHessian<'_, T> {
        self.check_state(x);
        let blocks = self
            .objectives
            .iter()
            .zip(x.blocks())
            .map(|(o, b)| o.hessian(b))
            .collect();
        QHessian {
            problem: self,
            alpha,
            blocks,
        }
    }

    /// `∇²Q_α(x̂) v`.
    pub fn q_hess_apply(
        &self,
        alpha: StepSize<T>,
        x: &StackedState<T>,
        v: &StackedState<T>,
    ) -> StackedState<T> {
        self.q_hessian(alpha, x).apply(v)
    }

    /// `Λ_α(x̂) = λ_min(∇²Q_α(x̂))`, dense up to the cutover, Lanczos beyond.
    pub fn q_hess_min_eig(&self, alpha: StepSize<T>, x: &StackedState<T>) -> Result<T, EigenError> {
        self.q_hessian(alpha, x).min_eig(EigenMethod::Auto)
    }

    pub fn q_hess_min_eig_with(
        &self,
        alpha: StepSize<T>,
        x: &StackedState<T>,
        method: EigenMethod,
    ) -> Result<T, EigenError> {
        self.q_hessian(alpha, x).min_eig(method)
    }

    /// `λ_min(∇²f(x))`.
    pub fn f_hess_min_eig(&self, x: &[T]) -> T {
        symmetric_min_eigenvalue(&self.f_hess(x))
    }

    /// Classifies `x` as a stationary point of the global objective `f`.
    pub fn classify_global(&self, x: &[T], tol: ToleranceSpec<T>) -> StationaryClass<T> {
        classify_stationary(norm2(&self.f_grad(x)), self.f_hess_min_eig(x), tol)
    }

    /// Classifies `x̂` as a stationary point of `Q_α`.
    pub fn classify_q(
        &self,
        alpha: StepSize<T>,
        x: &StackedState<T>,
        tol: ToleranceSpec<T>,
    ) -> Result<StationaryClass<T>, EigenError> {
        Ok(classify_stationary(
            self.q_grad_norm(alpha, x),
            self.q_hess_min_eig(alpha, x)?,
            tol,
        ))
    }

    /// `L_F^g = max_i L^g_{f_i}`, `L_Q^g = L_F^g + α⁻¹(1 − λ_min(W))`, `L_F^H = L_Q^H = max_i L^H_{f_i}`.
    pub fn lipschitz_aggregate(&self, alpha: StepSize<T>) -> LipschitzConstants<T> {
        let max_of = |get: fn(&LocalObjective<T>) -> Option<T>| {
            self.objectives
                .iter()
                .map(get)
                .try_fold(T::zero(), |acc, v| v.map(|v| acc.max(v)))
        };
        let f_grad = max_of(LocalObjective::lipschitz_grad);
        let f_hess = max_of(LocalObjective::lipschitz_hess);
        let penalty = (T::one() - self.mixing.lambda_min()) / alpha.get();
        LipschitzConstants {
            f_grad,
            f_hess,
            q_grad: f_grad.map(|l| l + penalty),
            q_hess: f_hess,
        }
    }
}

/// `∇²Q_α(x̂) = blockdiag(∇²f_i(x̂_i)) + α⁻¹(I − W ⊗ I_n)`.
pub struct QHessian<'a, T: Scalar> {
    problem: &'a Problem<T>,
    alpha: StepSize<T>,
    blocks: Vec<DenseMatrix<T>>,
}

impl<T: Scalar> QHessian<'_, T> {
    pub fn dim(&self) -> usize {
        self.problem.stacked_len()
    }

    pub fn apply(&self, v: &StackedState<T>) -> StackedState<T> {
        self.problem.check_state(v);
        let mut out = self.apply_slice(v.as_slice());
        let state = StackedState::new(v.num_agents(), v.dim(), std::mem::take(&mut out));
        state.expect("shape preserved")
    }

    fn apply_slice(&self, v: &[T]) -> Vec<T> {
        let n = self.problem.dim();
        let m = self.problem.num_agents();
        let inv = self.alpha.get().recip();
        let mixing = self.problem.mixing();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let vi = &v[i * n..(i + 1) * n];
            let hv = self.blocks[i].matvec(vi);
            let dst = &mut out[i * n..(i + 1) * n];
            for k in 0..n {
                dst[k] = hv[k] + inv * vi[k];
            }
            for &(j, wij) in mixing.row_support(i) {
                let vj = &v[j * n..(j + 1) * n];
                for k in 0..n {
                    dst[k] -= inv * wij * vj[k];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let n = self.problem.dim();
        let m = self.problem.num_agents();
        let inv = self.alpha.get().recip();
        let w = self.problem.mixing().weights();
        let mut h = DenseMatrix::zeros(m * n, m * n);
        for i in 0..m {
            for j in 0..m {
                let pen = inv * ((if i == j { T::one() } else { T::zero() }) - w[(i, j)]);
                for k in 0..n {
                    h[(i * n + k, j * n + k)] += pen;
                }
            }
            for a in 0..n {
                for b in 0..n {
                    h[(i * n + a, i * n + b)] += self.blocks[i][(a, b)];
                }
            }
        }
        h
    }

    pub fn min_eig(&self, method: EigenMethod) -> Result<T, EigenError> {
        match method {
            EigenMethod::Dense => Ok(symmetric_min_eigenvalue(&self.to_dense())),
            EigenMethod::Iterative(opts) => {
                lanczos_min_eig(self.dim(), |v| self.apply_slice(v), &opts).map(|e| e.value)
            }
            EigenMethod::Auto if self.dim() <= DENSE_EIGEN_CUTOVER => self.min_eig(EigenMethod::Dense),
            EigenMethod::Auto => self.min_eig(EigenMethod::Iterative(LanczosOptions::default())),
        }
    }
}

/// Minimum sampled value of one local objective on spheres of increasing radius around the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct CoercivityProbe<T> {
    pub radii: Vec<T>,
    pub min_values: Vec<T>,
    /// Shell minima increase strictly with the radius.
    pub looks_coercive: bool,
}

/// Empirical coercivity check on sampled shells; reports only, never rejects.
pub fn coercivity_probe<T: Scalar>(
    objective: &LocalObjective<T>,
    radii: &[T],
    directions: usize,
    seed: u64,
) -> CoercivityProbe<T> {
    let n = objective.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<Vec<T>> = (0..directions.max(1))
        .map(|_| loop {
            let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-3 {
                break d.iter().map(|v| T::lit(v / norm)).collect();
            }
        })
        .chain((0..n).flat_map(|j| {
            [T::one(), -T::one()].map(|s| {
                let mut e = vec![T::zero(); n];
                e[j] = s;
                e
            })
        }))
        .collect();
    let min_values: Vec<T> = radii
        .iter()
        .map(|&r| {
            dirs.iter()
                .map(|d| {
                    let x: Vec<T> = d.iter().map(|&v| v * r).collect();
                    objective.value(&x)
                })
                .fold(T::infinity(), T::min)
        })
        .collect();
    let looks_coercive = min_values.windows(2).all(|w| w[1] > w[0]);
    CoercivityProbe {
        radii: radii.to_vec(),
        min_values,
        looks_coercive,
    }
}

#[cfg(test)]
mod tests {
    use super::builtin::{five_agent_saddle, five_agent_objectives};
    use super::*;
    use crate::mixing::validate_mixing;

    fn single_agent(f: impl SmoothFunction<f64> + 'static) -> Problem<f64> {
        let g = NetworkGraph::new(1, []).unwrap();
        let w = validate_mixing(&DenseMatrix::identity(1), &g).unwrap();
        Problem::new(vec![LocalObjective::new(f).unwrap()], g, w).unwrap()
    }

    fn alpha(a: f64) -> StepSize<f64> {
        StepSize::new(a).unwrap()
    }

    #[test]
    fn five_agent_values_at_saddle_and_minimizer() {
        let p = five_agent_saddle::<f64>();
        assert_eq!(p.f_value(&[0.0, 0.0]), 0.0);
        assert_eq!(p.f_grad(&[0.0, 0.0]), vec![0.0, 0.0]);
        let h = p.f_hess(&[0.0, 0.0]);
        assert_eq!((h[(0, 0)], h[(0, 1)], h[(1, 1)]), (-2.0, 0.0, 2.0));

        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p.f_value(&[r, 0.0]) + 0.25).abs() < 1e-15);
        assert!(norm2(&p.f_grad(&[r, 0.0])) < 1e-14);
        let h = p.f_hess(&[r, 0.0]);
        assert!((h[(0, 0)] - 4.0).abs() < 1e-13);
        assert_eq!(h[(1, 1)], 2.0);
    }

    #[test]
    fn single_agent_square() {
        let p = single_agent(ClosureObjective::new(1, |x: &[f64]| x[0] * x[0]));
        assert_eq!(p.f_value(&[3.0]), 9.0);
        // finite-difference fallback
        assert!((p.f_grad(&[3.0])[0] - 6.0).abs() < 1e-8);
        assert!((p.f_hess(&[3.0])[(0, 0)] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn q_value_two_agent_hand_computation() {
        let g = NetworkGraph::path(2).unwrap();
        let w = validate_mixing(
            &DenseMatrix::from_rows(&[[0.8, 0.2], [0.2, 0.8]]).unwrap(),
            &g,
        )
        .unwrap();
        let zero = || LocalObjective::new(ClosureObjective::new(1, |_: &[f64]| 0.0).with_gradient(|_| vec![0.0])).unwrap();
        let p = Problem::new(vec![zero(), zero()], g, w).unwrap();
        let x = StackedState::new(2, 1, vec![1.0, -1.0]).unwrap();
        assert!((p.q_value(alpha(0.1), &x) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn q_collapses_on_consensus() {
        let p = five_agent_saddle::<f64>();
        let x = [0.4, -0.9];
        let xs = StackedState::broadcast(5, &x);
        for a in [0.5, 0.005] {
            assert!((p.q_value(alpha(a), &xs) - p.f_value(&x)).abs() < 1e-12);
            let g = p.q_grad(alpha(a), &xs);
            for (i, o) in p.objectives().iter().enumerate() {
                let gi = o.gradient(&x);
                for (gk, ok) in g.block(i).iter().zip(&gi) {
                    assert!((gk - ok).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_agent_q_min_eig_equals_f_min_eig() {
        let fs = five_agent_objectives::<f64>();
        let total = ClosureObjective::new(2, move |x: &[f64]| fs.iter().map(|f| f.value(x)).sum());
        let p = single_agent(total);
        let x = StackedState::broadcast(1, &[0.0, 0.0]);
        let lam = p.q_hess_min_eig(alpha(0.1), &x).unwrap();
        assert!((lam + 2.0).abs() < 1e-4, "{lam}");
    }

    #[test]
    fn classification_examples() {
        let tol = ToleranceSpec::default();
        assert_eq!(classify_stationary(0.0, -2.0, tol).kind, StationaryKind::SaddleOrMaximizer);
        assert_eq!(classify_stationary(0.0, 4.0, tol).kind, StationaryKind::LocalMinimizer);
        assert_eq!(classify_stationary(1.0, 4.0, tol).kind, StationaryKind::NotStationary);
        assert_eq!(classify_stationary(1.0, -4.0, tol).kind, StationaryKind::NotStationary);
        assert_eq!(classify_stationary(0.0, 1e-9, tol).kind, StationaryKind::Degenerate);
    }

    #[test]
    fn lipschitz_aggregation() {
        let p = single_agent(ClosureObjective::new(1, |x: &[f64]| x[0] * x[0]));
        assert_eq!(p.lipschitz_aggregate(alpha(0.1)).q_grad, None);
        let p = p.with_lipschitz(&[Some(3.0)], &[None]).unwrap();
        let l = p.lipschitz_aggregate(alpha(0.1));
        assert_eq!(l.q_grad, Some(3.0));
        assert_eq!(l.f_hess, None);
        assert_eq!(l.q_hess, None);

        let p5 = five_agent_saddle::<f64>();
        assert_eq!(p5.lipschitz_aggregate(alpha(0.005)).f_grad, None);
        let lg = 7.0;
        let p5 = p5.with_lipschitz(&[Some(lg); 5], &[Some(2.0); 5]).unwrap();
        let l = p5.lipschitz_aggregate(alpha(0.005));
        assert!((l.q_grad.unwrap() - (lg + 144.72136)).abs() < 1e-5);
        assert_eq!(l.q_hess, l.f_hess);
    }

    #[test]
    fn rejects_inconsistent_gradient() {
        let bad = ClosureObjective::new(1, |x: &[f64]| x[0] * x[0]).with_gradient(|x| vec![3.0 * x[0]]);
        assert!(matches!(
            LocalObjective::new(bad),
            Err(ObjectiveError::GradientMismatch { .. })
        ));
    }

    #[test]
    fn rejects_nonpositive_alpha() {
        assert!(StepSize::new(0.0).is_err());
        assert!(StepSize::new(-1.0).is_err());
        assert!(StepSize::new(f64::NAN).is_err());
    }

    #[test]
    fn problem_shape_errors() {
        let p = five_agent_saddle::<f64>();
        let g = NetworkGraph::new(4, [(0, 1)]).unwrap();
        let objs: Vec<_> = p.objectives()[..4].to_vec();
        let w = validate_mixing(
            &DenseMatrix::from_rows(&[
                [0.9, 0.1, 0.0, 0.0],
                [0.1, 0.9, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ])
            .unwrap(),
            &g,
        )
        .unwrap();
        assert_eq!(Problem::new(objs, g, w).unwrap_err(), ProblemError::Disconnected);
    }

    #[test]
    fn coercivity_probe_flags_five_agent_f1() {
        let p = five_agent_saddle::<f64>();
        let radii = [1.0, 2.0, 4.0, 8.0];
        let f1 = coercivity_probe(p.objective(0), &radii, 32, 1);
        assert!(!f1.looks_coercive);
        let f2 = coercivity_probe(p.objective(1), &radii, 32, 1);
        assert!(f2.looks_coercive, "{:?}", f2.min_values);
    }
}
