//! Builtin problem library.

use super::{BoxLipschitz, LocalObjective, Problem, ProblemError, SmoothFunction};
use crate::graph::NetworkGraph;
use crate::linalg::DenseMatrix;
use crate::mixing::validate_mixing;
use crate::scalar::Scalar;

/// Registry name of the five-agent saddle example.
pub const FIVE_AGENT_SADDLE: &str = "paper-sec5";

/// Descriptive alias of [`FIVE_AGENT_SADDLE`].
pub const FIVE_AGENT_SADDLE_ALIAS: &str = "five-agent-saddle";

pub const BUILTIN_NAMES: &[&str] = &[FIVE_AGENT_SADDLE, FIVE_AGENT_SADDLE_ALIAS];

/// `f(x) = Σ_j (a_j x_j⁴ + b_j x_j²)` with hard-coded derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableQuartic<T> {
    quartic: Vec<T>,
    quadratic: Vec<T>,
}

impl<T: Scalar> SeparableQuartic<T> {
    pub fn new(quartic: Vec<T>, quadratic: Vec<T>) -> Self {
        assert_eq!(quartic.len(), quadratic.len(), "coefficient lengths differ");
        Self { quartic, quadratic }
    }
}

impl<T: Scalar> SmoothFunction<T> for SeparableQuartic<T> {
    fn dim(&self) -> usize {
        self.quartic.len()
    }

    fn value(&self, x: &[T]) -> T {
        x.iter()
            .zip(self.quartic.iter().zip(&self.quadratic))
            .map(|(&xi, (&a, &b))| {
                let sq = xi * xi;
                a * sq * sq + b * sq
            })
            .sum()
    }

    fn gradient(&self, x: &[T]) -> Option<Vec<T>> {
        let (two, four) = (T::lit(2.0), T::lit(4.0));
        Some(
            x.iter()
                .zip(self.quartic.iter().zip(&self.quadratic))
                .map(|(&xi, (&a, &b))| four * a * xi * xi * xi + two * b * xi)
                .collect(),
        )
    }

    fn hessian(&self, x: &[T]) -> Option<DenseMatrix<T>> {
        let (two, twelve) = (T::lit(2.0), T::lit(12.0));
        let diag: Vec<T> = x
            .iter()
            .zip(self.quartic.iter().zip(&self.quadratic))
            .map(|(&xi, (&a, &b))| twelve * a * xi * xi + two * b)
            .collect();
        Some(DenseMatrix::from_diagonal(&diag))
    }

    /// Exact suprema over `[−r, r]^n`: the Hessian is diagonal and each entry is monotone in `x_j²`.
    fn box_lipschitz(&self, radius: T) -> Option<BoxLipschitz<T>> {
        let (two, twelve, twentyfour) = (T::lit(2.0), T::lit(12.0), T::lit(24.0));
        let r2 = radius * radius;
        let mut grad = T::zero();
        let mut hess = T::zero();
        for (&a, &b) in self.quartic.iter().zip(&self.quadratic) {
            grad = grad
                .max((two * b).abs())
                .max((twelve * a * r2 + two * b).abs());
            hess = hess.max(twentyfour * a.abs() * radius);
        }
        Some(BoxLipschitz { grad, hess })
    }
}

/// Local objectives of the five-agent example, summing to `x₁⁴ − x₁² + x₂⁴ + x₂²`.
pub fn five_agent_objectives<T: Scalar>() -> Vec<SeparableQuartic<T>> {
    let c = |q: [f64; 2], s: [f64; 2]| {
        SeparableQuartic::new(q.iter().map(|&v| T::lit(v)).collect(), s.iter().map(|&v| T::lit(v)).collect())
    };
    vec![
        c([0.25, 0.0], [-1.0, -1.0]),
        c([0.25, 0.5], [0.0, 1.5]),
        c([0.0, 0.0], [-1.0, 1.0]),
        c([0.5, 0.0], [0.0, -0.5]),
        c([0.0, 0.5], [1.0, 0.0]),
    ]
}

/// Cycle 1–3–4–2–5–1 (0-based 0–2–3–1–4–0).
pub fn five_agent_graph() -> NetworkGraph {
    NetworkGraph::from_one_based(5, [(1, 3), (3, 4), (4, 2), (2, 5), (5, 1)])
        .expect("static graph is valid")
}

pub fn five_agent_mixing_entries<T: Scalar>() -> DenseMatrix<T> {
    let rows = [
        [0.6, 0.0, 0.2, 0.0, 0.2],
        [0.0, 0.6, 0.0, 0.2, 0.2],
        [0.2, 0.0, 0.6, 0.2, 0.0],
        [0.0, 0.2, 0.2, 0.6, 0.0],
        [0.2, 0.2, 0.0, 0.0, 0.6],
    ];
    let rows: Vec<Vec<T>> = rows
        .iter()
        .map(|r| r.iter().map(|&v| T::lit(v)).collect())
        .collect();
    DenseMatrix::from_rows(&rows).expect("square")
}

pub const FIVE_AGENT_STEP_SIZE: f64 = 0.005;
pub const FIVE_AGENT_INIT: [f64; 2] = [1e-6, 1e-6];
pub const FIVE_AGENT_ESCAPE_RADIUS: f64 = 0.1;

/// The two local minimizers `(±√2/2, 0)` of the summed objective.
pub fn five_agent_minimizers<T: Scalar>() -> Vec<Vec<T>> {
    let h = T::FRAC_1_SQRT_2();
    vec![vec![h, T::zero()], vec![-h, T::zero()]]
}

pub fn five_agent_saddle_point<T: Scalar>() -> Vec<T> {
    vec![T::zero(), T::zero()]
}

/// The five-agent problem without Lipschitz metadata.
pub fn five_agent_saddle<T: Scalar>() -> Problem<T> {
    let graph = five_agent_graph();
    let mixing = validate_mixing(&five_agent_mixing_entries(), &graph).expect("static matrix is valid");
    let objectives = five_agent_objectives::<T>()
        .into_iter()
        .map(|f| LocalObjective::new(f).expect("builtin derivatives are consistent"))
        .collect();
    Problem::new(objectives, graph, mixing).expect("static problem is valid")
}

pub fn problem_by_name<T: Scalar>(name: &str) -> Result<Problem<T>, ProblemError> {
    match name {
        FIVE_AGENT_SADDLE | FIVE_AGENT_SADDLE_ALIAS => Ok(five_agent_saddle()),
        other => Err(ProblemError::UnknownBuiltin(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objectives_sum_to_global() {
        let fs = five_agent_objectives::<f64>();
        for x in [[0.3, -0.7], [1.2, 0.4], [-2.0, 1.5]] {
            let total: f64 = fs.iter().map(|f| f.value(&x)).sum();
            let expected = x[0].powi(4) - x[0].powi(2) + x[1].powi(4) + x[1].powi(2);
            assert!((total - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_builtin() {
        assert!(matches!(
            problem_by_name::<f64>("nope"),
            Err(ProblemError::UnknownBuiltin(_))
        ));
    }
}
