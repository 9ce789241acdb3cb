//! Quantitative checks on concrete iterates: consensus/optimality bounds at stationary points of
//! `Q_α`, closed-form step-size caps, regularity-region membership, Monte-Carlo one-step descent
//! under noise, and escape statistics.

use std::fmt::Write as _;

use thiserror::Error;

use crate::dynamics::{ndgd_step, Trajectory};
use crate::linalg::{distance, norm2, EigenError};
use crate::noise::{NoiseError, NoiseSpec, NoiseStreams};
use crate::objective::{Problem, StepSize};
use crate::scalar::Scalar;
use crate::state::StackedState;

/// `‖∇Q_α‖` below which an iterate is treated as a stationary point of `Q_α`.
pub const DEFAULT_STATIONARITY_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticError {
    #[error("second-largest mixing eigenvalue is {0}, the network is not connected")]
    NoSpectralGap(f64),
    #[error("Lipschitz constant of the local {0} is not available")]
    MissingLipschitz(&'static str),
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} = {value} exceeds the gradient Lipschitz constant {bound}")]
    AboveLipschitz {
        name: &'static str,
        value: f64,
        bound: f64,
    },
    #[error("probability must lie in (0, 1), got {0}")]
    Probability(f64),
    #[error("descent hypothesis violated: ‖∇Q_α‖ = {grad_norm:e} is below epsilon = {epsilon:e}")]
    Hypothesis { grad_norm: f64, epsilon: f64 },
    #[error("noise spec carries no epsilon, so the descent hypothesis cannot be checked")]
    MissingEpsilon,
    #[error("at least one sample is required")]
    NoSamples,
    #[error("reference list is empty")]
    EmptyReferences,
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

/// One measured quantity against its bound; `satisfied ⟺ measured ≤ bound + tolerance`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport<T> {
    pub quantity: String,
    pub agent: Option<usize>,
    pub measured: T,
    pub bound: T,
    pub satisfied: bool,
    /// `bound − measured`.
    pub slack: T,
    /// Set when the evaluation point is not stationary to the requested tolerance.
    pub caveat: Option<String>,
}

impl<T: Scalar> BoundReport<T> {
    fn new(quantity: &str, agent: Option<usize>, measured: T, bound: T, tol: T) -> Self {
        Self {
            quantity: quantity.to_string(),
            agent,
            measured,
            bound,
            satisfied: measured <= bound + tol,
            slack: bound - measured,
            caveat: None,
        }
    }
}

/// Tolerances used by the bound checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions<T> {
    pub stationarity_tol: T,
    pub report_tol: T,
}

impl<T: Scalar> Default for CheckOptions<T> {
    fn default() -> Self {
        Self {
            stationarity_tol: T::lit(DEFAULT_STATIONARITY_TOL),
            report_tol: T::default_validation_tol(),
        }
    }
}

/// Common inputs of the stationary-point bounds.
struct StationaryContext<T> {
    grad_f_norm: T,
    gap: T,
    residual: T,
    caveat: Option<String>,
    mean: Vec<T>,
}

fn stationary_context<T: Scalar>(
    problem: &Problem<T>,
    alpha: StepSize<T>,
    x: &StackedState<T>,
    opts: &CheckOptions<T>,
) -> Result<StationaryContext<T>, DiagnosticError> {
    let spectral = problem.mixing().spectral();
    let lambda_2 = spectral.lambda_2.unwrap_or(T::zero());
    if lambda_2 >= T::one() {
        return Err(DiagnosticError::NoSpectralGap(lambda_2.as_f64()));
    }
    let residual = problem.q_grad_norm(alpha, x);
    let caveat = (residual > opts.stationarity_tol).then(|| {
        format!(
            "not stationary: ‖∇Q_α‖ = {:.3e} > {:.1e}",
            residual.as_f64(),
            opts.stationarity_tol.as_f64()
        )
    });
    Ok(StationaryContext {
        grad_f_norm: problem.stacked_grad(x).norm(),
        gap: T::one() - lambda_2,
        residual,
        caveat,
        mean: x.consensus_average(),
    })
}

/// Stationary-point checks with the residual gradient norm they were evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryReports<T> {
    pub residual_grad_norm: T,
    pub reports: Vec<BoundReport<T>>,
}

impl<T: Scalar> StationaryReports<T> {
    pub fn all_satisfied(&self) -> bool {
        self.reports.iter().all(|r| r.satisfied)
    }
}

/// Per-agent consensus deviation `‖x̂_i − x̄‖ ≤ α‖∇F(x̂)‖ / (1 − λ₂)`.
pub fn consensus_deviation_check<T: Scalar>(
    problem: &Problem<T>,
    alpha: StepSize<T>,
    x: &StackedState<T>,
    opts: &CheckOptions<T>,
) -> Result<StationaryReports<T>, DiagnosticError> {
    let ctx = stationary_context(problem, alpha, x, opts)?;
    let bound = alpha.get() * ctx.grad_f_norm / ctx.gap;
    let reports = x
        .blocks()
        .enumerate()
        .map(|(i, b)| {
            let mut r = BoundReport::new(
                "consensus_deviation",
                Some(i),
                distance(b, &ctx.mean),
                bound,
                opts.report_tol,
            );
            r.caveat = ctx.caveat.clone();
            r
        })
        .collect();
    Ok(StationaryReports {
        residual_grad_norm: ctx.residual,
        reports,
    })
}

/// `‖∇f(x̄)‖ ≤ α L_F^g m√m ‖∇F(x̂)‖ / (1 − λ₂)`.
pub fn mean_gradient_check<T: Scalar>(
    problem: &Problem<T>,
    alpha: StepSize<T>,
    x: &StackedState<T>,
    opts: &CheckOptions<T>,
) -> Result<BoundReport<T>, DiagnosticError> {
    let lip = problem
        .lipschitz_aggregate(alpha)
        .f_grad
        .ok_or(DiagnosticError::MissingLipschitz("gradients"))?;
    let ctx = stationary_context(problem, alpha, x, opts)?;
    let m = T::from_usize_lossy(problem.num_agents());
    let bound = alpha.get() * lip * m * m.sqrt() * ctx.grad_f_norm / ctx.gap;
    let measured = norm2(&problem.f_grad(&ctx.mean));
    let mut r = BoundReport::new("mean_gradient_norm", None, measured, bound, opts.report_tol);
    r.caveat = ctx.caveat;
    Ok(r)
}

/// `λ_min(∇²f(x̄)) ≥ −α L_F^H m² ‖∇F(x̂)‖ / (1 − λ₂)`, reported as `−λ_min ≤ bound`.
pub fn mean_curvature_check<T: Scalar>(
    problem: &Problem<T>,
    alpha: StepSize<T>,
    x: &StackedState<T>,
    opts: &CheckOptions<T>,
) -> Result<BoundReport<T>, DiagnosticError> {
    let lip = problem
        .lipschitz_aggregate(alpha)
        .f_hess
        .ok_or(DiagnosticError::MissingLipschitz("Hessians"))?;
    let ctx = stationary_context(problem, alpha, x, opts)?;
    let m = T::from_usize_lossy(problem.num_agents());
    let bound = alpha.get() * lip * m * m * ctx.grad_f_norm / ctx.gap;
    let measured = -problem.f_hess_min_eig(&ctx.mean);
    let mut r = BoundReport::new("neg_mean_min_hess_eig", None, measured, bound, opts.report_tol);
    r.caveat = ctx.caveat;
    Ok(r)
}

/// All three stationary-point checks; the gradient and curvature checks are skipped (listed in
/// `unavailable`) when the matching Lipschitz metadata is missing.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarySuite<T> {
    pub residual_grad_norm: T,
    pub reports: Vec<BoundReport<T>>,
    pub unavailable: Vec<String>,
}

impl<T: Scalar> StationarySuite<T> {
    pub fn all_satisfied(&self) -> bool {
        self.reports.iter().all(|r| r.satisfied)
    }
}

pub fn stationary_suite<T: Scalar>(
    problem: &Problem<T>,
    alpha: StepSize<T>,
    x: &StackedState<T>,
    opts: &CheckOptions<T>,
) -> Result<StationarySuite<T>, DiagnosticError> {
    let dev = consensus_deviation_check(problem, alpha, x, opts)?;
    let mut reports = dev.reports;
    let mut unavailable = Vec::new();
    for (name, check) in [
        ("mean_gradient_norm", mean_gradient_check::<T> as fn(_, _, _, _) -> _),
        ("neg_mean_min_hess_eig", mean_curvature_check::<T>),
    ] {
        match check(problem, alpha, x, opts) {
            Ok(r) => reports.push(r),
            Err(DiagnosticError::MissingLipschitz(_)) => unavailable.push(name.to_string()),
            Err(e) => return Err(e),
        }
    }
    Ok(StationarySuite {
        residual_grad_norm: dev.residual_grad_norm,
        reports,
        unavailable,
    })
}

/// The two closed-form step-size caps; the remaining threshold of the admissible range has no
/// closed form and is not reported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaCaps<T> {
    /// `(√2 − 1) / L_F^g`.
    pub cap_sqrt2: T,
    /// `λ_min(W) / (L_F^g · max{1, ln ζ⁻¹})`.
    pub cap_spectral: T,
}

impl<T: Scalar> AlphaCaps<T> {
    pub fn min(&self) -> T {
        self.cap_sqrt2.min(self.cap_spectral)
    }
}

pub fn alpha_caps<T: Scalar>(lipschitz_grad: T, lambda_min_w: T, zeta: T) -> Result<AlphaCaps<T>, DiagnosticError> {
    if !(lipschitz_grad.is_finite() && lipschitz_grad > T::zero()) {
        return Err(DiagnosticError::NonPositive {
            name: "L_F^g",
            value: lipschitz_grad.as_f64(),
        });
    }
    if !(zeta > T::zero() && zeta < T::one()) {
        return Err(DiagnosticError::Probability(zeta.as_f64()));
    }
    let log_inv = -zeta.ln();
    Ok(AlphaCaps {
        cap_sqrt2: (T::SQRT_2() - T::one()) / lipschitz_grad,
        cap_spectral: lambda_min_w / (lipschitz_grad * T::one().max(log_inv)),
    })
}

/// Caps from the problem's aggregated gradient Lipschitz constant and mixing spectrum.
pub fn computable_alpha_caps<T: Scalar>(problem: &Problem<T>, zeta: T) -> Result<AlphaCaps<T>, DiagnosticError> {
    let lip = problem
        .objectives()
        .iter()
        .map(|o| o.lipschitz_grad())
        .try_fold(T::zero(), |acc, v| v.map(|v| acc.max(v)))
        .ok_or(DiagnosticError::MissingLipschitz("gradients"))?;
    alpha_caps(lip, problem.mixing().lambda_min(), zeta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityParams<T> {
    pub epsilon: T,
    pub gamma: T,
    pub mu: T,
    pub delta: T,
    pub alpha: T,
}

impl<T: Scalar> RegularityParams<T> {
    /// Checks positivity and, when the problem carries a gradient Lipschitz constant, `γ, μ ≤ L_F^g`.
    pub fn validate(&self, problem: &Problem<T>) -> Result<(), DiagnosticError> {
        for (name, value) in [
            ("epsilon", self.epsilon),
            ("gamma", self.gamma),
            ("mu", self.mu),
            ("delta", self.delta),
            ("alpha", self.alpha),
        ] {
            if !(value.is_finite() && value > T::zero()) {
                return Err(DiagnosticError::NonPositive {
                    name,
                    value: value.as_f64(),
                });
            }
        }
        let alpha = StepSize::new(self.alpha).expect("checked");
        if let Some(l) = problem.lipschitz_aggregate(alpha).f_grad {
            for (name, value) in [("gamma", self.gamma), ("mu", self.mu)] {
                if value > l {
                    return Err(DiagnosticError::AboveLipschitz {
                        name,
                        value: value.as_f64(),
                        bound: l.as_f64(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Membership of one point in the large-gradient, negative-curvature and near-minimizer regions.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMembership<T> {
    pub in_large_gradient: bool,
    pub in_negative_curvature: bool,
    /// `Λ_α ≥ μ`, plus `dist ≤ δ` to the supplied minimizer candidates when there are any.
    pub in_near_minimizer_partial: bool,
    pub grad_norm: T,
    pub min_hess_eig: T,
    pub dist_to_candidates: Option<T>,
}

impl<T> RegionMembership<T> {
    pub fn covered(&self) -> bool {
        self.in_large_gradient || self.in_negative_curvature || self.in_near_minimizer_partial
    }
}

pub fn region_membership<T: Scalar>(
    problem: &Problem<T>,
    params: &RegularityParams<T>,
    x: &StackedState<T>,
    minimizer_candidates: &[StackedState<T>],
) -> Result<RegionMembership<T>, DiagnosticError> {
    let alpha = StepSize::new(params.alpha).map_err(|_| DiagnosticError::NonPositive {
        name: "alpha",
        value: params.alpha.as_f64(),
    })?;
    let grad_norm = problem.q_grad_norm(alpha, x);
    let lambda = problem.q_hess_min_eig(alpha, x)?;
    let dist = minimizer_candidates
        .iter()
        .map(|c| x.distance(c))
        .fold(None, |acc: Option<T>, d| Some(acc.map_or(d, |a| a.min(d))));
    Ok(RegionMembership {
        in_large_gradient: grad_norm >= params.epsilon,
        in_negative_curvature: lambda <= -params.gamma,
        in_near_minimizer_partial: lambda >= params.mu && dist.is_none_or(|d| d <= params.delta),
        grad_norm,
        min_hess_eig: lambda,
        dist_to_candidates: dist,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoverageReport {
    pub probed: usize,
    pub large_gradient: usize,
    pub negative_curvature: usize,
    pub near_minimizer_partial: usize,
    /// Indices of probe points in none of the regions.
    pub uncovered: Vec<usize>,
}

/// Region membership over a set of probe points.
pub fn coverage_probe<T: Scalar>(
    problem: &Problem<T>,
    params: &RegularityParams<T>,
    points: &[StackedState<T>],
    minimizer_candidates: &[StackedState<T>],
) -> Result<CoverageReport, DiagnosticError> {
    let mut rep = CoverageReport::default();
    for (k, x) in points.iter().enumerate() {
        let m = region_membership(problem, params, x, minimizer_candidates)?;
        rep.probed += 1;
        rep.large_gradient += usize::from(m.in_large_gradient);
        rep.negative_curvature += usize::from(m.in_negative_curvature);
        rep.near_minimizer_partial += usize::from(m.in_near_minimizer_partial);
        if !m.covered() {
            rep.uncovered.push(k);
        }
    }
    Ok(rep)
}

/// Points `center + 1 ⊗ d` for `d` on the regular grid `{−h, …, h}ⁿ` with `steps` points per axis.
pub fn consensus_grid<T: Scalar>(center: &StackedState<T>, half_width: T, steps: usize) -> Vec<StackedState<T>> {
    let n = center.dim();
    let steps = steps.max(1);
    let offset = |s: usize| {
        if steps == 1 {
            T::zero()
        } else {
            -half_width + T::lit(2.0) * half_width * T::from_usize_lossy(s) / T::from_usize_lossy(steps - 1)
        }
    };
    let total = steps.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            let mut d = vec![T::zero(); n];
            for dk in d.iter_mut() {
                *dk = offset(idx % steps);
                idx /= steps;
            }
            let mut p = center.clone();
            for b in 0..p.num_agents() {
                for (v, &dk) in p.block_mut(b).iter_mut().zip(&d) {
                    *v += dk;
                }
            }
            p
        })
        .collect()
}

/// Monte-Carlo estimate of the one-step change of `Q_α` under the noisy update.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentEstimate<T> {
    pub samples: usize,
    pub mean_delta_q: T,
    pub std_err: T,
    pub grad_norm: T,
    pub per_coordinate_variance: T,
    /// `−(λ_min(W)/2) · α · m n σ²`.
    pub bound: T,
    /// `−(λ_min(W)/2) α ‖∇Q_α‖² + ((2 − λ_min(W))/2) α m n σ²`, the last intermediate inequality
    /// before the bound above; the two agree only for `σ²` at most half the nominal budget.
    pub intermediate_bound: T,
}

impl<T: Scalar> DescentEstimate<T> {
    /// `mean + 3·std_err < 0`.
    pub fn decreases_confidently(&self) -> bool {
        self.mean_delta_q + T::lit(3.0) * self.std_err < T::zero()
    }

    pub fn within_bound(&self) -> bool {
        self.mean_delta_q <= self.bound
    }
}

/// Draws `samples` independent noisy steps from `x` (streams keyed by `seed`, one iteration index
/// per sample) and averages `Q_α(x⁺) − Q_α(x)`.
///
/// With noise present, `noise.epsilon` must be set and `‖∇Q_α(x)‖ ≥ ε` must hold; without noise
/// the deterministic change is returned exactly with zero standard error.
pub fn one_step_descent_mc<T: Scalar>(
    problem: &Problem<T>,
    alpha: StepSize<T>,
    x: &StackedState<T>,
    noise: &NoiseSpec<T>,
    samples: usize,
    seed: u64,
) -> Result<DescentEstimate<T>, DiagnosticError> {
    if samples == 0 {
        return Err(DiagnosticError::NoSamples);
    }
    let (m, n) = (problem.num_agents(), problem.dim());
    let lambda_min = problem.mixing().lambda_min();
    noise.validate(m, n, lambda_min)?;
    let grad_norm = problem.q_grad_norm(alpha, x);
    match noise.epsilon {
        Some(eps) if grad_norm < eps => {
            return Err(DiagnosticError::Hypothesis {
                grad_norm: grad_norm.as_f64(),
                epsilon: eps.as_f64(),
            })
        }
        None if !noise.is_none() => return Err(DiagnosticError::MissingEpsilon),
        _ => {}
    }
    let sigma2 = noise.per_coordinate_variance(n);
    let half = T::lit(0.5);
    let mn = T::from_usize_lossy(m * n);
    let a = alpha.get();
    let bound = -(lambda_min * half) * a * mn * sigma2;
    let intermediate_bound =
        -(lambda_min * half) * a * grad_norm * grad_norm + (T::lit(2.0) - lambda_min) * half * a * mn * sigma2;

    let q0 = problem.q_value(alpha, x);
    let streams = NoiseStreams::new(seed, m);
    let draws = if noise.is_none() { 1 } else { samples };
    // Welford accumulation
    let (mut mean, mut m2) = (T::zero(), T::zero());
    for s in 0..draws {
        let next = ndgd_step(problem, a, x, noise, &streams, s as u64)?;
        let delta = problem.q_value(alpha, &next) - q0;
        let count = T::from_usize_lossy(s + 1);
        let d = delta - mean;
        mean += d / count;
        m2 += d * (delta - mean);
    }
    let std_err = if draws > 1 {
        let var = m2 / T::from_usize_lossy(draws - 1);
        (var / T::from_usize_lossy(draws)).sqrt()
    } else {
        T::zero()
    };
    Ok(DescentEstimate {
        samples: draws,
        mean_delta_q: mean,
        std_err,
        grad_norm,
        per_coordinate_variance: sigma2,
        bound,
        intermediate_bound,
    })
}

/// Smallest recorded iteration whose consensus average lies farther than `radius` from `center`.
pub fn escape_iteration<T: Scalar>(traj: &Trajectory<T>, center: &[T], radius: T) -> Option<usize> {
    traj.records
        .iter()
        .find(|r| distance(&r.mean, center) > radius)
        .map(|r| r.iteration)
}

/// Distance to the closest reference point and its index; ties go to the lower index.
pub fn dist_to_reference<T: Scalar>(x: &[T], refs: &[Vec<T>]) -> Result<(T, usize), DiagnosticError> {
    let mut best: Option<(T, usize)> = None;
    for (k, r) in refs.iter().enumerate() {
        let d = distance(x, r);
        if best.is_none_or(|(b, _)| d < b) {
            best = Some((d, k));
        }
    }
    best.ok_or(DiagnosticError::EmptyReferences)
}

/// Median of a list of optional escape iterations, counting "never" as larger than any value.
/// Returns `None` when more than half the entries never escape.
pub fn median_escape(values: &[Option<usize>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<usize> = values.iter().map(|e| e.unwrap_or(usize::MAX)).collect();
    v.sort_unstable();
    let k = v.len();
    let (a, b) = if k % 2 == 1 {
        (v[k / 2], v[k / 2])
    } else {
        (v[k / 2 - 1], v[k / 2])
    };
    if b == usize::MAX {
        None
    } else {
        Some((a as f64 + b as f64) / 2.0)
    }
}

/// Aligned text table of bound reports.
pub fn render_table<T: Scalar>(reports: &[BoundReport<T>]) -> String {
    let header = ["quantity", "agent", "measured", "bound", "slack", "satisfied"];
    let rows: Vec<[String; 6]> = reports
        .iter()
        .map(|r| {
            [
                r.quantity.clone(),
                r.agent.map_or("-".to_string(), |a| (a + 1).to_string()),
                format!("{:.6e}", r.measured.as_f64()),
                format!("{:.6e}", r.bound.as_f64()),
                format!("{:.6e}", r.slack.as_f64()),
                r.satisfied.to_string(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: &[&str], out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&header, &mut out);
    for row in &rows {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>(), &mut out);
    }
    let caveats: Vec<&str> = reports.iter().filter_map(|r| r.caveat.as_deref()).collect();
    if let Some(c) = caveats.first() {
        let _ = writeln!(out, "caveat: {c}");
    }
    out
}
