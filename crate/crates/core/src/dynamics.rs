//! Synchronous-round simulation of DGD, NDGD and plain gradient descent on `Q_α`.
//!
//! Each round reads the round-`k` buffer and writes a separate round-`k+1` buffer, so no agent
//! ever observes a mixed round. An agent's update goes through a [`NeighborhoodView`] that only
//! hands out the blocks of the agent itself and its graph neighbours; in audit mode every read is
//! logged and compared against that neighbourhood.

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::diagnostics::dist_to_reference;
use crate::linalg::{distance, norm2};
use crate::noise::{NoiseError, NoiseSpec, NoiseStreams};
use crate::objective::{Problem, StepSize};
use crate::scalar::Scalar;
use crate::state::StackedState;

/// Iteration count up to which every iterate is recorded by default.
pub const DENSE_RECORDING_LIMIT: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Dgd,
    Ndgd,
    GdOnQ,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Dgd, Variant::Ndgd, Variant::GdOnQ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dgd => "DGD",
            Variant::Ndgd => "NDGD",
            Variant::GdOnQ => "GD_on_Q",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown variant {0:?} (expected DGD, NDGD or GD_on_Q)")]
pub struct UnknownVariant(pub String);

impl FromStr for Variant {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "dgd" => Ok(Variant::Dgd),
            "ndgd" => Ok(Variant::Ndgd),
            "gd_on_q" | "gdonq" | "gd_q" => Ok(Variant::GdOnQ),
            _ => Err(UnknownVariant(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState<T> {
    /// Every agent starts at the same point.
    Broadcast(Vec<T>),
    Stacked(StackedState<T>),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StopRule<T> {
    /// Stop once `‖∇Q_α(x̂ᵏ)‖` falls below this.
    pub grad_norm_below: Option<T>,
    /// Stop once the consensus error and `‖∇f(x̄ᵏ)‖` are both below the respective thresholds.
    pub consensus_and_f_grad: Option<(T, T)>,
}

impl<T: Scalar> StopRule<T> {
    pub fn grad_norm_below(tol: T) -> Self {
        Self {
            grad_norm_below: Some(tol),
            consensus_and_f_grad: None,
        }
    }

    fn is_empty(&self) -> bool {
        self.grad_norm_below.is_none() && self.consensus_and_f_grad.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig<T> {
    pub alpha: T,
    pub max_iterations: usize,
    pub init: InitialState<T>,
    pub noise: NoiseSpec<T>,
    pub master_seed: u64,
    /// Telemetry thinning; `None` picks 1 up to [`DENSE_RECORDING_LIMIT`] iterations, else 10.
    pub record_every: Option<usize>,
    pub stop: Option<StopRule<T>>,
    /// Points (minimizers, saddles) whose distance is tracked in every record.
    pub references: Vec<Vec<T>>,
    /// Keep the full stacked state in every record.
    pub record_blocks: bool,
    /// Log read sets and spot-check the stacked/gradient-on-`Q` equivalence at recorded rounds.
    pub audit: bool,
    /// Run the agent updates of a round on the rayon pool.
    pub parallel_agents: bool,
    /// Ball `(center, radius)` whose first exit by the consensus average is tracked at every
    /// iteration, independently of the telemetry thinning.
    pub escape: Option<(Vec<T>, T)>,
}

impl<T: Scalar> RunConfig<T> {
    pub fn new(alpha: T, max_iterations: usize, init: InitialState<T>) -> Self {
        Self {
            alpha,
            max_iterations,
            init,
            noise: NoiseSpec::none(),
            master_seed: 0,
            record_every: None,
            stop: None,
            references: Vec::new(),
            record_blocks: false,
            audit: false,
            parallel_agents: false,
            escape: None,
        }
    }

    pub fn effective_record_every(&self) -> usize {
        self.record_every.unwrap_or(if self.max_iterations <= DENSE_RECORDING_LIMIT {
            1
        } else {
            10
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error("step size must be positive and finite, got {0}")]
    StepSize(f64),
    #[error("max_iterations must be at least 1")]
    ZeroIterations,
    #[error("record_every must be at least 1")]
    ZeroRecordEvery,
    #[error("initial state is {found_agents}x{found_dim}, problem is {agents}x{dim}")]
    InitShape {
        agents: usize,
        dim: usize,
        found_agents: usize,
        found_dim: usize,
    },
    #[error("initial state is not finite")]
    NonFiniteInit,
    #[error("reference point {index} has dimension {found}, expected {expected}")]
    ReferenceDimension {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("escape center has dimension {found}, expected {expected}")]
    EscapeCenter { expected: usize, found: usize },
    #[error("escape radius must be positive and finite, got {0}")]
    EscapeRadius(f64),
    #[error("stop rule sets no criterion")]
    EmptyStopRule,
    #[error("invalid noise: {0}")]
    Noise(#[from] NoiseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    GradNormBelow,
    ConsensusAndFGrad,
    Diverged,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::MaxIterations => "max_iterations",
            StopReason::GradNormBelow => "grad_norm_below",
            StopReason::ConsensusAndFGrad => "consensus_and_f_grad",
            StopReason::Diverged => "diverged",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord<T> {
    pub iteration: usize,
    pub q_value: T,
    pub q_grad_norm: T,
    pub consensus_error: T,
    pub f_of_mean: T,
    pub mean: Vec<T>,
    /// Distance of the consensus average to the closest reference and that reference's index.
    pub mean_ref_dist: Option<(T, usize)>,
    /// Per-agent distance to the closest reference (empty without references).
    pub agent_ref_dist: Vec<T>,
    pub blocks: Option<StackedState<T>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuditReport {
    pub rounds: usize,
    pub reads: usize,
    /// Reads of blocks outside `{i} ∪ neighbors(i)`.
    pub out_of_neighborhood_reads: usize,
    /// Rounds in which an agent read less than its whole neighbourhood.
    pub incomplete_read_sets: usize,
    pub equivalence_checks: usize,
    /// Largest `‖step(x̂) − (x̂ − α(∇Q_α(x̂) + ξ))‖ / max(1, ‖x̂‖)` over the checks.
    pub max_equivalence_error: f64,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.out_of_neighborhood_reads == 0 && self.incomplete_read_sets == 0
    }

    fn merge_reads(&mut self, reads: &[ReadLog]) {
        for log in reads {
            self.reads += log.reads;
            self.out_of_neighborhood_reads += log.outside;
            self.incomplete_read_sets += usize::from(!log.complete);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub variant: Variant,
    pub records: Vec<TrajectoryRecord<T>>,
    pub final_state: StackedState<T>,
    pub iterations_run: usize,
    pub stop_reason: StopReason,
    pub audit: Option<AuditReport>,
    /// First iteration whose consensus average left the configured escape ball.
    pub escape_iteration: Option<usize>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn last_record(&self) -> &TrajectoryRecord<T> {
        self.records.last().expect("a trajectory records its initial state")
    }
}

/// Read access of one agent to the round buffer, restricted to its neighbourhood.
pub struct NeighborhoodView<'a, T> {
    state: &'a StackedState<T>,
    agent: usize,
    neighbourhood: &'a [usize],
    log: Option<RefCell<Vec<usize>>>,
}

impl<'a, T: Scalar> NeighborhoodView<'a, T> {
    pub fn agent(&self) -> usize {
        self.agent
    }

    /// Block `j` of the round state. Reading outside the neighbourhood is recorded in audit mode.
    pub fn read(&self, j: usize) -> &'a [T] {
        if let Some(log) = &self.log {
            log.borrow_mut().push(j);
        }
        self.state.block(j)
    }

    fn finish(self) -> ReadLog {
        let Some(log) = self.log else {
            return ReadLog::default();
        };
        let mut seen = log.into_inner();
        let reads = seen.len();
        let outside = seen
            .iter()
            .filter(|j| self.neighbourhood.binary_search(j).is_err())
            .count();
        seen.sort_unstable();
        seen.dedup();
        let complete = self
            .neighbourhood
            .iter()
            .all(|j| seen.binary_search(j).is_ok());
        ReadLog {
            reads,
            outside,
            complete,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct ReadLog {
    reads: usize,
    outside: usize,
    complete: bool,
}

/// Local update of one agent: `Σ_j W_ij x̂_j − α(∇f_i(x̂_i) + ξ_i)`.
fn agent_update<T: Scalar>(
    problem: &Problem<T>,
    alpha: T,
    view: &NeighborhoodView<'_, T>,
    noise: Option<&[T]>,
    out: &mut [T],
) {
    let i = view.agent();
    out.iter_mut().for_each(|v| *v = T::zero());
    for &(j, wij) in problem.mixing().row_support(i) {
        for (o, &x) in out.iter_mut().zip(view.read(j)) {
            *o += wij * x;
        }
    }
    let grad = problem.objective(i).gradient(view.read(i));
    match noise {
        None => {
            for (o, g) in out.iter_mut().zip(grad) {
                *o -= alpha * g;
            }
        }
        Some(xi) => {
            for ((o, g), &e) in out.iter_mut().zip(grad).zip(xi) {
                *o -= alpha * (g + e);
            }
        }
    }
}

/// Shared description of the agents' neighbourhoods (`{i} ∪ neighbors(i)`, sorted).
struct Neighbourhoods(Vec<Vec<usize>>);

impl Neighbourhoods {
    fn new<T: Scalar>(problem: &Problem<T>) -> Self {
        let graph = problem.graph();
        Self(
            (0..problem.num_agents())
                .map(|i| {
                    let mut v = graph.neighbors(i).expect("agent index in range").to_vec();
                    v.push(i);
                    v.sort_unstable();
                    v
                })
                .collect(),
        )
    }
}

/// One synchronous round of DGD (`noise = None`) or NDGD, written into `next`.
#[allow(clippy::too_many_arguments)]
fn local_round<T: Scalar>(
    problem: &Problem<T>,
    alpha: T,
    hoods: &Neighbourhoods,
    current: &StackedState<T>,
    next: &mut StackedState<T>,
    noise: Option<(&NoiseSpec<T>, &NoiseStreams, u64)>,
    audit: bool,
    parallel: bool,
) -> Result<Vec<ReadLog>, NoiseError> {
    let n = problem.dim();
    let work = |(i, out): (usize, &mut [T])| -> Result<ReadLog, NoiseError> {
        let xi = match noise {
            Some((spec, streams, k)) if !spec.is_none() => Some(streams.stream(i).sample(spec, k, n)?),
            _ => None,
        };
        let view = NeighborhoodView {
            state: current,
            agent: i,
            neighbourhood: &hoods.0[i],
            log: audit.then(|| RefCell::new(Vec::with_capacity(hoods.0[i].len() + 1))),
        };
        agent_update(problem, alpha, &view, xi.as_deref(), out);
        Ok(view.finish())
    };
    let buf = next.as_mut_slice();
    if parallel {
        buf.par_chunks_mut(n).enumerate().map(work).collect()
    } else {
        buf.chunks_mut(n).enumerate().map(work).collect()
    }
}

fn check_alpha<T: Scalar>(alpha: T) -> StepSize<T> {
    StepSize::new(alpha).expect("step size must be positive and finite")
}

/// `x̂ᵏ⁺¹ = Ŵx̂ᵏ − α∇F(x̂ᵏ)`, computed agent by agent from neighbourhood reads.
pub fn dgd_step<T: Scalar>(problem: &Problem<T>, alpha: T, x: &StackedState<T>) -> StackedState<T> {
    check_alpha(alpha);
    let hoods = Neighbourhoods::new(problem);
    let mut next = problem.zero_state();
    assert!(x.same_shape(&next), "state shape does not match the problem");
    local_round(problem, alpha, &hoods, x, &mut next, None, false, false).expect("no noise drawn");
    next
}

/// Noisy step with `ξ_i` drawn from agent `i`'s stream at `iteration`.
pub fn ndgd_step<T: Scalar>(
    problem: &Problem<T>,
    alpha: T,
    x: &StackedState<T>,
    noise: &NoiseSpec<T>,
    streams: &NoiseStreams,
    iteration: u64,
) -> Result<StackedState<T>, NoiseError> {
    check_alpha(alpha);
    assert_eq!(streams.len(), problem.num_agents(), "one noise stream per agent");
    let hoods = Neighbourhoods::new(problem);
    let mut next = problem.zero_state();
    assert!(x.same_shape(&next), "state shape does not match the problem");
    local_round(
        problem,
        alpha,
        &hoods,
        x,
        &mut next,
        Some((noise, streams, iteration)),
        false,
        false,
    )?;
    Ok(next)
}

/// Centralized gradient step `x̂ − α∇Q_α(x̂)`.
pub fn gd_on_q_step<T: Scalar>(problem: &Problem<T>, alpha: T, x: &StackedState<T>) -> StackedState<T> {
    let g = problem.q_grad(check_alpha(alpha), x);
    x.add_scaled(-alpha, &g)
}

fn make_record<T: Scalar>(
    problem: &Problem<T>,
    alpha: StepSize<T>,
    cfg: &RunConfig<T>,
    k: usize,
    x: &StackedState<T>,
    q_grad_norm: Option<T>,
) -> TrajectoryRecord<T> {
    let mean = x.consensus_average();
    TrajectoryRecord {
        iteration: k,
        q_value: problem.q_value(alpha, x),
        q_grad_norm: q_grad_norm.unwrap_or_else(|| problem.q_grad_norm(alpha, x)),
        consensus_error: x.consensus_error(),
        f_of_mean: problem.f_value(&mean),
        mean_ref_dist: dist_to_reference(&mean, &cfg.references).ok(),
        agent_ref_dist: if cfg.references.is_empty() {
            Vec::new()
        } else {
            x.blocks()
                .map(|b| dist_to_reference(b, &cfg.references).map_or(T::zero(), |(d, _)| d))
                .collect()
        },
        mean,
        blocks: cfg.record_blocks.then(|| x.clone()),
    }
}

fn validate<T: Scalar>(problem: &Problem<T>, cfg: &RunConfig<T>) -> Result<StackedState<T>, RunError> {
    if !(cfg.alpha.is_finite() && cfg.alpha > T::zero()) {
        return Err(RunError::StepSize(cfg.alpha.as_f64()));
    }
    if cfg.max_iterations == 0 {
        return Err(RunError::ZeroIterations);
    }
    if cfg.record_every == Some(0) {
        return Err(RunError::ZeroRecordEvery);
    }
    let (m, n) = (problem.num_agents(), problem.dim());
    let init = match &cfg.init {
        InitialState::Broadcast(x) => {
            if x.len() != n {
                return Err(RunError::InitShape {
                    agents: m,
                    dim: n,
                    found_agents: m,
                    found_dim: x.len(),
                });
            }
            StackedState::broadcast(m, x)
        }
        InitialState::Stacked(s) => {
            if s.num_agents() != m || s.dim() != n {
                return Err(RunError::InitShape {
                    agents: m,
                    dim: n,
                    found_agents: s.num_agents(),
                    found_dim: s.dim(),
                });
            }
            s.clone()
        }
    };
    if !init.is_finite() {
        return Err(RunError::NonFiniteInit);
    }
    for (index, r) in cfg.references.iter().enumerate() {
        if r.len() != n {
            return Err(RunError::ReferenceDimension {
                index,
                expected: n,
                found: r.len(),
            });
        }
    }
    if let Some((center, radius)) = &cfg.escape {
        if center.len() != n {
            return Err(RunError::EscapeCenter {
                expected: n,
                found: center.len(),
            });
        }
        if !(radius.is_finite() && *radius > T::zero()) {
            return Err(RunError::EscapeRadius(radius.as_f64()));
        }
    }
    if cfg.stop.is_some_and(|s| s.is_empty()) {
        return Err(RunError::EmptyStopRule);
    }
    cfg.noise.validate(m, n, problem.mixing().lambda_min())?;
    Ok(init)
}

/// Iterates `variant` from the configured initial state for up to `max_iterations` rounds.
///
/// The initial state is always recorded as iteration 0 and the final state is always recorded,
/// whatever the thinning. A non-finite iterate stops the run with [`StopReason::Diverged`]; the
/// returned `final_state` is then the last finite iterate.
pub fn run<T: Scalar>(
    problem: &Problem<T>,
    cfg: &RunConfig<T>,
    variant: Variant,
) -> Result<Trajectory<T>, RunError> {
    let mut current = validate(problem, cfg)?;
    let alpha = StepSize::new(cfg.alpha).expect("validated");
    let record_every = cfg.effective_record_every();
    let hoods = Neighbourhoods::new(problem);
    let streams = NoiseStreams::new(cfg.master_seed, problem.num_agents());
    let mut next = problem.zero_state();
    let mut records = Vec::new();
    let mut audit = cfg.audit.then(AuditReport::default);
    let mut stop_reason = StopReason::MaxIterations;
    let mut escaped = None;
    let mut k = 0;

    loop {
        if let (None, Some((center, radius))) = (escaped, &cfg.escape) {
            if distance(&current.consensus_average(), center) > *radius {
                escaped = Some(k);
            }
        }
        let recorded = k % record_every == 0;
        let need_grad = recorded || cfg.stop.is_some_and(|s| s.grad_norm_below.is_some());
        let grad_norm = need_grad.then(|| problem.q_grad_norm(alpha, &current));
        if let Some(rule) = cfg.stop {
            if let Some(reason) = check_stop(problem, &rule, &current, grad_norm) {
                stop_reason = reason;
                records.push(make_record(problem, alpha, cfg, k, &current, grad_norm));
                break;
            }
        }
        if k == cfg.max_iterations {
            records.push(make_record(problem, alpha, cfg, k, &current, grad_norm));
            break;
        }
        if recorded {
            records.push(make_record(problem, alpha, cfg, k, &current, grad_norm));
        }

        match variant {
            Variant::GdOnQ => {
                let g = problem.q_grad(alpha, &current);
                for ((o, &x), &gi) in next
                    .as_mut_slice()
                    .iter_mut()
                    .zip(current.as_slice())
                    .zip(g.as_slice())
                {
                    *o = x - cfg.alpha * gi;
                }
            }
            Variant::Dgd | Variant::Ndgd => {
                let noise = (variant == Variant::Ndgd).then_some((&cfg.noise, &streams, k as u64));
                let logs = local_round(
                    problem,
                    cfg.alpha,
                    &hoods,
                    &current,
                    &mut next,
                    noise,
                    cfg.audit,
                    cfg.parallel_agents,
                )?;
                if let Some(a) = audit.as_mut() {
                    a.rounds += 1;
                    a.merge_reads(&logs);
                    if recorded {
                        let err = equivalence_error(problem, alpha, &current, &next, noise)?;
                        a.equivalence_checks += 1;
                        a.max_equivalence_error = a.max_equivalence_error.max(err);
                    }
                }
            }
        }

        if !next.is_finite() {
            stop_reason = StopReason::Diverged;
            if !recorded {
                records.push(make_record(problem, alpha, cfg, k, &current, None));
            }
            break;
        }
        std::mem::swap(&mut current, &mut next);
        k += 1;
    }

    Ok(Trajectory {
        variant,
        records,
        final_state: current,
        iterations_run: k,
        stop_reason,
        audit,
        escape_iteration: escaped,
    })
}

fn check_stop<T: Scalar>(
    problem: &Problem<T>,
    rule: &StopRule<T>,
    x: &StackedState<T>,
    grad_norm: Option<T>,
) -> Option<StopReason> {
    if let (Some(tol), Some(g)) = (rule.grad_norm_below, grad_norm) {
        if g <= tol {
            return Some(StopReason::GradNormBelow);
        }
    }
    if let Some((cons_tol, grad_tol)) = rule.consensus_and_f_grad {
        if x.consensus_error() <= cons_tol && norm2(&problem.f_grad(&x.consensus_average())) <= grad_tol {
            return Some(StopReason::ConsensusAndFGrad);
        }
    }
    None
}

/// Relative distance between a local round and the centralized step on `Q_α` with the same noise.
fn equivalence_error<T: Scalar>(
    problem: &Problem<T>,
    alpha: StepSize<T>,
    x: &StackedState<T>,
    stepped: &StackedState<T>,
    noise: Option<(&NoiseSpec<T>, &NoiseStreams, u64)>,
) -> Result<f64, NoiseError> {
    let mut g = problem.q_grad(alpha, x);
    if let Some((spec, streams, k)) = noise {
        if !spec.is_none() {
            for i in 0..problem.num_agents() {
                let xi = streams.stream(i).sample(spec, k, problem.dim())?;
                for (gv, e) in g.block_mut(i).iter_mut().zip(xi) {
                    *gv += e;
                }
            }
        }
    }
    let expected = x.add_scaled(-alpha.get(), &g);
    let scale = T::one().max(x.norm());
    Ok((expected.distance(stepped) / scale).as_f64())
}
