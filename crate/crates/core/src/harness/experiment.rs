//! Runs every (variant, seed) pair of an experiment and writes the per-run trajectories, the
//! summary table and the text report.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::diagnostics::{
    computable_alpha_caps, median_escape, one_step_descent_mc, render_table, stationary_suite, AlphaCaps,
    BoundReport, CheckOptions, DescentEstimate, DiagnosticError,
};
use crate::dynamics::{run, AuditReport, InitialState, RunConfig, RunError, StopReason, StopRule, Trajectory, Variant};
use crate::noise::NoiseKind;
use crate::objective::{ObjectiveError, StepSize};
use crate::state::StackedState;

use super::config::{DiagnosticsSpec, ExperimentConfig};
use super::output::{
    final_state_file_name, fmt_num, trajectory_file_name, write_state, write_trajectory, TRAJECTORY_SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{action} {path}: {source}")]
    Io {
        action: &'static str,
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("writing {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{variant} seed {seed}: {source}")]
    Run {
        variant: Variant,
        seed: u64,
        #[source]
        source: RunError,
    },
    #[error("diagnostics: {0}")]
    Diagnostics(#[from] DiagnosticError),
    #[error("diagnostics: {0}")]
    Lipschitz(#[from] ObjectiveError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

fn io_err<'a>(action: &'static str, path: &'a Path) -> impl FnOnce(io::Error) -> HarnessError + 'a {
    move |source| HarnessError::Io {
        action,
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOptions {
    /// Enables the round engine's read-set audit on every run.
    pub audit: bool,
    /// Write nothing to disk; the summary still carries all results.
    pub dry_run: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub variant: Variant,
    pub seed: u64,
    pub escape_iteration: Option<usize>,
    /// Distance of each agent's final block to its closest reference (empty without references).
    pub final_dist_to_ref: Vec<f64>,
    pub final_consensus_error: f64,
    pub final_mean: Vec<f64>,
    pub iterations_run: usize,
    pub stop_reason: StopReason,
    pub audit: Option<AuditReport>,
    pub trajectory_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsOutcome {
    pub stationary_iterations: usize,
    pub stationary_stop: StopReason,
    pub lipschitz_box_radius: f64,
    pub residual_grad_norm: f64,
    pub reports: Vec<BoundReport<f64>>,
    pub unavailable: Vec<String>,
    pub alpha_caps: Option<AlphaCaps<f64>>,
    pub descent: Option<Result<DescentEstimate<f64>, String>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub runs: Vec<RunSummary>,
    pub diagnostics: Option<DiagnosticsOutcome>,
    pub report: String,
    pub output_dir: PathBuf,
}

impl ExperimentSummary {
    pub fn escape_median(&self, variant: Variant) -> Option<f64> {
        let v: Vec<_> = self
            .runs
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| r.escape_iteration)
            .collect();
        median_escape(&v)
    }

    pub fn runs_of(&self, variant: Variant) -> impl Iterator<Item = &RunSummary> {
        self.runs.iter().filter(move |r| r.variant == variant)
    }
}

fn summarize(variant: Variant, seed: u64, t: &Trajectory<f64>, file: Option<PathBuf>) -> RunSummary {
    let last = t.last_record();
    RunSummary {
        variant,
        seed,
        escape_iteration: t.escape_iteration,
        final_dist_to_ref: last.agent_ref_dist.clone(),
        final_consensus_error: t.final_state.consensus_error(),
        final_mean: t.final_state.consensus_average(),
        iterations_run: t.iterations_run,
        stop_reason: t.stop_reason,
        audit: t.audit.clone(),
        trajectory_file: file,
    }
}

fn run_pair(
    cfg: &ExperimentConfig,
    opts: &ExperimentOptions,
    variant: Variant,
    seed: u64,
    dir: &Path,
) -> Result<RunSummary, HarnessError> {
    let mut rc = cfg.run_for(seed);
    rc.audit = opts.audit;
    let t = run(&cfg.problem, &rc, variant).map_err(|source| HarnessError::Run { variant, seed, source })?;
    if opts.dry_run {
        return Ok(summarize(variant, seed, &t, None));
    }
    let path = dir.join(trajectory_file_name(variant, seed));
    let f = File::create(&path).map_err(io_err("creating", &path))?;
    write_trajectory(BufWriter::new(f), &t, cfg.wide_columns).map_err(|source| HarnessError::Csv {
        path: path.clone(),
        source,
    })?;
    let state_path = dir.join(final_state_file_name(variant, seed));
    write_state(&state_path, &t.final_state).map_err(io_err("writing", &state_path))?;
    Ok(summarize(variant, seed, &t, Some(path)))
}

/// Executes every (variant, seed) pair, concurrently up to the configured worker cap.
///
/// Per-run divergence is recorded in the summary and never aborts the sweep. The summary CSV and
/// report are written by the calling thread after all runs complete.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &ExperimentOptions) -> Result<ExperimentSummary, HarnessError> {
    let dir = cfg.output_dir.clone();
    if !opts.dry_run {
        fs::create_dir_all(&dir).map_err(io_err("creating", &dir))?;
    }
    let pairs: Vec<(Variant, u64)> = cfg
        .variants
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| HarnessError::Pool(e.to_string()))?;
    let runs = pool.install(|| {
        pairs
            .par_iter()
            .map(|&(v, s)| run_pair(cfg, opts, v, s, &dir))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let diagnostics = match &cfg.diagnostics {
        Some(spec) => Some(run_diagnostics(cfg, spec)?),
        None => None,
    };
    let report = render_report(cfg, &runs, diagnostics.as_ref());
    if !opts.dry_run {
        write_summary(&dir.join("summary.csv"), &runs, cfg.problem.num_agents())?;
        let report_path = dir.join("report.txt");
        fs::write(&report_path, &report).map_err(io_err("writing", &report_path))?;
        if let Some(d) = &diagnostics {
            write_bounds(&dir.join("bounds.csv"), &d.reports)?;
        }
    }
    Ok(ExperimentSummary {
        runs,
        diagnostics,
        report,
        output_dir: dir,
    })
}

/// `variant,seed,escape_iter,final_dist_to_ref_1..m,final_consensus_err,iterations_run,stop_reason`.
pub fn write_summary(path: &Path, runs: &[RunSummary], agents: usize) -> Result<(), HarnessError> {
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let f = File::create(path).map_err(io_err("creating", path))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(f));
    let mut header = vec!["variant".to_string(), "seed".to_string(), "escape_iter".to_string()];
    header.extend((1..=agents).map(|i| format!("final_dist_to_ref_{i}")));
    header.extend(["final_consensus_err", "iterations_run", "stop_reason"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for r in runs {
        let mut row = vec![
            r.variant.to_string(),
            r.seed.to_string(),
            r.escape_iteration.map_or(String::new(), |k| k.to_string()),
        ];
        if r.final_dist_to_ref.is_empty() {
            row.extend(std::iter::repeat_n(String::new(), agents));
        } else {
            row.extend(r.final_dist_to_ref.iter().map(|&d| fmt_num(d)));
        }
        row.push(fmt_num(r.final_consensus_error));
        row.push(r.iterations_run.to_string());
        row.push(r.stop_reason.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err("writing", path))?;
    Ok(())
}

/// `quantity,agent,measured,bound,slack,satisfied`.
pub fn write_bounds(path: &Path, reports: &[BoundReport<f64>]) -> Result<(), HarnessError> {
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let f = File::create(path).map_err(io_err("creating", path))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(f));
    w.write_record(["quantity", "agent", "measured", "bound", "slack", "satisfied"])
        .map_err(csv_err)?;
    for r in reports {
        w.write_record([
            r.quantity.clone(),
            r.agent.map_or(String::new(), |a| (a + 1).to_string()),
            fmt_num(r.measured),
            fmt_num(r.bound),
            fmt_num(r.slack),
            r.satisfied.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err("writing", path))?;
    Ok(())
}

/// Runs DGD to a stationary point of `Q_α`, derives box-local Lipschitz constants over the region
/// the run explored, and evaluates the bound suite there.
pub fn run_diagnostics(cfg: &ExperimentConfig, spec: &DiagnosticsSpec) -> Result<DiagnosticsOutcome, HarnessError> {
    let mut rc = RunConfig::new(cfg.run.alpha, spec.max_iterations, cfg.run.init.clone());
    rc.stop = Some(StopRule::grad_norm_below(spec.stationary_grad_tol));
    rc.record_every = Some((spec.max_iterations / 1000).max(1));
    rc.record_blocks = true;
    let t = run(&cfg.problem, &rc, Variant::Dgd).map_err(|source| HarnessError::Run {
        variant: Variant::Dgd,
        seed: 0,
        source,
    })?;
    let radius = spec.lipschitz_box_radius.unwrap_or_else(|| {
        let explored = t
            .records
            .iter()
            .filter_map(|r| r.blocks.as_ref())
            .chain(std::iter::once(&t.final_state))
            .flat_map(|b| b.as_slice().iter().map(|v| v.abs()))
            .fold(0.0f64, f64::max);
        1.1 * explored.max(1e-3)
    });
    evaluate_at(cfg, spec, &t.final_state, radius).map(|mut d| {
        d.stationary_iterations = t.iterations_run;
        d.stationary_stop = t.stop_reason;
        d
    })
}

/// Bound suite, step-size caps and (optionally) the one-step descent estimate at `x`.
pub fn evaluate_at(
    cfg: &ExperimentConfig,
    spec: &DiagnosticsSpec,
    x: &StackedState<f64>,
    lipschitz_box_radius: f64,
) -> Result<DiagnosticsOutcome, HarnessError> {
    let problem = cfg.problem.with_box_lipschitz(lipschitz_box_radius)?;
    let alpha = StepSize::new(cfg.run.alpha)?;
    let opts = CheckOptions {
        stationarity_tol: spec.stationarity_tol,
        ..CheckOptions::default()
    };
    let suite = stationary_suite(&problem, alpha, x, &opts)?;
    let alpha_caps = match spec.zeta {
        Some(z) => Some(computable_alpha_caps(&problem, z)?),
        None => None,
    };
    let descent = spec.descent_point.as_ref().map(|p| {
        let xp = StackedState::broadcast(problem.num_agents(), p);
        one_step_descent_mc(&problem, alpha, &xp, &cfg.run.noise, spec.descent_samples, 0).map_err(|e| e.to_string())
    });
    Ok(DiagnosticsOutcome {
        stationary_iterations: 0,
        stationary_stop: StopReason::MaxIterations,
        lipschitz_box_radius,
        residual_grad_norm: suite.residual_grad_norm,
        reports: suite.reports,
        unavailable: suite.unavailable,
        alpha_caps,
        descent,
    })
}

fn noise_line(cfg: &ExperimentConfig) -> String {
    let (m, n) = (cfg.problem.num_agents(), cfg.problem.dim());
    let spec = &cfg.run.noise;
    let kind = match spec.kind {
        NoiseKind::None => "none".to_string(),
        NoiseKind::Sphere { radius } => format!("sphere, radius {}", fmt_num(radius)),
        NoiseKind::Gaussian { std } => format!("gaussian, std {}", fmt_num(std)),
    };
    let mut line = format!(
        "noise: {kind}; per-coordinate variance {}",
        fmt_num(spec.per_coordinate_variance(n))
    );
    if let Some(eps) = spec.epsilon {
        let budget = crate::noise::sigma_max_sq(eps, m, n, cfg.problem.mixing().lambda_min()).unwrap_or(f64::NAN);
        let _ = write!(
            line,
            "; budget sigma_max^2({eps}) = {}, safety factor {}",
            fmt_num(budget),
            spec.safety_factor
        );
    }
    line
}

/// Text report: run header, spectrum, escape statistics, audit results and diagnostics.
pub fn render_report(cfg: &ExperimentConfig, runs: &[RunSummary], diag: Option<&DiagnosticsOutcome>) -> String {
    let mut s = String::new();
    let p = &cfg.problem;
    let spec = p.mixing().spectral();
    let _ = writeln!(s, "experiment: {}", cfg.name);
    let _ = writeln!(
        s,
        "problem: {} ({} agents, dimension {})",
        cfg.problem_label,
        p.num_agents(),
        p.dim()
    );
    let init = match &cfg.run.init {
        InitialState::Broadcast(x) => format!("broadcast {x:?}"),
        InitialState::Stacked(_) => "stacked".to_string(),
    };
    let _ = writeln!(
        s,
        "alpha: {}, max iterations: {}, init: {init}",
        cfg.run.alpha, cfg.run.max_iterations
    );
    let _ = writeln!(s, "{}", noise_line(cfg));
    let _ = writeln!(
        s,
        "mixing spectrum: lambda_2 = {}, lambda_min = {}, spectral gap = {}",
        spec.lambda_2.map_or("n/a".to_string(), fmt_num),
        fmt_num(spec.lambda_min),
        fmt_num(spec.spectral_gap())
    );
    let _ = writeln!(s, "trajectory schema: v{TRAJECTORY_SCHEMA_VERSION}");
    let _ = writeln!(s);

    let _ = writeln!(s, "runs:");
    for r in runs {
        let _ = writeln!(
            s,
            "  {:<8} seed {:<6} iterations {:<7} stop {:<20} escape {:<8} final mean {:?}",
            r.variant.to_string(),
            r.seed,
            r.iterations_run,
            r.stop_reason.to_string(),
            r.escape_iteration.map_or("never".to_string(), |k| k.to_string()),
            r.final_mean.iter().map(|v| (v * 1e6).round() / 1e6).collect::<Vec<_>>()
        );
    }

    if let Some(e) = &cfg.escape {
        let _ = writeln!(s);
        let _ = writeln!(s, "escape from ball: center {:?}, radius {}", e.center, e.radius);
        let mut medians = Vec::new();
        for &v in &cfg.variants {
            let vals: Vec<_> = runs.iter().filter(|r| r.variant == v).map(|r| r.escape_iteration).collect();
            let escaped = vals.iter().filter(|e| e.is_some()).count();
            let med = median_escape(&vals);
            medians.push((v, med));
            let _ = writeln!(
                s,
                "  {:<8} median escape iteration {} ({escaped}/{} runs escaped)",
                v.to_string(),
                med.map_or("never".to_string(), |m| m.to_string()),
                vals.len()
            );
        }
        if cfg.variants.contains(&Variant::Dgd) && cfg.variants.contains(&Variant::Ndgd) {
            let dgd = runs
                .iter()
                .find(|r| r.variant == Variant::Dgd)
                .and_then(|r| r.escape_iteration);
            let ndgd: Vec<_> = runs.iter().filter(|r| r.variant == Variant::Ndgd).collect();
            let earlier = ndgd
                .iter()
                .filter(|r| match (r.escape_iteration, dgd) {
                    (Some(a), Some(b)) => a < b,
                    (Some(_), None) => true,
                    _ => false,
                })
                .count();
            let _ = writeln!(
                s,
                "  NDGD seeds escaping before DGD: {earlier}/{} ({:.0}%)",
                ndgd.len(),
                100.0 * earlier as f64 / ndgd.len().max(1) as f64
            );
        }
    }

    let audited: Vec<_> = runs.iter().filter_map(|r| r.audit.as_ref().map(|a| (r, a))).collect();
    if !audited.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "audit:");
        for (r, a) in audited {
            let _ = writeln!(
                s,
                "  {:<8} seed {:<6} rounds {:<7} reads {:<9} out-of-neighborhood {} incomplete {} max equivalence error {:.3e}",
                r.variant.to_string(),
                r.seed,
                a.rounds,
                a.reads,
                a.out_of_neighborhood_reads,
                a.incomplete_read_sets,
                a.max_equivalence_error
            );
        }
    }

    if let Some(d) = diag {
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "diagnostics at the DGD stationary point ({} iterations, stop {}, residual ‖∇Q_α‖ = {:.3e})",
            d.stationary_iterations, d.stationary_stop, d.residual_grad_norm
        );
        let _ = writeln!(
            s,
            "Lipschitz constants taken over the box [-{r}, {r}]^n",
            r = d.lipschitz_box_radius
        );
        s.push_str(&render_table(&d.reports));
        for u in &d.unavailable {
            let _ = writeln!(s, "{u}: unavailable (no Lipschitz metadata)");
        }
        if let Some(c) = &d.alpha_caps {
            let _ = writeln!(
                s,
                "step-size caps: (sqrt2 - 1)/L = {}, lambda_min/(L max(1, ln 1/zeta)) = {} (alpha = {})",
                fmt_num(c.cap_sqrt2),
                fmt_num(c.cap_spectral),
                cfg.run.alpha
            );
        }
        match &d.descent {
            Some(Ok(e)) => {
                let _ = writeln!(
                    s,
                    "one-step descent ({} samples): mean dQ = {} ± {} (std err), bound {}, intermediate bound {}",
                    e.samples,
                    fmt_num(e.mean_delta_q),
                    fmt_num(e.std_err),
                    fmt_num(e.bound),
                    fmt_num(e.intermediate_bound)
                );
                let _ = writeln!(
                    s,
                    "note: the descent bound -(lambda_min/2) alpha m n sigma^2 follows from the intermediate \
                     bound only when sigma^2 <= lambda_min eps^2 / (2 m n); both are shown."
                );
            }
            Some(Err(e)) => {
                let _ = writeln!(s, "one-step descent: not evaluated ({e})");
            }
            None => {}
        }
    }
    s
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err("creating", parent))?;
    }
    let mut f = File::create(path).map_err(io_err("creating", path))?;
    f.write_all(text.as_bytes()).map_err(io_err("writing", path))
}
