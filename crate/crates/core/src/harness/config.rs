//! TOML experiment configuration.
//!
//! A config either spells out every section or names a builtin problem in `[problem] builtin`,
//! in which case the builtin's preset document is loaded first and the user's tables are merged
//! on top of it key by key. Agent indices in `[network] edges` are 1-based.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::dynamics::{InitialState, RunConfig, StopRule, Variant};
use crate::graph::NetworkGraph;
use crate::linalg::DenseMatrix;
use crate::mixing::validate_mixing;
use crate::noise::{NoiseKind, NoiseSpec, DEFAULT_SAFETY_FACTOR};
use crate::objective::builtin::{five_agent_objectives, BUILTIN_NAMES, FIVE_AGENT_SADDLE, FIVE_AGENT_SADDLE_ALIAS};
use crate::objective::polynomial::{Monomial, Polynomial, PolynomialObjective};
use crate::objective::{LocalObjective, Problem, SmoothFunction};
use crate::state::StackedState;

use super::generate_mixing;

pub const DEFAULT_OUTPUT_DIR: &str = "ndgd-out";

/// Preset for the five-agent saddle example.
pub const FIVE_AGENT_PRESET: &str = r#"
[problem]
builtin = "paper-sec5"

[network]
agents = 5
edges = [[1, 3], [3, 4], [4, 2], [2, 5], [5, 1]]

[mixing]
matrix = [
  [0.6, 0.0, 0.2, 0.0, 0.2],
  [0.0, 0.6, 0.0, 0.2, 0.2],
  [0.2, 0.0, 0.6, 0.2, 0.0],
  [0.0, 0.2, 0.2, 0.6, 0.0],
  [0.2, 0.2, 0.0, 0.0, 0.6],
]

[run]
alpha = 0.005
max_iterations = 20000
init = [1e-6, 1e-6]

[noise]
kind = "sphere"
epsilon = 1.0
safety_factor = 0.5

[experiment]
variants = ["DGD", "NDGD"]
seed_count = 20
references = [[0.7071067811865476, 0.0], [-0.7071067811865476, 0.0]]

[escape]
center = [0.0, 0.0]
radius = 0.1
"#;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn parse_error(text: &str, err: toml::de::Error) -> ConfigError {
    let (line, column) = err.span().map_or((0, 0), |s| line_col(text, s.start));
    ConfigError::Parse {
        line,
        column,
        message: err.message().trim().to_string(),
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    problem: Option<RawProblem>,
    network: Option<RawNetwork>,
    mixing: Option<RawMixing>,
    run: Option<RawRun>,
    noise: Option<RawNoise>,
    experiment: Option<RawExperiment>,
    escape: Option<RawEscape>,
    diagnostics: Option<RawDiagnostics>,
    output: Option<RawOutput>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    builtin: Option<String>,
    dim: Option<usize>,
    agents: Option<Vec<RawAgent>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    terms: Vec<RawTerm>,
    lipschitz_grad: Option<f64>,
    lipschitz_hess: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerm {
    exponents: Vec<u32>,
    coeff: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    agents: Option<usize>,
    topology: Option<String>,
    edges: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMixing {
    matrix: Option<Vec<Vec<f64>>>,
    generator: Option<String>,
    beta: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    alpha: Option<f64>,
    max_iterations: Option<usize>,
    init: Option<Vec<f64>>,
    init_stacked: Option<Vec<Vec<f64>>>,
    record_every: Option<usize>,
    parallel_agents: Option<bool>,
    stop: Option<RawStop>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStop {
    grad_norm_below: Option<f64>,
    consensus_below: Option<f64>,
    f_grad_below: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    kind: Option<String>,
    radius: Option<f64>,
    std: Option<f64>,
    epsilon: Option<f64>,
    safety_factor: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    variants: Option<Vec<String>>,
    seeds: Option<Vec<u64>>,
    seed_count: Option<usize>,
    base_seed: Option<u64>,
    workers: Option<usize>,
    references: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEscape {
    center: Option<Vec<f64>>,
    radius: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiagnostics {
    enabled: Option<bool>,
    stationary_grad_tol: Option<f64>,
    stationarity_tol: Option<f64>,
    max_iterations: Option<usize>,
    lipschitz_box_radius: Option<f64>,
    zeta: Option<f64>,
    descent_samples: Option<usize>,
    descent_point: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
    wide_columns: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscapeSpec {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsSpec {
    /// Gradient-norm stop used to locate the stationary point the bounds are evaluated at.
    pub stationary_grad_tol: f64,
    /// Residual above which bound reports carry a non-stationarity caveat.
    pub stationarity_tol: f64,
    pub max_iterations: usize,
    /// Half-width of the box the local Lipschitz constants are taken over; `None` uses the
    /// largest coordinate magnitude seen along the run, with 10% headroom.
    pub lipschitz_box_radius: Option<f64>,
    pub zeta: Option<f64>,
    pub descent_samples: usize,
    /// Broadcast point for the one-step descent estimate; `None` skips it.
    pub descent_point: Option<Vec<f64>>,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            stationary_grad_tol: 1e-9,
            stationarity_tol: crate::diagnostics::DEFAULT_STATIONARITY_TOL,
            max_iterations: 200_000,
            lipschitz_box_radius: None,
            zeta: None,
            descent_samples: 10_000,
            descent_point: None,
        }
    }
}

/// A fully validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem_label: String,
    pub problem: Problem<f64>,
    /// Run settings shared by every (variant, seed) pair; the seed is set per pair.
    pub run: RunConfig<f64>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub workers: Option<usize>,
    pub references: Vec<Vec<f64>>,
    pub escape: Option<EscapeSpec>,
    pub diagnostics: Option<DiagnosticsSpec>,
    pub output_dir: PathBuf,
    pub wide_columns: bool,
}

impl ExperimentConfig {
    pub fn run_for(&self, seed: u64) -> RunConfig<f64> {
        RunConfig {
            master_seed: seed,
            ..self.run.clone()
        }
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

fn deep_merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => deep_merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Keys that are alternatives to each other within a section: setting one in the user document
/// drops the others from the preset before merging.
const ALTERNATIVES: &[(&str, &[&[&str]])] = &[
    ("mixing", &[&["matrix"], &["generator", "beta"]]),
    ("run", &[&["init"], &["init_stacked"]]),
    ("network", &[&["edges"], &["topology"]]),
    ("experiment", &[&["seeds"], &["seed_count", "base_seed"]]),
    ("noise", &[&["radius", "std"], &["epsilon"]]),
];

fn drop_overridden_alternatives(base: &mut toml::Table, over: &toml::Table) {
    for (section, groups) in ALTERNATIVES {
        let (Some(toml::Value::Table(b)), Some(toml::Value::Table(o))) = (base.get_mut(*section), over.get(*section))
        else {
            continue;
        };
        for (g, group) in groups.iter().enumerate() {
            if group.iter().any(|k| o.contains_key(*k)) {
                for (h, other) in groups.iter().enumerate() {
                    if h != g {
                        for k in other.iter() {
                            if !o.contains_key(*k) {
                                b.remove(*k);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn preset_for(builtin: &str) -> Option<&'static str> {
    match builtin {
        FIVE_AGENT_SADDLE | FIVE_AGENT_SADDLE_ALIAS => Some(FIVE_AGENT_PRESET),
        _ => None,
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    // Typed parse of the user document alone, so type errors carry its line and column.
    let user: RawConfig = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    let builtin = user.problem.as_ref().and_then(|p| p.builtin.clone());
    let raw = match builtin.as_deref() {
        Some(name) => {
            let preset = preset_for(name).ok_or_else(|| {
                invalid(
                    "problem.builtin",
                    format!("unknown builtin {name:?} (known: {})", BUILTIN_NAMES.join(", ")),
                )
            })?;
            let mut table: toml::Table = toml::from_str(preset).expect("preset parses");
            let over: toml::Table = toml::from_str(text).map_err(|e| parse_error(text, e))?;
            if over
                .get("problem")
                .and_then(|p| p.get("agents"))
                .is_some()
            {
                return Err(invalid("problem.agents", "cannot be combined with problem.builtin"));
            }
            drop_overridden_alternatives(&mut table, &over);
            deep_merge(&mut table, over);
            let mut merged = RawConfig::deserialize(toml::Value::Table(table))
                .map_err(|e| invalid("config", e.message()))?;
            // keep the user's spelling of the builtin name
            merged.problem.get_or_insert_with(Default::default).builtin = Some(name.to_string());
            merged
        }
        None => user,
    };
    build(raw)
}

fn positive(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn require<T>(v: Option<T>, field: &str) -> Result<T, ConfigError> {
    v.ok_or_else(|| invalid(field, "is required"))
}

fn build_objectives(p: &RawProblem) -> Result<(String, Vec<LocalObjective<f64>>, usize), ConfigError> {
    if let Some(name) = &p.builtin {
        if p.dim.is_some() {
            return Err(invalid("problem.dim", "cannot be combined with problem.builtin"));
        }
        let objs = five_agent_objectives::<f64>()
            .into_iter()
            .map(|f| LocalObjective::new(f).expect("builtin derivatives are consistent"))
            .collect();
        return Ok((name.clone(), objs, 2));
    }
    let agents = require(p.agents.as_ref(), "problem.agents")?;
    if agents.is_empty() {
        return Err(invalid("problem.agents", "needs at least one agent"));
    }
    let dim = match p.dim {
        Some(d) => d,
        None => agents[0]
            .terms
            .first()
            .map(|t| t.exponents.len())
            .ok_or_else(|| invalid("problem.dim", "is required when the first agent has no terms"))?,
    };
    let mut objs = Vec::with_capacity(agents.len());
    for (i, a) in agents.iter().enumerate() {
        let field = format!("problem.agents[{}]", i + 1);
        let terms = a
            .terms
            .iter()
            .map(|t| Monomial::new(t.exponents.clone(), t.coeff))
            .collect();
        let poly = Polynomial::new(dim, terms).map_err(|e| invalid(&format!("{field}.terms"), e))?;
        let f: Arc<dyn SmoothFunction<f64>> = Arc::new(PolynomialObjective::new(poly));
        let obj = LocalObjective::from_arc(f)
            .and_then(|o| o.with_lipschitz(a.lipschitz_grad, a.lipschitz_hess))
            .map_err(|e| invalid(&field, e))?;
        objs.push(obj);
    }
    Ok(("inline".to_string(), objs, dim))
}

fn build_graph(net: &RawNetwork, m: usize) -> Result<NetworkGraph, ConfigError> {
    if let Some(a) = net.agents {
        if a != m {
            return Err(invalid(
                "network.agents",
                format!("is {a} but the problem defines {m} agents"),
            ));
        }
    }
    match (&net.topology, &net.edges) {
        (Some(_), Some(_)) => Err(invalid("network.topology", "cannot be combined with network.edges")),
        (Some(t), None) => match t.as_str() {
            "cycle" => NetworkGraph::cycle(m),
            "path" => NetworkGraph::path(m),
            "complete" => NetworkGraph::complete(m),
            "star" => NetworkGraph::star(m),
            other => {
                return Err(invalid(
                    "network.topology",
                    format!("unknown topology {other:?} (cycle, path, complete, star)"),
                ))
            }
        }
        .map_err(|e| invalid("network.topology", e)),
        (None, edges) => {
            let edges = edges.clone().unwrap_or_default();
            NetworkGraph::from_one_based(m, edges.iter().map(|e| (e[0], e[1])))
                .map_err(|e| invalid("network.edges", e))
        }
    }
}

fn build_noise(raw: Option<&RawNoise>, m: usize, n: usize, lambda_min: f64) -> Result<NoiseSpec<f64>, ConfigError> {
    let Some(raw) = raw else {
        return Ok(NoiseSpec::none());
    };
    let safety = raw.safety_factor.unwrap_or(DEFAULT_SAFETY_FACTOR);
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(invalid("noise.safety_factor", format!("must lie in (0, 1], got {safety}")));
    }
    let epsilon = raw.epsilon.map(|e| positive("noise.epsilon", e)).transpose()?;
    let kind = raw.kind.as_deref().unwrap_or("sphere");
    let spec = match kind {
        "none" => NoiseSpec::none(),
        "sphere" => match (raw.radius, epsilon) {
            (Some(r), _) => NoiseSpec {
                kind: NoiseKind::Sphere {
                    radius: positive("noise.radius", r)?,
                },
                epsilon,
                safety_factor: safety,
            },
            (None, Some(eps)) => NoiseSpec::sphere_at_budget(eps, safety, m, n, lambda_min)
                .map_err(|e| invalid("noise", e))?,
            (None, None) => return Err(invalid("noise.radius", "sphere noise needs a radius or an epsilon")),
        },
        "gaussian" => match (raw.std, epsilon) {
            (Some(s), _) => NoiseSpec {
                kind: NoiseKind::Gaussian {
                    std: positive("noise.std", s)?,
                },
                epsilon,
                safety_factor: safety,
            },
            (None, Some(eps)) => NoiseSpec::gaussian_at_budget(eps, safety, m, n, lambda_min)
                .map_err(|e| invalid("noise", e))?,
            (None, None) => return Err(invalid("noise.std", "gaussian noise needs a std or an epsilon")),
        },
        other => {
            return Err(invalid(
                "noise.kind",
                format!("unknown kind {other:?} (none, sphere, gaussian)"),
            ))
        }
    };
    spec.validate(m, n, lambda_min).map_err(|e| invalid("noise", e))?;
    Ok(spec)
}

fn check_point(field: &str, v: &[f64], n: usize) -> Result<(), ConfigError> {
    if v.len() != n {
        return Err(invalid(field, format!("has {} coordinates, expected {n}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid(field, "must be finite"));
    }
    Ok(())
}

fn build(raw: RawConfig) -> Result<ExperimentConfig, ConfigError> {
    let problem_raw = require(raw.problem.as_ref(), "problem")?;
    let (label, objectives, n) = build_objectives(problem_raw)?;
    let m = objectives.len();
    let graph = build_graph(&raw.network.clone().unwrap_or_default(), m)?;

    let mixing_raw = require(raw.mixing.as_ref(), "mixing")?;
    let weights = match (&mixing_raw.matrix, &mixing_raw.generator) {
        (Some(_), Some(_)) => return Err(invalid("mixing.generator", "cannot be combined with mixing.matrix")),
        (Some(rows), None) => DenseMatrix::from_rows(rows)
            .filter(|w| w.is_square())
            .ok_or_else(|| invalid("mixing.matrix", "must be a square matrix"))?,
        (None, Some(g)) if g == "lazy_metropolis" => {
            let beta = require(mixing_raw.beta, "mixing.beta")?;
            generate_mixing(&graph, beta).map_err(|e| invalid("mixing.beta", e))?
        }
        (None, Some(g)) => {
            return Err(invalid(
                "mixing.generator",
                format!("unknown generator {g:?} (lazy_metropolis)"),
            ))
        }
        (None, None) => return Err(invalid("mixing", "needs a matrix or a generator")),
    };
    let mixing = validate_mixing(&weights, &graph).map_err(|e| invalid("mixing.matrix", e))?;
    let lambda_min = mixing.lambda_min();
    let problem = Problem::new(objectives, graph, mixing).map_err(|e| invalid("problem", e))?;

    let run_raw = raw.run.clone().unwrap_or_default();
    let alpha = positive("run.alpha", require(run_raw.alpha, "run.alpha")?)?;
    let max_iterations = require(run_raw.max_iterations, "run.max_iterations")?;
    if max_iterations == 0 {
        return Err(invalid("run.max_iterations", "must be at least 1"));
    }
    if run_raw.record_every == Some(0) {
        return Err(invalid("run.record_every", "must be at least 1"));
    }
    let init = match (&run_raw.init, &run_raw.init_stacked) {
        (Some(_), Some(_)) => return Err(invalid("run.init_stacked", "cannot be combined with run.init")),
        (Some(x), None) => {
            check_point("run.init", x, n)?;
            InitialState::Broadcast(x.clone())
        }
        (None, Some(rows)) => {
            if rows.len() != m {
                return Err(invalid(
                    "run.init_stacked",
                    format!("has {} blocks, expected {m}", rows.len()),
                ));
            }
            for (i, r) in rows.iter().enumerate() {
                check_point(&format!("run.init_stacked[{}]", i + 1), r, n)?;
            }
            InitialState::Stacked(StackedState::from_blocks(rows).expect("blocks checked"))
        }
        (None, None) => return Err(invalid("run.init", "is required")),
    };
    let stop = match &run_raw.stop {
        None => None,
        Some(s) => {
            let grad = s.grad_norm_below.map(|v| positive("run.stop.grad_norm_below", v)).transpose()?;
            let pair = match (s.consensus_below, s.f_grad_below) {
                (Some(c), Some(g)) => Some((
                    positive("run.stop.consensus_below", c)?,
                    positive("run.stop.f_grad_below", g)?,
                )),
                (None, None) => None,
                _ => {
                    return Err(invalid(
                        "run.stop",
                        "consensus_below and f_grad_below must be given together",
                    ))
                }
            };
            if grad.is_none() && pair.is_none() {
                return Err(invalid("run.stop", "sets no criterion"));
            }
            Some(StopRule {
                grad_norm_below: grad,
                consensus_and_f_grad: pair,
            })
        }
    };
    let noise = build_noise(raw.noise.as_ref(), m, n, lambda_min)?;

    let exp = raw.experiment.clone().unwrap_or_default();
    let variants = match &exp.variants {
        None => vec![Variant::Dgd],
        Some(v) => v
            .iter()
            .map(|s| s.parse::<Variant>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| invalid("experiment.variants", e))?,
    };
    if variants.is_empty() {
        return Err(invalid("experiment.variants", "needs at least one variant"));
    }
    if variants.contains(&Variant::Ndgd) && noise.is_none() {
        return Err(invalid("noise", "the NDGD variant requires a noise section with kind sphere or gaussian"));
    }
    let seeds = match (&exp.seeds, exp.seed_count) {
        (Some(s), _) if s.is_empty() => return Err(invalid("experiment.seeds", "must not be empty")),
        (Some(s), _) => s.clone(),
        (None, Some(0)) => return Err(invalid("experiment.seed_count", "must be at least 1")),
        (None, Some(c)) => {
            let base = exp.base_seed.unwrap_or(0);
            (0..c as u64).map(|k| base + k).collect()
        }
        (None, None) => vec![exp.base_seed.unwrap_or(0)],
    };
    if exp.workers == Some(0) {
        return Err(invalid("experiment.workers", "must be at least 1"));
    }
    let references = exp.references.clone().unwrap_or_default();
    for (i, r) in references.iter().enumerate() {
        check_point(&format!("experiment.references[{}]", i + 1), r, n)?;
    }

    let init_mean = match &init {
        InitialState::Broadcast(x) => x.clone(),
        InitialState::Stacked(s) => s.consensus_average(),
    };
    let escape = match &raw.escape {
        None => None,
        Some(e) => {
            let center = e.center.clone().unwrap_or(init_mean);
            check_point("escape.center", &center, n)?;
            let radius = positive("escape.radius", e.radius.unwrap_or(0.1))?;
            Some(EscapeSpec { center, radius })
        }
    };

    let diagnostics = match &raw.diagnostics {
        Some(d) if d.enabled.unwrap_or(true) => {
            let def = DiagnosticsSpec::default();
            let spec = DiagnosticsSpec {
                stationary_grad_tol: d
                    .stationary_grad_tol
                    .map(|v| positive("diagnostics.stationary_grad_tol", v))
                    .transpose()?
                    .unwrap_or(def.stationary_grad_tol),
                stationarity_tol: d
                    .stationarity_tol
                    .map(|v| positive("diagnostics.stationarity_tol", v))
                    .transpose()?
                    .unwrap_or(def.stationarity_tol),
                max_iterations: d.max_iterations.unwrap_or(def.max_iterations).max(1),
                lipschitz_box_radius: d
                    .lipschitz_box_radius
                    .map(|v| positive("diagnostics.lipschitz_box_radius", v))
                    .transpose()?,
                zeta: match d.zeta {
                    Some(z) if !(z > 0.0 && z < 1.0) => {
                        return Err(invalid("diagnostics.zeta", format!("must lie in (0, 1), got {z}")))
                    }
                    z => z,
                },
                descent_samples: match d.descent_samples {
                    Some(0) => return Err(invalid("diagnostics.descent_samples", "must be at least 1")),
                    s => s.unwrap_or(def.descent_samples),
                },
                descent_point: match &d.descent_point {
                    Some(p) => {
                        check_point("diagnostics.descent_point", p, n)?;
                        Some(p.clone())
                    }
                    None => None,
                },
            };
            Some(spec)
        }
        _ => None,
    };

    let out = raw.output.clone().unwrap_or_default();
    let wide_columns = out.wide_columns.unwrap_or(false);
    let mut run = RunConfig::new(alpha, max_iterations, init);
    run.noise = noise;
    run.record_every = run_raw.record_every;
    run.stop = stop;
    run.references = references.clone();
    run.record_blocks = wide_columns;
    run.parallel_agents = run_raw.parallel_agents.unwrap_or(false);
    run.escape = escape.as_ref().map(|e| (e.center.clone(), e.radius));

    Ok(ExperimentConfig {
        name: raw.name.clone().unwrap_or_else(|| label.clone()),
        problem_label: label,
        problem,
        run,
        variants,
        seeds,
        workers: exp.workers,
        references,
        escape,
        diagnostics,
        output_dir: PathBuf::from(out.dir.unwrap_or_else(|| DEFAULT_OUTPUT_DIR.to_string())),
        wide_columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_loads() {
        let cfg = parse_config("[problem]\nbuiltin = \"paper-sec5\"\n").unwrap();
        assert_eq!(cfg.problem.num_agents(), 5);
        assert_eq!(cfg.problem.dim(), 2);
        assert_eq!(cfg.run.alpha, 0.005);
        assert_eq!(cfg.run.init, InitialState::Broadcast(vec![1e-6, 1e-6]));
        assert_eq!(cfg.references.len(), 2);
        assert_eq!(
            cfg.escape,
            Some(EscapeSpec {
                center: vec![0.0, 0.0],
                radius: 0.1
            })
        );
        assert_eq!(cfg.variants, vec![Variant::Dgd, Variant::Ndgd]);
        assert_eq!(cfg.seeds.len(), 20);
    }

    #[test]
    fn user_tables_override_preset() {
        let text = "[problem]\nbuiltin = \"paper-sec5\"\n[run]\nmax_iterations = 7\n[experiment]\nseeds = [7]\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.run.max_iterations, 7);
        assert_eq!(cfg.run.alpha, 0.005);
        assert_eq!(cfg.seeds, vec![7]);
    }

    #[test]
    fn parse_error_has_location() {
        let err = parse_config("[run]\nalpha = = 3\n").unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
        let err = parse_config("[run]\nalpha = \"fast\"\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = parse_config("[run]\nalpah = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("alpah"), "{err}");
    }

    #[test]
    fn non_stochastic_matrix_names_row_sums() {
        let text = r#"
[problem]
builtin = "paper-sec5"
[mixing]
matrix = [
  [0.7, 0.0, 0.2, 0.0, 0.2],
  [0.0, 0.6, 0.0, 0.2, 0.2],
  [0.2, 0.0, 0.6, 0.2, 0.0],
  [0.0, 0.2, 0.2, 0.6, 0.0],
  [0.2, 0.2, 0.0, 0.0, 0.6],
]
"#;
        let err = parse_config(text).unwrap_err().to_string();
        assert!(err.contains("mixing.matrix") && err.contains("row"), "{err}");
    }

    #[test]
    fn ndgd_requires_noise() {
        let text = r#"
[problem]
dim = 1
[[problem.agents]]
terms = [{ exponents = [2], coeff = 1.0 }]
[mixing]
matrix = [[1.0]]
[run]
alpha = 0.1
max_iterations = 5
init = [1.0]
[experiment]
variants = ["NDGD"]
"#;
        let err = parse_config(text).unwrap_err();
        assert!(matches!(&err, ConfigError::Invalid { field, .. } if field == "noise"), "{err}");
    }

    #[test]
    fn generator_reproduces_five_agent_matrix() {
        let text = "[problem]\nbuiltin = \"five-agent-saddle\"\n[mixing]\ngenerator = \"lazy_metropolis\"\nbeta = 0.4\n";
        let cfg = parse_config(text).unwrap();
        let preset = parse_config("[problem]\nbuiltin = \"paper-sec5\"\n").unwrap();
        let (a, b) = (cfg.problem.mixing().weights(), preset.problem.mixing().weights());
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn stacked_init_replaces_preset_broadcast() {
        let text = "[problem]\nbuiltin = \"paper-sec5\"\n[run]\ninit_stacked = [[1,0],[0,1],[1,1],[0,0],[2,2]]\n";
        let cfg = parse_config(text).unwrap();
        match cfg.run.init {
            InitialState::Stacked(s) => assert_eq!(s.block(4), &[2.0, 2.0]),
            other => panic!("{other:?}"),
        }
    }
}
