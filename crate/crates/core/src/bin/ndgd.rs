//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 configuration or validation error, 4 runtime or I/O
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ndgd::diagnostics::render_table;
use ndgd::dynamics::Variant;
use ndgd::harness::config::DiagnosticsSpec;
use ndgd::harness::experiment::{evaluate_at, write_bounds};
use ndgd::harness::output::{fmt_num, read_state};
use ndgd::harness::{load_config, run_experiment, ExperimentConfig, ExperimentOptions, OUTPUT_DIR_ENV};
use ndgd::noise::sigma_max_sq;
use ndgd::objective::{StepSize, ToleranceSpec};

#[derive(Debug, Parser)]
#[command(name = "ndgd", version, about = "Distributed gradient descent simulator with saddle-escaping noise")]
struct Cli {
    /// Run a single seed instead of the configured seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config file).
    #[arg(long, global = true, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
    /// Log per-agent read sets and check the local rounds against the centralized step.
    #[arg(long, global = true)]
    audit: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every configured (variant, seed) pair and write trajectories, summary and report.
    Run { config: PathBuf },
    /// Load and validate a config without running it.
    Validate { config: PathBuf },
    /// Print the mixing spectrum, noise budget and step-size caps.
    Spectra { config: PathBuf },
    /// Evaluate the stationary-point bounds at a stored state.
    Diagnose {
        config: PathBuf,
        /// State file, one comma-separated line per agent.
        #[arg(long)]
        at: PathBuf,
    },
    /// Run DGD once and NDGD over the seeds, and compare escape iterations.
    EscapeCompare { config: PathBuf },
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn load(cli: &Cli, path: &PathBuf) -> Result<ExperimentConfig, Failure> {
    let mut cfg = load_config(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(d) = &cli.output_dir {
        cfg.output_dir = d.clone();
    }
    Ok(cfg)
}

fn cmd_run(cli: &Cli, cfg: &ExperimentConfig) -> Result<(), Failure> {
    let summary = run_experiment(
        cfg,
        &ExperimentOptions {
            audit: cli.audit,
            dry_run: false,
        },
    )
    .map_err(|e| Failure::Runtime(e.to_string()))?;
    print!("{}", summary.report);
    println!("output written to {}", summary.output_dir.display());
    Ok(())
}

fn cmd_spectra(cfg: &ExperimentConfig) {
    let p = &cfg.problem;
    let s = p.mixing().spectral();
    let eig: Vec<String> = s.eigenvalues.iter().map(|&v| format!("{v:.10}")).collect();
    println!("eigenvalues: {}", eig.join(" "));
    println!("lambda_max:  {}", fmt_num(s.lambda_max));
    println!(
        "lambda_2:    {}",
        s.lambda_2.map_or("n/a (single agent)".to_string(), fmt_num)
    );
    println!("lambda_min:  {}", fmt_num(s.lambda_min));
    println!("gap:         {}", fmt_num(s.spectral_gap()));
    let (m, n) = (p.num_agents(), p.dim());
    if let Some(eps) = cfg.run.noise.epsilon {
        if let Ok(b) = sigma_max_sq(eps, m, n, s.lambda_min) {
            println!("sigma_max^2(eps = {eps}): {}", fmt_num(b));
        }
    }
    println!(
        "noise per-coordinate variance: {}",
        fmt_num(cfg.run.noise.per_coordinate_variance(n))
    );
    let alpha = StepSize::new(cfg.run.alpha).expect("validated");
    let lip = p.lipschitz_aggregate(alpha);
    match lip.f_grad {
        Some(l) => {
            println!("L_F^g: {}", fmt_num(l));
            println!("L_Q^g: {}", fmt_num(lip.q_grad.unwrap_or(f64::NAN)));
            if let Some(z) = cfg.diagnostics.as_ref().and_then(|d| d.zeta) {
                if let Ok(c) = ndgd::diagnostics::alpha_caps(l, s.lambda_min, z) {
                    println!(
                        "alpha caps (zeta = {z}): {} and {}",
                        fmt_num(c.cap_sqrt2),
                        fmt_num(c.cap_spectral)
                    );
                }
            }
        }
        None => println!("L_F^g: unavailable (no Lipschitz metadata in the config)"),
    }
}

fn cmd_diagnose(cfg: &ExperimentConfig, at: &Path) -> Result<(), Failure> {
    let x = read_state(at).map_err(|e| Failure::Runtime(e.to_string()))?;
    let p = &cfg.problem;
    if x.num_agents() != p.num_agents() || x.dim() != p.dim() {
        return Err(Failure::Config(format!(
            "{}: state is {}x{}, problem is {}x{}",
            at.display(),
            x.num_agents(),
            x.dim(),
            p.num_agents(),
            p.dim()
        )));
    }
    let spec = cfg.diagnostics.clone().unwrap_or_default();
    let radius = spec
        .lipschitz_box_radius
        .unwrap_or_else(|| 1.1 * x.as_slice().iter().fold(1e-3f64, |a, v| a.max(v.abs())));
    let spec = DiagnosticsSpec {
        descent_point: None,
        ..spec
    };
    let d = evaluate_at(cfg, &spec, &x, radius).map_err(|e| Failure::Runtime(e.to_string()))?;
    let alpha = StepSize::new(cfg.run.alpha).expect("validated");
    println!("residual ‖∇Q_α‖ = {:.3e}", d.residual_grad_norm);
    if let Ok(c) = p.classify_q(alpha, &x, ToleranceSpec::default()) {
        println!("as a point of Q_α: {} (λ_min of the Hessian {:.6e})", c.kind, c.min_hess_eig);
    }
    let mean = x.consensus_average();
    let g = p.classify_global(&mean, ToleranceSpec::default());
    println!("consensus average {mean:?} as a point of f: {} (λ_min {:.6e})", g.kind, g.min_hess_eig);
    println!("Lipschitz constants taken over the box [-{radius}, {radius}]^n");
    print!("{}", render_table(&d.reports));
    for u in &d.unavailable {
        println!("{u}: unavailable");
    }
    let out = cfg.output_dir.join("bounds.csv");
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Failure::Runtime(format!("{}: {e}", cfg.output_dir.display())))?;
    write_bounds(&out, &d.reports).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("bounds written to {}", out.display());
    Ok(())
}

fn cmd_escape_compare(cli: &Cli, cfg: &ExperimentConfig) -> Result<(), Failure> {
    if cfg.escape.is_none() {
        return Err(Failure::Config("escape-compare needs an [escape] section".to_string()));
    }
    if cfg.run.noise.is_none() {
        return Err(Failure::Config("escape-compare needs a [noise] section for NDGD".to_string()));
    }
    let dgd_cfg = ExperimentConfig {
        variants: vec![Variant::Dgd],
        seeds: vec![cfg.seeds[0]],
        diagnostics: None,
        output_dir: cfg.output_dir.join("dgd"),
        ..cfg.clone()
    };
    let ndgd_cfg = ExperimentConfig {
        variants: vec![Variant::Ndgd],
        diagnostics: None,
        output_dir: cfg.output_dir.join("ndgd"),
        ..cfg.clone()
    };
    let opts = ExperimentOptions {
        audit: cli.audit,
        dry_run: false,
    };
    let dgd = run_experiment(&dgd_cfg, &opts).map_err(|e| Failure::Runtime(e.to_string()))?;
    let ndgd = run_experiment(&ndgd_cfg, &opts).map_err(|e| Failure::Runtime(e.to_string()))?;
    let d = dgd.runs[0].escape_iteration;
    let earlier = ndgd
        .runs
        .iter()
        .filter(|r| match (r.escape_iteration, d) {
            (Some(a), Some(b)) => a < b,
            (Some(_), None) => true,
            _ => false,
        })
        .count();
    println!(
        "DGD escape iteration:          {}",
        d.map_or("never".to_string(), |k| k.to_string())
    );
    println!(
        "NDGD median escape iteration:  {} over {} seeds",
        ndgd.escape_median(Variant::Ndgd)
            .map_or("never".to_string(), |m| m.to_string()),
        ndgd.runs.len()
    );
    println!("NDGD seeds escaping earlier:   {earlier}/{}", ndgd.runs.len());
    println!("output written to {}", cfg.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Validate { config } => load(&cli, config).map(|cfg| {
            println!(
                "{}: ok ({} agents, dimension {}, variants {:?}, {} seeds)",
                config.display(),
                cfg.problem.num_agents(),
                cfg.problem.dim(),
                cfg.variants.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
                cfg.seeds.len()
            );
        }),
        Command::Run { config } => load(&cli, config).and_then(|cfg| cmd_run(&cli, &cfg)),
        Command::Spectra { config } => load(&cli, config).map(|cfg| cmd_spectra(&cfg)),
        Command::Diagnose { config, at } => load(&cli, config).and_then(|cfg| cmd_diagnose(&cfg, at)),
        Command::EscapeCompare { config } => load(&cli, config).and_then(|cfg| cmd_escape_compare(&cli, &cfg)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(4)
        }
    }
}
