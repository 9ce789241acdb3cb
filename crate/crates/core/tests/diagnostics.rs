mod common;

use common::*;
use ndgd::diagnostics::{
    alpha_caps, computable_alpha_caps, consensus_grid, coverage_probe, dist_to_reference, median_escape,
    one_step_descent_mc, region_membership, render_table, stationary_suite, CheckOptions, DiagnosticError,
    RegularityParams,
};
use ndgd::dynamics::{dgd_step, run, InitialState, RunConfig, StopReason, StopRule, Variant};
use ndgd::noise::NoiseSpec;
use ndgd::objective::builtin::{five_agent_saddle, FIVE_AGENT_STEP_SIZE};
use ndgd::objective::{Problem, StepSize};
use ndgd::state::StackedState;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Runs DGD to `‖∇Q_α‖ ≤ tol` and returns the final state with the largest coordinate magnitude
/// seen on the way.
fn stationary_point(p: &Problem<f64>, alpha: f64, init: InitialState<f64>, tol: f64) -> Option<(StackedState<f64>, f64)> {
    let mut cfg = RunConfig::new(alpha, 200_000, init);
    cfg.stop = Some(StopRule::grad_norm_below(tol));
    cfg.record_every = Some(50);
    cfg.record_blocks = true;
    let t = run(p, &cfg, Variant::Dgd).ok()?;
    if t.stop_reason != StopReason::GradNormBelow {
        return None;
    }
    let explored = t
        .records
        .iter()
        .filter_map(|r| r.blocks.as_ref())
        .flat_map(|b| b.as_slice().iter().map(|v| v.abs()).collect::<Vec<_>>())
        .fold(0.0f64, f64::max);
    Some((t.final_state, explored))
}

#[test]
fn five_agent_bounds_hold_at_the_stationary_point() {
    let p = five_agent_saddle::<f64>();
    let (x, explored) = stationary_point(&p, FIVE_AGENT_STEP_SIZE, InitialState::Broadcast(vec![1e-6, 1e-6]), 1e-9)
        .expect("converges");
    let boxed = p.with_box_lipschitz(1.1 * explored).unwrap();
    let a = StepSize::new(FIVE_AGENT_STEP_SIZE).unwrap();
    let suite = stationary_suite(&boxed, a, &x, &CheckOptions::default()).unwrap();
    assert!(suite.unavailable.is_empty());
    assert_eq!(suite.reports.len(), 7);
    assert!(suite.all_satisfied(), "{}", render_table(&suite.reports));
    assert!(suite.reports.iter().all(|r| r.caveat.is_none()));
    assert!(suite.residual_grad_norm <= 1e-9);
}

#[test]
fn missing_lipschitz_metadata_is_listed_not_fatal() {
    let p = five_agent_saddle::<f64>();
    let a = StepSize::new(FIVE_AGENT_STEP_SIZE).unwrap();
    let x = StackedState::broadcast(5, &[0.7, 0.0]);
    let suite = stationary_suite(&p, a, &x, &CheckOptions::default()).unwrap();
    assert_eq!(suite.unavailable, vec!["mean_gradient_norm", "neg_mean_min_hess_eig"]);
    assert_eq!(suite.reports.len(), 5);
    assert!(suite.reports[0].caveat.as_deref().unwrap().starts_with("not stationary"));
    assert!(render_table(&suite.reports).contains("caveat: not stationary"));
}

#[test]
fn step_size_caps() {
    let lmin = 0.5 - 0.5 / 5f64.sqrt();
    let c = alpha_caps(2.0, lmin, 0.1).unwrap();
    assert!((c.cap_sqrt2 - (2f64.sqrt() - 1.0) / 2.0).abs() < 1e-15);
    assert!((c.cap_spectral - lmin / (2.0 * 10f64.ln())).abs() < 1e-15);
    let c = alpha_caps(2.0, lmin, 0.9).unwrap();
    assert!((c.cap_spectral - lmin / 2.0).abs() < 1e-15);
    assert_eq!(c.min(), c.cap_spectral);
    assert!(matches!(alpha_caps(2.0, lmin, 1.0), Err(DiagnosticError::Probability(_))));
    assert!(matches!(alpha_caps(0.0, lmin, 0.5), Err(DiagnosticError::NonPositive { .. })));
    let p = five_agent_saddle::<f64>();
    assert!(matches!(
        computable_alpha_caps(&p, 0.1),
        Err(DiagnosticError::MissingLipschitz(_))
    ));
    let boxed = p.with_box_lipschitz(1.0).unwrap();
    let caps = computable_alpha_caps(&boxed, 0.1).unwrap();
    let l = boxed.objectives().iter().map(|o| o.lipschitz_grad().unwrap()).fold(0.0, f64::max);
    assert_eq!(caps, alpha_caps(l, p.mixing().lambda_min(), 0.1).unwrap());
}

#[test]
fn five_agent_regions() {
    let p = five_agent_saddle::<f64>();
    let a = FIVE_AGENT_STEP_SIZE;
    let params = RegularityParams {
        epsilon: 0.05,
        // on the consensus subspace the Hessian of Q_α averages the local curvatures, so the
        // saddle sits at about −2/5 and the minimizers at about 2/5
        gamma: 0.2,
        mu: 0.2,
        delta: 0.2,
        alpha: a,
    };
    params.validate(&p).unwrap();
    let saddle = StackedState::broadcast(5, &[0.0, 0.0]);
    let m = region_membership(&p, &params, &saddle, &[]).unwrap();
    assert!(!m.in_large_gradient && m.in_negative_curvature && !m.in_near_minimizer_partial);
    let far = StackedState::broadcast(5, &[0.3, 0.3]);
    assert!(region_membership(&p, &params, &far, &[]).unwrap().in_large_gradient);
    let (xmin, _) = stationary_point(&p, a, InitialState::Broadcast(vec![0.5, 0.1]), 1e-10).unwrap();
    let near = region_membership(&p, &params, &xmin, std::slice::from_ref(&xmin)).unwrap();
    assert!(near.in_near_minimizer_partial && near.dist_to_candidates == Some(0.0));

    let grid = consensus_grid(&saddle, 1.0, 11);
    assert_eq!(grid.len(), 121);
    let rep = coverage_probe(&p, &params, &grid, &[]).unwrap();
    assert_eq!(rep.probed, 121);
    assert_eq!(
        rep.uncovered.len(),
        grid.len() - grid
            .iter()
            .filter(|x| region_membership(&p, &params, x, &[]).unwrap().covered())
            .count()
    );
    let bad = RegularityParams { gamma: -1.0, ..params };
    assert!(bad.validate(&p).is_err());
}

#[test]
fn noisy_step_decreases_q_away_from_stationarity() {
    let p = five_agent_saddle::<f64>();
    let a = StepSize::new(FIVE_AGENT_STEP_SIZE).unwrap();
    let x = StackedState::broadcast(5, &[0.3, 0.3]);
    let eps = p.q_grad_norm(a, &x).min(1.0);
    let noise = NoiseSpec::sphere_at_budget(eps, 0.5, 5, 2, p.mixing().lambda_min()).unwrap();
    let e = one_step_descent_mc(&p, a, &x, &noise, 10_000, 1).unwrap();
    assert_eq!(e.samples, 10_000);
    assert!(e.decreases_confidently(), "{e:?}");
    assert!(e.mean_delta_q + 3.0 * e.std_err < 0.0);
    assert!(e.mean_delta_q <= e.intermediate_bound + 3.0 * e.std_err);
}

#[test]
fn noiseless_descent_is_exact() {
    let p = five_agent_saddle::<f64>();
    let a = StepSize::new(FIVE_AGENT_STEP_SIZE).unwrap();
    let x = StackedState::broadcast(5, &[0.3, -0.4]);
    let e = one_step_descent_mc(&p, a, &x, &NoiseSpec::none(), 100, 0).unwrap();
    let exact = p.q_value(a, &dgd_step(&p, a.get(), &x)) - p.q_value(a, &x);
    assert_eq!(e.mean_delta_q, exact);
    assert_eq!(e.std_err, 0.0);
    assert_eq!(e.samples, 1);
}

#[test]
fn descent_preconditions() {
    let p = five_agent_saddle::<f64>();
    let a = StepSize::new(FIVE_AGENT_STEP_SIZE).unwrap();
    let lmin = p.mixing().lambda_min();
    let saddle = StackedState::broadcast(5, &[0.0, 0.0]);
    let noise = NoiseSpec::sphere_at_budget(1.0, 0.5, 5, 2, lmin).unwrap();
    assert!(matches!(
        one_step_descent_mc(&p, a, &saddle, &noise, 10, 0),
        Err(DiagnosticError::Hypothesis { .. })
    ));
    assert!(matches!(
        one_step_descent_mc(&p, a, &saddle, &NoiseSpec::sphere(0.1), 10, 0),
        Err(DiagnosticError::MissingEpsilon)
    ));
    assert!(matches!(
        one_step_descent_mc(&p, a, &saddle, &noise, 0, 0),
        Err(DiagnosticError::NoSamples)
    ));
}

#[test]
fn escape_statistics() {
    assert_eq!(median_escape(&[]), None);
    assert_eq!(median_escape(&[Some(3), Some(1), Some(2)]), Some(2.0));
    assert_eq!(median_escape(&[Some(4), Some(1), Some(2), Some(10)]), Some(3.0));
    assert_eq!(median_escape(&[Some(4), None, None]), None);
    assert_eq!(median_escape(&[Some(4), Some(6), None]), Some(6.0));
    let refs = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
    assert_eq!(dist_to_reference(&[0.0, 0.0], &refs).unwrap(), (1.0, 0));
    assert_eq!(dist_to_reference(&[-0.5, 0.0], &refs).unwrap(), (0.5, 1));
    assert_eq!(dist_to_reference(&[0.0, 0.0], &[]), Err(DiagnosticError::EmptyReferences));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn consensus_deviation_bound_holds_on_random_instances(seed in any::<u64>()) {
        let inst = random_instance(seed, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 41);
        let x0 = random_state(&mut rng, inst.m, inst.n, 0.5);
        let alpha = 0.01;
        let found = stationary_point(&inst.problem, alpha, InitialState::Stacked(x0), 1e-10);
        prop_assume!(found.is_some());
        let (x, explored) = found.unwrap();
        let boxed = inst.problem.with_box_lipschitz(1.1 * explored.max(1e-3)).unwrap();
        let a = StepSize::new(alpha).unwrap();
        // the run stops at a residual of 1e-10, which enters the measured side of every bound
        let opts = CheckOptions {
            report_tol: 1e-8,
            ..CheckOptions::default()
        };
        let suite = stationary_suite(&boxed, a, &x, &opts).unwrap();
        prop_assert!(suite.unavailable.is_empty());
        prop_assert!(suite.all_satisfied(), "{}", render_table(&suite.reports));
    }
}
