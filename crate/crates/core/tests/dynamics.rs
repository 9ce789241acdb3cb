mod common;

use common::*;
use ndgd::diagnostics::escape_iteration;
use ndgd::dynamics::{
    dgd_step, gd_on_q_step, ndgd_step, run, InitialState, RunConfig, RunError, StopReason, StopRule, Variant,
};
use ndgd::noise::{NoiseSpec, NoiseStreams};
use ndgd::objective::builtin::{
    five_agent_minimizers, five_agent_saddle, five_agent_saddle_point, FIVE_AGENT_ESCAPE_RADIUS, FIVE_AGENT_INIT,
    FIVE_AGENT_STEP_SIZE,
};
use ndgd::objective::StepSize;
use ndgd::state::StackedState;
use ndgd::{Problem32, StackedState32};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn five_agent_noise() -> NoiseSpec<f64> {
    let p = five_agent_saddle::<f64>();
    NoiseSpec::sphere_at_budget(1.0, 0.5, 5, 2, p.mixing().lambda_min()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn local_round_equals_gradient_step_on_q(seed in any::<u64>(), a in 0.001f64..0.5) {
        let inst = random_instance(seed, 6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 23);
        let x = random_state(&mut rng, inst.m, inst.n, 1.5);
        let local = dgd_step(&inst.problem, a, &x);
        let g = dense_q_grad(&inst, a, x.as_slice());
        let oracle: Vec<f64> = x.as_slice().iter().zip(&g).map(|(v, gv)| v - a * gv).collect();
        prop_assert!(max_rel_err(&oracle, local.as_slice()) <= 1e-12);
        let central = gd_on_q_step(&inst.problem, a, &x);
        prop_assert!(max_rel_err(central.as_slice(), local.as_slice()) <= 1e-12);
    }

    #[test]
    fn noisy_round_adds_the_scaled_draw(seed in any::<u64>(), k in any::<u64>(), r in 0.01f64..1.0) {
        let inst = random_instance(seed, 6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 29);
        let x = random_state(&mut rng, inst.m, inst.n, 1.5);
        let a = 0.01;
        let spec = NoiseSpec::sphere(r);
        let streams = NoiseStreams::new(seed, inst.m);
        let noisy = ndgd_step(&inst.problem, a, &x, &spec, &streams, k).unwrap();
        let clean = dgd_step(&inst.problem, a, &x);
        for i in 0..inst.m {
            let xi = streams.stream(i).sample(&spec, k, inst.n).unwrap();
            for (d, xid) in xi.iter().enumerate() {
                let diff = noisy.block(i)[d] - clean.block(i)[d];
                prop_assert!((diff + a * xid).abs() <= 1e-12 * (1.0 + clean.block(i)[d].abs()));
            }
        }
        let silent = ndgd_step(&inst.problem, a, &x, &NoiseSpec::none(), &streams, k).unwrap();
        prop_assert_eq!(silent, clean);
    }

    #[test]
    fn small_steps_decrease_q_monotonically(seed in any::<u64>()) {
        let p = five_agent_saddle::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = random_state(&mut rng, 5, 2, 1.0);
        let a = StepSize::new(0.005).unwrap();
        let mut q = p.q_value(a, &x);
        for _ in 0..200 {
            x = dgd_step(&p, a.get(), &x);
            let next = p.q_value(a, &x);
            prop_assert!(next <= q + 1e-13 * q.abs().max(1.0), "{} > {}", next, q);
            q = next;
        }
    }

    #[test]
    fn parallel_rounds_are_bit_identical(seed in any::<u64>()) {
        let inst = random_instance(seed, 6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 31);
        let x0 = random_state(&mut rng, inst.m, inst.n, 1.0);
        let mut cfg = RunConfig::new(0.01, 50, InitialState::Stacked(x0));
        cfg.noise = NoiseSpec::gaussian(0.05);
        cfg.master_seed = seed;
        cfg.record_blocks = true;
        let seq = run(&inst.problem, &cfg, Variant::Ndgd).unwrap();
        cfg.parallel_agents = true;
        let par = run(&inst.problem, &cfg, Variant::Ndgd).unwrap();
        prop_assert_eq!(seq.records, par.records);
        prop_assert_eq!(seq.final_state, par.final_state);
    }

    #[test]
    fn audit_finds_only_neighbourhood_reads(seed in any::<u64>()) {
        let inst = random_instance(seed, 6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 37);
        let x0 = random_state(&mut rng, inst.m, inst.n, 1.0);
        let mut cfg = RunConfig::new(0.01, 30, InitialState::Stacked(x0));
        cfg.noise = NoiseSpec::sphere(0.1);
        cfg.audit = true;
        let t = run(&inst.problem, &cfg, Variant::Ndgd).unwrap();
        let audit = t.audit.unwrap();
        prop_assert!(audit.is_clean(), "{:?}", audit);
        // each agent reads its closed neighbourhood for mixing and its own block for the gradient
        let per_round: usize = (0..inst.m).map(|i| inst.problem.graph().degree(i) + 2).sum();
        prop_assert_eq!(audit.reads, 30 * per_round);
        prop_assert_eq!(audit.equivalence_checks, 30);
        prop_assert!(audit.max_equivalence_error < 1e-12);
    }
}

#[test]
fn noisy_step_is_unbiased() {
    let p = five_agent_saddle::<f64>();
    let x = StackedState::broadcast(5, &[0.3, -0.2]);
    let spec = five_agent_noise();
    let a = FIVE_AGENT_STEP_SIZE;
    let clean = dgd_step(&p, a, &x);
    let streams = NoiseStreams::new(11, 5);
    let samples = 20_000;
    let mut sum = [0.0; 10];
    let mut sum_sq = [0.0; 10];
    for k in 0..samples {
        let y = ndgd_step(&p, a, &x, &spec, &streams, k).unwrap();
        for (j, (&v, &c)) in y.as_slice().iter().zip(clean.as_slice()).enumerate() {
            sum[j] += v - c;
            sum_sq[j] += (v - c).powi(2);
        }
    }
    let count = samples as f64;
    for j in 0..10 {
        let mean = sum[j] / count;
        let se = ((sum_sq[j] / count - mean * mean) / count).sqrt();
        assert!(mean.abs() < 4.0 * se, "coordinate {j}: {mean} vs se {se}");
    }
}

#[test]
fn runs_are_reproducible_and_seed_dependent() {
    let p = five_agent_saddle::<f64>();
    let mut cfg = RunConfig::new(FIVE_AGENT_STEP_SIZE, 500, InitialState::Broadcast(FIVE_AGENT_INIT.to_vec()));
    cfg.noise = five_agent_noise();
    cfg.master_seed = 4;
    let a = run(&p, &cfg, Variant::Ndgd).unwrap();
    let b = run(&p, &cfg, Variant::Ndgd).unwrap();
    assert_eq!(a.records, b.records);
    cfg.master_seed = 5;
    let c = run(&p, &cfg, Variant::Ndgd).unwrap();
    assert_ne!(a.final_state, c.final_state);
}

#[test]
fn dgd_and_centralized_runs_agree() {
    let p = five_agent_saddle::<f64>();
    let mut cfg = RunConfig::new(FIVE_AGENT_STEP_SIZE, 3000, InitialState::Broadcast(vec![0.4, 0.2]));
    cfg.record_blocks = true;
    let d = run(&p, &cfg, Variant::Dgd).unwrap();
    let g = run(&p, &cfg, Variant::GdOnQ).unwrap();
    for (a, b) in d.records.iter().zip(&g.records) {
        let (xa, xb) = (a.blocks.as_ref().unwrap(), b.blocks.as_ref().unwrap());
        assert!(xa.distance(xb) <= 1e-10, "iteration {}", a.iteration);
    }
}

#[test]
fn recording_cadence() {
    let p = five_agent_saddle::<f64>();
    let mut cfg = RunConfig::new(FIVE_AGENT_STEP_SIZE, 95, InitialState::Broadcast(vec![0.1, 0.1]));
    cfg.record_every = Some(10);
    let t = run(&p, &cfg, Variant::Dgd).unwrap();
    let iters: Vec<usize> = t.records.iter().map(|r| r.iteration).collect();
    let mut expected: Vec<usize> = (0..=90).step_by(10).collect();
    expected.push(95);
    assert_eq!(iters, expected);
    assert_eq!(t.iterations_run, 95);
    assert_eq!(t.stop_reason, StopReason::MaxIterations);

    let dense = RunConfig::new(0.005, 10_000, InitialState::Broadcast(vec![0.0, 0.0]));
    assert_eq!(dense.effective_record_every(), 1);
    let sparse = RunConfig::new(0.005, 10_001, InitialState::Broadcast(vec![0.0, 0.0]));
    assert_eq!(sparse.effective_record_every(), 10);
}

#[test]
fn record_fields_match_the_state() {
    let p = five_agent_saddle::<f64>();
    let mut cfg = RunConfig::new(FIVE_AGENT_STEP_SIZE, 20, InitialState::Broadcast(vec![0.5, -0.3]));
    cfg.record_blocks = true;
    cfg.references = five_agent_minimizers();
    let t = run(&p, &cfg, Variant::Dgd).unwrap();
    let a = StepSize::new(FIVE_AGENT_STEP_SIZE).unwrap();
    for r in &t.records {
        let x = r.blocks.as_ref().unwrap();
        assert_eq!(r.q_value, p.q_value(a, x));
        assert_eq!(r.q_grad_norm, p.q_grad_norm(a, x));
        assert_eq!(r.consensus_error, x.consensus_error());
        assert_eq!(r.mean, x.consensus_average());
        assert_eq!(r.f_of_mean, p.f_value(&r.mean));
        let (d, k) = r.mean_ref_dist.unwrap();
        assert_eq!(k, 0);
        assert!((d - ndgd::linalg::distance(&r.mean, &cfg.references[0])).abs() == 0.0);
        assert_eq!(r.agent_ref_dist.len(), 5);
    }
}

#[test]
fn stop_rules() {
    let p = five_agent_saddle::<f64>();
    let mut cfg = RunConfig::new(FIVE_AGENT_STEP_SIZE, 200_000, InitialState::Broadcast(vec![0.5, 0.5]));
    cfg.stop = Some(StopRule::grad_norm_below(1e-6));
    let t = run(&p, &cfg, Variant::Dgd).unwrap();
    assert_eq!(t.stop_reason, StopReason::GradNormBelow);
    assert!(t.last_record().q_grad_norm <= 1e-6);
    assert!(t.iterations_run < 200_000);

    cfg.stop = Some(StopRule {
        grad_norm_below: None,
        consensus_and_f_grad: Some((0.1, 0.5)),
    });
    let t = run(&p, &cfg, Variant::Dgd).unwrap();
    assert_eq!(t.stop_reason, StopReason::ConsensusAndFGrad);
}

#[test]
fn oversized_steps_diverge() {
    let p = five_agent_saddle::<f64>();
    let cfg = RunConfig::new(0.9, 10_000, InitialState::Broadcast(vec![3.0, 3.0]));
    let t = run(&p, &cfg, Variant::Dgd).unwrap();
    assert_eq!(t.stop_reason, StopReason::Diverged);
    assert!(t.final_state.is_finite());
    assert!(t.iterations_run < 10_000);
}

#[test]
fn invalid_configs_are_rejected() {
    let p = five_agent_saddle::<f64>();
    let base = RunConfig::new(0.005, 10, InitialState::Broadcast(vec![0.0, 0.0]));
    let check = |edit: &dyn Fn(&mut RunConfig<f64>), expected: RunError| {
        let mut c = base.clone();
        edit(&mut c);
        assert_eq!(run(&p, &c, Variant::Dgd).unwrap_err(), expected);
    };
    check(&|c| c.alpha = -1.0, RunError::StepSize(-1.0));
    check(&|c| c.max_iterations = 0, RunError::ZeroIterations);
    check(&|c| c.record_every = Some(0), RunError::ZeroRecordEvery);
    check(
        &|c| c.init = InitialState::Broadcast(vec![0.0]),
        RunError::InitShape {
            agents: 5,
            dim: 2,
            found_agents: 5,
            found_dim: 1,
        },
    );
    check(&|c| c.init = InitialState::Broadcast(vec![f64::NAN, 0.0]), RunError::NonFiniteInit);
    check(&|c| c.escape = Some((vec![0.0, 0.0], 0.0)), RunError::EscapeRadius(0.0));
    check(&|c| c.stop = Some(StopRule::default()), RunError::EmptyStopRule);
    check(
        &|c| c.references = vec![vec![1.0]],
        RunError::ReferenceDimension {
            index: 0,
            expected: 2,
            found: 1,
        },
    );
}

#[test]
fn escape_tracking_matches_recorded_means() {
    let p = five_agent_saddle::<f64>();
    let mut cfg = RunConfig::new(FIVE_AGENT_STEP_SIZE, 8000, InitialState::Broadcast(FIVE_AGENT_INIT.to_vec()));
    cfg.escape = Some((five_agent_saddle_point(), FIVE_AGENT_ESCAPE_RADIUS));
    let t = run(&p, &cfg, Variant::Dgd).unwrap();
    let from_records = escape_iteration(&t, &five_agent_saddle_point(), FIVE_AGENT_ESCAPE_RADIUS);
    assert!(t.escape_iteration.is_some());
    assert_eq!(t.escape_iteration, from_records);
}

#[test]
fn single_precision_escapes_the_saddle() {
    let p: Problem32 = five_agent_saddle::<f32>();
    let mut cfg = RunConfig::new(0.005f32, 12_000, InitialState::Broadcast(vec![1e-6f32, 1e-6]));
    cfg.escape = Some((vec![0.0, 0.0], 0.1));
    let t = run(&p, &cfg, Variant::Dgd).unwrap();
    let k = t.escape_iteration.expect("escapes");
    assert!((3000..12_000).contains(&k), "{k}");
    let x: &StackedState32 = &t.final_state;
    let mean = x.consensus_average();
    assert!((mean[0].abs() - std::f32::consts::FRAC_1_SQRT_2).abs() < 0.05);
    assert!(mean[1].abs() < 0.05);
}
