mod common;

use quadmpc::estimator::DisturbanceModel;
use quadmpc::sim::{
    certify_stability, compare_mpc_lqr, run_closed_loop, sweep_weights, PlantKind, ScenarioConfig, Setup, StepStatus,
    WeightKind, INPUT_TOL, WEIGHT_SCALES,
};
use quadmpc::{Matrix, Parallelism};

const SHIPPED: [&str; 9] = [
    "hover",
    "regulation_mild",
    "far_x0",
    "offset_free",
    "offset_free_zero_estimate",
    "nonlinear_phi05",
    "nonlinear_phi08",
    "lqr_compare",
    "weights_base",
];

#[test]
fn shipped_scenarios_parse_and_round_trip() {
    for name in SHIPPED {
        let s = common::load_scenario(name);
        assert_eq!(s.name, name);
        assert_eq!(ScenarioConfig::from_toml_str(&s.to_toml_string()).unwrap(), s);
    }
}

#[test]
fn logged_inputs_respect_bounds_except_on_fallback() {
    for name in ["regulation_mild", "far_x0", "offset_free", "nonlinear_phi05"] {
        let s = common::load_scenario(name);
        let spec = s.constraint_spec();
        let log = run_closed_loop(&s).unwrap();
        assert_eq!(log.records.len(), s.steps + 1);
        for r in log.records.iter().filter(|r| !r.status.is_fallback()) {
            for i in 0..4 {
                assert!(r.u[i] >= spec.input_lower[i] - INPUT_TOL && r.u[i] <= spec.input_upper[i] + INPUT_TOL);
            }
        }
    }
}

#[test]
fn weight_sweeps_trade_speed_for_effort() {
    let s = common::load_scenario("weights_base");
    let q = sweep_weights(&s, WeightKind::Q, &WEIGHT_SCALES, Parallelism::Rayon).unwrap();
    let r = sweep_weights(&s, WeightKind::R, &WEIGHT_SCALES, Parallelism::Rayon).unwrap();
    for w in q.windows(2) {
        assert!(w[1].settling_time.unwrap() <= w[0].settling_time.unwrap());
        assert!(w[1].peak_input >= w[0].peak_input);
    }
    for w in r.windows(2) {
        assert!(w[1].settling_time.unwrap() >= w[0].settling_time.unwrap());
        assert!(w[1].peak_input <= w[0].peak_input);
    }
}

#[test]
fn scaling_both_weights_leaves_the_inputs_unchanged() {
    let base = common::load_scenario("regulation_mild");
    let reference = run_closed_loop(&base).unwrap();
    let mut scaled = base.clone();
    scaled.q_scale = 7.0;
    scaled.r_scale = 7.0;
    let log = run_closed_loop(&scaled).unwrap();
    for (a, b) in reference.records.iter().zip(&log.records) {
        assert!((&a.u - &b.u).amax() < 1e-5, "k = {}", a.k);
    }
}

#[test]
fn lqr_comparison_outside_and_inside_the_terminal_set() {
    let s = common::load_scenario("lqr_compare");
    let setup = Setup::new(&s, Parallelism::Rayon).unwrap();
    assert!(!setup.xf.set.contains(&quadmpc::Vector::from_column_slice(&s.x0), 0.0));
    let c = compare_mpc_lqr(&s, Parallelism::Rayon).unwrap();
    assert!(c.mpc.settled() && c.mpc.fallback_count() == 0);
    assert!(!c.lqr.settled());
    assert!(c.lqr.records.iter().any(|r| r.status == StepStatus::LqrSaturated));

    let mut inside = s.clone();
    inside.x0 = vec![0.5, -0.3, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    assert!(setup.xf.set.contains(&quadmpc::Vector::from_column_slice(&inside.x0), 0.0));
    let c = compare_mpc_lqr(&inside, Parallelism::Rayon).unwrap();
    assert!(c.max_state_gap() < 1e-4, "{:e}", c.max_state_gap());
}

#[test]
fn certificates_pass_for_the_lqr_gain_and_fail_without_feedback() {
    let s = common::load_scenario("regulation_mild");
    let setup = Setup::new(&s, Parallelism::Rayon).unwrap();
    let report = certify_stability(&setup, DisturbanceModel::PitchMoment, &setup.cfg.k, 1000, 3, Parallelism::Rayon).unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.controllability_rank, 12);
    assert_eq!(report.detectability_rank, 13);

    let zero = Matrix::zeros(4, 12);
    let report = certify_stability(&setup, DisturbanceModel::PitchMoment, &zero, 1000, 3, Parallelism::Rayon).unwrap();
    assert!(!report.passed());
    assert!(report.max_decrease_residual > 1e-3);
}

#[test]
fn zero_initial_estimate_breaks_the_tracking_run() {
    let log = run_closed_loop(&common::load_scenario("offset_free_zero_estimate")).unwrap();
    assert!(log.diverged);
    assert!(log.fallback_count() > 0);
}

#[test]
fn model_mismatch_scenarios() {
    let mut s = common::load_scenario("nonlinear_phi05");
    let nl = run_closed_loop(&s).unwrap();
    s.plant = PlantKind::Linear;
    let lin = run_closed_loop(&s).unwrap();
    assert!(nl.final_state().norm() < 0.05 && !nl.diverged);
    assert!(nl.peak_state(1) > lin.peak_state(1));
    let bad = run_closed_loop(&common::load_scenario("nonlinear_phi08")).unwrap();
    assert!(bad.diverged || bad.fallback_count() > 0);
}

#[test]
fn runs_are_reproducible_with_noise() {
    let mut s = common::load_scenario("offset_free");
    s.noise = Some(quadmpc::sim::NoiseConfig { process_std: vec![1e-3; 12], measurement_std: vec![1e-3; 6] });
    s.seed = 42;
    s.steps = 60;
    let a = run_closed_loop(&s).unwrap().without_timing();
    let b = run_closed_loop(&s).unwrap().without_timing();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    s.seed = 43;
    let c = run_closed_loop(&s).unwrap().without_timing();
    assert_ne!(format!("{a:?}"), format!("{c:?}"));
}
