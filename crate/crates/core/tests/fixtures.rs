//! Frozen seed-0 values, produced by an independent dense-matrix reference
//! implementation of the same definitions.

use choicerl_core::agent::{sample_dataset, solve_ddc, ChoiceDataset, Mechanism};
use choicerl_core::mdp::{FeatureMode, InstanceSpec};
use choicerl_core::pipeline::{measure, run_on_dataset, theory_diagnostics, PipelineConfig};
use choicerl_core::planner::PlannerConfig;
use choicerl_core::sweep::{calibrate_beta, CalibrationSpec};
use serde::Deserialize;

#[derive(Deserialize)]
struct Fixture {
    instance_seed: u64,
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    gamma: f64,
    n: usize,
    data_seed: u64,
    lambda_reg: f64,
    policy_error: Vec<f64>,
    q_error: Vec<f64>,
    certificate_max_ratio: f64,
    c_dagger_estimate: f64,
    coverage_per_step: Vec<f64>,
    min_eig_sigma_b: f64,
    d_eff_sample: f64,
    d_eff_pop: f64,
    q_hat: Vec<Vec<Vec<f64>>>,
    w_hat: Vec<Vec<f64>>,
    calibrated_constant: f64,
}

fn fixture() -> Fixture {
    serde_json::from_str(include_str!("fixtures/seed0_reference.json")).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

fn run(fx: &Fixture) -> (choicerl_core::mdp::TabularLinearMdp, choicerl_core::pipeline::PipelineRun) {
    let m = InstanceSpec::new(
        fx.instance_seed,
        fx.num_states,
        fx.num_actions,
        fx.horizon,
        FeatureMode::OneHotTabular,
    )
    .build()
    .unwrap();
    let b = solve_ddc(&m, fx.gamma);
    let ds: ChoiceDataset = sample_dataset(&m, &b, fx.n, fx.data_seed, Mechanism::Softmax).unwrap();
    let cfg = PipelineConfig::new(
        fx.gamma,
        fx.n,
        fx.data_seed,
        PlannerConfig::manual(0.0, fx.lambda_reg),
    );
    let run = run_on_dataset(&m, b, ds, &cfg).unwrap();
    (m, run)
}

#[test]
fn estimation_matches_reference() {
    let fx = fixture();
    let (m, run) = run(&fx);
    let met = measure(&m, &run).unwrap();
    for h in 0..fx.horizon {
        assert!(close(met.mle.policy_error[h], fx.policy_error[h], 1e-9));
        assert!(close(met.mle.q_error[h], fx.q_error[h], 1e-9));
        for (a, b) in run.reward.w_hat[h].iter().zip(&fx.w_hat[h]) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in run.estimate.q_hat[h].iter().flatten().zip(fx.q_hat[h].iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
    assert!(close(met.certificate_max_ratio, fx.certificate_max_ratio, 1e-9));
}

#[test]
fn coverage_and_effective_dimensions_match_reference() {
    let fx = fixture();
    let (m, run) = run(&fx);
    let (cov, eff) = theory_diagnostics(&m, &run).unwrap();
    assert!(close(cov.c_dagger_estimate, fx.c_dagger_estimate, 1e-9));
    for (a, b) in cov.per_step.iter().zip(&fx.coverage_per_step) {
        assert!(close(*a, *b, 1e-9));
    }
    assert!((cov.min_eig_sigma_b - fx.min_eig_sigma_b).abs() < 1e-12);
    assert!(close(eff.d_eff_sample, fx.d_eff_sample, 1e-9));
    assert!(close(eff.d_eff_pop, fx.d_eff_pop, 1e-9));
}

#[test]
fn calibrated_constant_is_frozen() {
    let fx = fixture();
    let cal = calibrate_beta(&CalibrationSpec::desk()).unwrap();
    assert_eq!(cal.chosen_constant, fx.calibrated_constant);
}
