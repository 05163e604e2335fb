//! Randomized invariants, serialization round-trips and reproducibility.

use choicerl_core::agent::{sample_dataset, solve_ddc, BehaviorModel, ChoiceDataset, Mechanism};
use choicerl_core::diagnostics::coverage_check;
use choicerl_core::mdp::{
    evaluate_policy, optimal_policy, suboptimality, FeatureMode, InstanceSpec, PolicyTable,
    TabularLinearMdp,
};
use choicerl_core::mle::{fit_mle, fit_mle_from, EstimatedModel, MleConfig};
use choicerl_core::pipeline::{measure, run_pipeline, PipelineConfig};
use choicerl_core::planner::{PessimisticPolicy, PlannerConfig};
use choicerl_core::reward::{elliptical_potential, recover_reward, RecoveredReward};
use choicerl_core::rng::stream_rng;
use choicerl_core::sweep::{run_rate_sweep, SweepResult, SweepSpec};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn instance_strategy() -> impl Strategy<Value = TabularLinearMdp> {
    (0u64..1000, 2usize..6, 2usize..4, 1usize..4, any::<bool>(), any::<bool>()).prop_map(
        |(seed, s, a, h, dense, det)| {
            let mode = if dense { FeatureMode::RandomLinear } else { FeatureMode::OneHotTabular };
            let mut spec = InstanceSpec::new(seed, s, a, h, mode);
            if dense {
                spec = spec.with_dim(3);
            }
            if det {
                spec = spec.deterministic();
            }
            spec.build().unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_instances_respect_structure(m in instance_strategy()) {
        prop_assert!(m.validate().is_ok());
        let hz = m.horizon as f64;
        for h in 0..m.horizon {
            for s in 0..m.num_states {
                prop_assert_eq!(m.reward(h, s, 0), 0.0);
                prop_assert_eq!(m.transitions[h][s][0][m.absorbing_state], 1.0);
                for a in 0..m.num_actions {
                    let r = m.reward(h, s, a);
                    prop_assert!((0.0..=1.0 / hz + 1e-15).contains(&r));
                    let row = &m.transitions[h][s][a];
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    prop_assert!(row.iter().all(|&p| p >= 0.0));
                }
            }
        }
    }

    #[test]
    fn optimal_value_dominates_random_policies(m in instance_strategy(), seed in 0u64..100) {
        let mut rng = stream_rng(seed, 0);
        let probs = (0..m.horizon)
            .map(|_| {
                (0..m.num_states)
                    .map(|_| {
                        let w: Vec<f64> = (0..m.num_actions).map(|_| rng.random::<f64>() + 1e-3).collect();
                        let z: f64 = w.iter().sum();
                        w.into_iter().map(|x| x / z).collect()
                    })
                    .collect()
            })
            .collect();
        let pi = PolicyTable { probs };
        let (_, best) = optimal_policy(&m);
        let val = evaluate_policy(&m, &pi, 1.0).unwrap();
        for h in 0..m.horizon {
            for s in 0..m.num_states {
                prop_assert!(val.v[h][s] <= best.v[h][s] + 1e-12);
                prop_assert!(best.v[h][s] <= (m.horizon - h) as f64 / m.horizon as f64 + 1e-12);
            }
        }
        prop_assert!(suboptimality(&m, &pi).unwrap() >= -1e-12);
    }

    #[test]
    fn behavior_policies_are_stochastic_and_values_bounded(m in instance_strategy(), gamma in 0.0f64..=1.0) {
        let b = solve_ddc(&m, gamma);
        prop_assert!(b.pi_b.is_stochastic());
        for h in 0..m.horizon {
            for s in 0..m.num_states {
                prop_assert_eq!(b.q[h][s][0], 0.0);
                prop_assert!(b.v[h][s] >= -1e-15 && b.v[h][s] <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn softmax_policy_ignores_per_state_shifts(m in instance_strategy(), shift in -5.0f64..5.0) {
        let b = solve_ddc(&m, 0.9);
        let shifted: Vec<Vec<Vec<f64>>> = b
            .q
            .iter()
            .map(|step| {
                step.iter()
                    .enumerate()
                    .map(|(s, row)| row.iter().map(|q| q + shift * (s as f64 + 1.0)).collect())
                    .collect()
            })
            .collect();
        let other = BehaviorModel::from_q(0.9, shifted);
        for (p, q) in b.pi_b.probs.iter().flatten().flatten().zip(other.pi_b.probs.iter().flatten().flatten()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn potentials_are_nonnegative_and_shrink_with_data(
        rows in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 3), 1..20),
        probe in proptest::collection::vec(-1.0f64..1.0, 3),
        lambda in 0.01f64..10.0,
    ) {
        let mut gram = DMatrix::zeros(3, 3);
        let mut prev = elliptical_potential(&probe, &gram, lambda).unwrap();
        for r in &rows {
            let v = nalgebra::DVector::from_column_slice(r);
            gram += &v * v.transpose();
            let cur = elliptical_potential(&probe, &gram, lambda).unwrap();
            prop_assert!(cur >= 0.0);
            prop_assert!(cur <= prev + 1e-12);
            prev = cur;
        }
    }
}

fn desk_mdp() -> TabularLinearMdp {
    InstanceSpec::new(0, 5, 3, 3, FeatureMode::OneHotTabular).build().unwrap()
}

fn dataset(n: usize, seed: u64) -> (TabularLinearMdp, ChoiceDataset) {
    let m = desk_mdp();
    let ds = sample_dataset(&m, &solve_ddc(&m, 0.9), n, seed, Mechanism::Softmax).unwrap();
    (m, ds)
}

#[test]
fn mle_restarts_agree() {
    let (m, ds) = dataset(2000, 5);
    let cfg = MleConfig::for_instance(3, m.dim());
    let reference = fit_mle(&ds, &m.features, &cfg).unwrap();
    let mut rng = stream_rng(99, 0);
    for _ in 0..5 {
        let init: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..m.dim()).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let est = fit_mle_from(&ds, &m.features, &cfg, Some(&init)).unwrap();
        // coordinates of states never visited at a step are not identified
        for h in 0..3 {
            for &s in &ds.states[h] {
                for a in 0..3 {
                    let (x, y) = (est.q_hat[h][s][a], reference.q_hat[h][s][a]);
                    assert!((x - y).abs() < 1e-8, "h {h} s {s} a {a}: {x} vs {y}");
                }
            }
        }
    }
}

#[test]
fn weak_coverage_is_detected() {
    let m = desk_mdp();
    let (pi_star, _) = optimal_policy(&m);
    // behavior that essentially never takes the optimal action
    let q: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|h| {
            (0..5)
                .map(|s| {
                    let star = pi_star.greedy_action(h, s);
                    (0..3).map(|a| if a == star { -50.0 } else { 0.0 }).collect()
                })
                .collect()
        })
        .collect();
    let behavior = BehaviorModel::from_q(0.9, q);
    let rep = coverage_check(&m, &behavior, &pi_star, 1000).unwrap();
    assert!(rep.c_dagger_estimate < 1e-18, "{}", rep.c_dagger_estimate);
}

fn same_bits(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits()
}

#[test]
fn json_round_trips_are_lossless() {
    let m = desk_mdp();
    let back: TabularLinearMdp = TabularLinearMdp::from_json(&m.to_json().unwrap()).unwrap();
    assert_eq!(back, m);

    let cfg = PipelineConfig::new(0.9, 500, 4, PlannerConfig::manual(0.01, 1.0));
    let run = run_pipeline(&m, &cfg).unwrap();
    let ds: ChoiceDataset = ChoiceDataset::from_json(&run.dataset.to_json().unwrap()).unwrap();
    assert_eq!(ds, run.dataset);
    let est: EstimatedModel = serde_json::from_str(&run.estimate.to_json().unwrap()).unwrap();
    assert_eq!(est, run.estimate);
    let rec: RecoveredReward = serde_json::from_str(&run.reward.to_json().unwrap()).unwrap();
    assert_eq!(rec, run.reward);
    let pol: PessimisticPolicy = serde_json::from_str(&run.policy.to_json().unwrap()).unwrap();
    assert_eq!(pol, run.policy);
    let metrics = measure(&m, &run).unwrap();
    let text = serde_json::to_string(&metrics).unwrap();
    let again: choicerl_core::pipeline::RunMetrics = serde_json::from_str(&text).unwrap();
    assert!(same_bits(again.suboptimality, metrics.suboptimality));
    assert_eq!(serde_json::to_string(&again).unwrap(), text);
}

#[test]
fn dataset_is_independent_of_thread_count() {
    let m = desk_mdp();
    let b = solve_ddc(&m, 0.9);
    let sample = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sample_dataset(&m, &b, 3000, 11, Mechanism::GumbelArgmax).unwrap())
    };
    let one = sample(1);
    assert_eq!(one, sample(4));
    assert_ne!(one, sample_dataset(&m, &b, 3000, 12, Mechanism::GumbelArgmax).unwrap());
}

#[test]
fn pipeline_is_bitwise_reproducible() {
    let m = desk_mdp();
    let cfg = PipelineConfig::new(0.9, 800, 21, PlannerConfig::theorem(1e-3, 0.05, 1.0));
    let a = run_pipeline(&m, &cfg).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_pipeline(&m, &cfg).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.policy.to_json().unwrap(), b.policy.to_json().unwrap());
}

#[test]
fn sweep_output_is_reproducible() {
    let mut spec = SweepSpec::desk(PlannerConfig::theorem(1e-3, 0.05, 1.0));
    spec.n_grid = vec![250, 500];
    spec.seeds = 3;
    let a = run_rate_sweep(&spec).unwrap();
    let b = run_rate_sweep(&spec).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let back: SweepResult = serde_json::from_str(&a.to_json().unwrap()).unwrap();
    assert_eq!(back.cells.len(), a.cells.len());
    for (x, y) in back.cells.iter().zip(&a.cells) {
        assert!(same_bits(x.suboptimality, y.suboptimality));
        assert!(same_bits(x.policy_error, y.policy_error));
    }
}

#[test]
fn recovery_is_exact_for_noiseless_deterministic_inputs() {
    let m = InstanceSpec::new(3, 4, 3, 3, FeatureMode::OneHotTabular)
        .deterministic()
        .build()
        .unwrap();
    let b = solve_ddc(&m, 0.9);
    let ds = sample_dataset(&m, &b, 3000, 1, Mechanism::Softmax).unwrap();
    let truth = EstimatedModel::from_q(vec![Vec::new(); 3], b.q.clone());
    let rec = recover_reward(&ds, &truth, &m.features, 0.9, 1e-6).unwrap();
    for h in 0..3 {
        for s in 0..4 {
            for a in 0..3 {
                if ds.states[h].contains(&s) {
                    assert!((rec.reward(&m.features, h, s, a) - m.reward(h, s, a)).abs() < 1e-4);
                }
            }
        }
    }
}
