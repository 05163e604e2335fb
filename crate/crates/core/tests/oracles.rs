//! Independent brute-force checks of the exact solvers and the samplers.

mod common;

use common::{all_deterministic_policies, enumerate_q, tv, MemoDdc};
use choicerl_core::agent::{
    choose_action, empirical_state_distribution, sample_dataset, solve_ddc, Mechanism,
};
use choicerl_core::mdp::{
    evaluate_policy, occupancy, optimal_policy, FeatureMode, InstanceSpec, PolicyTable,
    TabularLinearMdp,
};
use choicerl_core::rng::stream_rng;

fn small(seed: u64, deterministic: bool) -> TabularLinearMdp {
    let spec = InstanceSpec::new(seed, 4, 2, 3, FeatureMode::OneHotTabular);
    let spec = if deterministic { spec.deterministic() } else { spec };
    spec.build().unwrap()
}

#[test]
fn policy_evaluation_matches_path_enumeration() {
    for seed in 0..4 {
        let m = small(seed, seed % 2 == 0);
        let pis = [
            PolicyTable::uniform(3, 4, 2),
            solve_ddc(&m, 0.7).pi_b,
            optimal_policy(&m).0,
        ];
        for pi in &pis {
            for gamma in [0.0, 0.5, 1.0] {
                let vt = evaluate_policy(&m, pi, gamma).unwrap();
                for h in 0..3 {
                    for s in 0..4 {
                        let mut v = 0.0;
                        for a in 0..2 {
                            let q = enumerate_q(&m, pi, gamma, h, s, a);
                            assert!((vt.q[h][s][a] - q).abs() < 1e-10);
                            v += pi.probs[h][s][a] * q;
                        }
                        assert!((vt.v[h][s] - v).abs() < 1e-10);
                    }
                }
            }
        }
    }
}

#[test]
fn optimal_policy_beats_every_deterministic_policy() {
    for seed in 0..3 {
        let m = small(seed, seed == 1);
        let (pi_star, vt) = optimal_policy(&m);
        let policies = all_deterministic_policies(&m);
        assert_eq!(policies.len(), 1 << 12);
        for h in 0..3 {
            for s in 0..4 {
                let best = policies
                    .iter()
                    .map(|pi| {
                        (0..2)
                            .map(|a| pi.probs[h][s][a] * enumerate_q(&m, pi, 1.0, h, s, a))
                            .sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!((vt.v[h][s] - best).abs() < 1e-10, "seed {seed} h {h} s {s}");
                let own: f64 = (0..2)
                    .map(|a| pi_star.probs[h][s][a] * enumerate_q(&m, &pi_star, 1.0, h, s, a))
                    .sum();
                assert!((own - best).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn ddc_solution_matches_memoized_recursion() {
    for seed in 0..4 {
        let m = small(seed, false);
        for gamma in [0.0, 0.3, 0.9, 1.0] {
            let b = solve_ddc(&m, gamma);
            let mut oracle = MemoDdc::new(&m, gamma);
            for h in 0..3 {
                for s in 0..4 {
                    let pi = oracle.policy(h, s);
                    for a in 0..2 {
                        assert!((b.q[h][s][a] - oracle.q(h, s, a)).abs() < 1e-10);
                        assert!((b.pi_b.probs[h][s][a] - pi[a]).abs() < 1e-10);
                    }
                    assert!((b.v[h][s] - oracle.v(h, s)).abs() < 1e-10);
                    // anchor pinned at zero
                    assert_eq!(b.q[h][s][0], 0.0);
                }
            }
            // the agent's Q is the policy-evaluation Q of its own policy
            let vt = evaluate_policy(&m, &b.pi_b, gamma).unwrap();
            for h in 0..3 {
                for s in 0..4 {
                    for a in 0..2 {
                        assert!((vt.q[h][s][a] - b.q[h][s][a]).abs() < 1e-10);
                    }
                }
            }
        }
    }
}

#[test]
fn myopic_agent_q_is_the_reward_exactly() {
    let m = InstanceSpec::new(0, 5, 3, 3, FeatureMode::OneHotTabular).build().unwrap();
    let b = solve_ddc(&m, 0.0);
    for h in 0..3 {
        assert_eq!(b.q[h], m.reward_table(h));
    }
}

#[test]
fn gumbel_argmax_matches_softmax() {
    let m = InstanceSpec::new(0, 5, 3, 3, FeatureMode::OneHotTabular).build().unwrap();
    let b = solve_ddc(&m, 0.9);
    let draws = 100_000;
    for h in 0..3 {
        for s in 0..5 {
            let mut rng = stream_rng(17, (h * 5 + s) as u64);
            let mut freq = vec![0.0; 3];
            for _ in 0..draws {
                freq[choose_action(&mut rng, &b, h, s, Mechanism::GumbelArgmax)] += 1.0;
            }
            freq.iter_mut().for_each(|f| *f /= draws as f64);
            let d = tv(&freq, &b.pi_b.probs[h][s]);
            assert!(d <= 0.01, "h {h} s {s}: tv {d}");
        }
    }
}

#[test]
fn sampled_state_marginals_match_occupancy() {
    let m = InstanceSpec::new(0, 5, 3, 3, FeatureMode::OneHotTabular).build().unwrap();
    let b = solve_ddc(&m, 0.9);
    let occ = occupancy(&m, &b.pi_b);
    for mech in [Mechanism::Softmax, Mechanism::GumbelArgmax] {
        let ds = sample_dataset(&m, &b, 20_000, 3, mech).unwrap();
        let emp = empirical_state_distribution(&ds);
        for h in 0..3 {
            let exact: Vec<f64> = occ[h].iter().map(|row| row.iter().sum()).collect();
            assert!(tv(&emp[h], &exact) <= 0.02, "{mech:?} h {h}");
            // chosen actions against the exact joint
            let mut joint = vec![0.0; 15];
            for i in 0..ds.n {
                joint[ds.states[h][i] * 3 + ds.actions[h][i]] += 1.0 / ds.n as f64;
            }
            let flat: Vec<f64> = occ[h].iter().flatten().cloned().collect();
            assert!(tv(&joint, &flat) <= 0.02);
        }
    }
}
