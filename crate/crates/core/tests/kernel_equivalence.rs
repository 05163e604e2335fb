use choicerl_core::agent::{sample_dataset, solve_ddc, Mechanism};
use choicerl_core::kernel::{
    kernel_penalty, linear_equivalence, DomainKernel, KernelSpec,
};
use choicerl_core::linalg::{regularized, spd_factor, inverse_quadratic_form};
use choicerl_core::mdp::{random_instance, FeatureMode, InstanceSpec};
use choicerl_core::reward::{gram_matrix, elliptical_potential};
use nalgebra::DVector;

#[test]
fn linear_kernel_reproduces_linear_stages() {
    for (seed, n) in [(0u64, 200usize), (1, 500), (2, 1000)] {
        let m = InstanceSpec::new(seed, 5, 3, 3, FeatureMode::OneHotTabular).build().unwrap();
        let ds = sample_dataset(&m, &solve_ddc(&m, 0.9), n, seed + 10, Mechanism::Softmax).unwrap();
        for beta in [0.0, 0.05, 1.0] {
            let rep = linear_equivalence(&ds, &m.features, 1.0, 0.9, beta).unwrap();
            assert!(rep.max_discrepancy() < 1e-6, "seed {seed} n {n} beta {beta}: {rep:?}");
            assert!(rep.policies_identical, "seed {seed} n {n} beta {beta}");
        }
    }
}

#[test]
fn linear_kernel_equivalence_with_dense_features() {
    let m = random_instance(4, 4, 3, 2, 4, FeatureMode::RandomLinear).unwrap();
    let ds = sample_dataset(&m, &solve_ddc(&m, 0.9), 300, 3, Mechanism::Softmax).unwrap();
    let rep = linear_equivalence(&ds, &m.features, 0.5, 0.9, 0.02).unwrap();
    assert!(rep.max_discrepancy() < 1e-6, "{rep:?}");
    assert!(rep.policies_identical);
}

#[test]
fn dual_penalty_matches_elliptical_potential() {
    let m = InstanceSpec::new(0, 5, 3, 3, FeatureMode::OneHotTabular).build().unwrap();
    let ds = sample_dataset(&m, &solve_ddc(&m, 0.9), 400, 7, Mechanism::Softmax).unwrap();
    let k = DomainKernel::new(&KernelSpec::linear(1.0), &m.features).unwrap();
    let (beta, lambda) = (1.7, 0.8);
    for h in 0..3 {
        let idx: Vec<usize> = (0..ds.n).map(|i| k.index(ds.states[h][i], ds.actions[h][i])).collect();
        let sample = k.sub_gram(&idx);
        let primal = gram_matrix(&ds, &m.features, h);
        let chol = spd_factor(&regularized(&primal, lambda), 0.0).unwrap();
        for s in 0..5 {
            for a in 0..3 {
                let z = k.index(s, a);
                let kz = DVector::from_fn(idx.len(), |i, _| k.gram[(idx[i], z)]);
                let dual = kernel_penalty(k.gram[(z, z)], &sample, &kz, lambda, beta).unwrap();
                let phi = m.features.phi(s, a);
                let lin = beta * elliptical_potential(phi, &primal, lambda).unwrap();
                let direct = beta * inverse_quadratic_form(&chol, &DVector::from_column_slice(phi)).sqrt();
                assert!((dual - lin).abs() < 1e-6, "h {h} s {s} a {a}: {dual} vs {lin}");
                assert!((lin - direct).abs() < 1e-12);
            }
        }
    }
}
