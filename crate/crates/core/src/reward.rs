//! Reward recovery from the Bellman residual of the fitted choice model.
//!
//! Given `Q_hat` and `V_hat`, the reward at step `h` is the ridge regression of
//! `Q_hat_h(s, a) - gamma V_hat_{h+1}(s')` on `phi(s, a)` over the logged
//! transitions. The same Gram matrix `Lambda_h` drives the elliptical
//! potential `|phi|_{(Lambda_h + lambda I)^{-1}}` used by the error
//! certificate and by the planner's penalty.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::ChoiceDataset;
use crate::error::{Error, Result};
use crate::linalg::{
    from_dmatrix, inverse_quadratic_form, regularized, spd_factor, to_dmatrix, FACTOR_JITTER,
};
use crate::mdp::{FeatureTable, TabularLinearMdp};
use crate::mle::EstimatedModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredReward {
    /// `w_hat_h`, with `r_hat_h(s, a) = phi(s, a) . w_hat_h`.
    pub w_hat: Vec<Vec<f64>>,
    /// `Lambda_h = sum_i phi_i phi_i^T`.
    pub gram: Vec<Vec<Vec<f64>>>,
    pub lambda_reg: f64,
    pub gamma: f64,
}

/// `sum_i phi(s_h^i, a_h^i) phi(s_h^i, a_h^i)^T`.
pub fn gram_matrix(ds: &ChoiceDataset, features: &FeatureTable, h: usize) -> DMatrix<f64> {
    let d = features.dim;
    let mut m = DMatrix::zeros(d, d);
    for (s, row) in ds.counts(h).iter().enumerate() {
        for (a, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let phi = features.phi(s, a);
            let c = c as f64;
            for i in 0..d {
                if phi[i] == 0.0 {
                    continue;
                }
                for j in 0..d {
                    m[(i, j)] += c * phi[i] * phi[j];
                }
            }
        }
    }
    m
}

/// Ridge solution `(Lambda + lambda I)^{-1} sum_i phi_i y_i` for targets
/// indexed like the step-`h` samples.
pub(crate) fn ridge_solve(
    ds: &ChoiceDataset,
    features: &FeatureTable,
    h: usize,
    gram: &DMatrix<f64>,
    lambda_reg: f64,
    targets: &[f64],
) -> Result<Vec<f64>> {
    let d = features.dim;
    let mut rhs = DVector::zeros(d);
    for (i, (&s, &a)) in ds.states[h].iter().zip(&ds.actions[h]).enumerate() {
        let y = targets[i];
        if !y.is_finite() {
            return Err(Error::NonFiniteTarget { step: h, index: i });
        }
        for (j, &p) in features.phi(s, a).iter().enumerate() {
            rhs[j] += p * y;
        }
    }
    let chol = spd_factor(&regularized(gram, lambda_reg), FACTOR_JITTER)?;
    Ok(chol.solve(&rhs).iter().cloned().collect())
}

/// Ridge regression of the Bellman residual, one step at a time, with
/// `V_hat_H = 0`.
pub fn recover_reward(
    ds: &ChoiceDataset,
    est: &EstimatedModel,
    features: &FeatureTable,
    gamma: f64,
    lambda_reg: f64,
) -> Result<RecoveredReward> {
    if !(lambda_reg > 0.0) || !lambda_reg.is_finite() {
        return Err(Error::config("lambda_reg", "must be positive"));
    }
    ds.validate()?;
    if est.q_hat.len() != ds.horizon {
        return Err(Error::Shape("estimate and dataset horizons differ".into()));
    }
    let steps: Vec<(Vec<f64>, DMatrix<f64>)> = (0..ds.horizon)
        .into_par_iter()
        .map(|h| {
            let gram = gram_matrix(ds, features, h);
            let targets: Vec<f64> = (0..ds.n)
                .map(|i| {
                    let (s, a, sn) = (ds.states[h][i], ds.actions[h][i], ds.next_states[h][i]);
                    est.q_hat[h][s][a] - gamma * est.next_value(h, sn)
                })
                .collect();
            let w = ridge_solve(ds, features, h, &gram, lambda_reg, &targets)?;
            Ok((w, gram))
        })
        .collect::<Result<_>>()?;
    let (w_hat, grams): (Vec<_>, Vec<_>) = steps.into_iter().unzip();
    Ok(RecoveredReward {
        w_hat,
        gram: grams.iter().map(from_dmatrix).collect(),
        lambda_reg,
        gamma,
    })
}

impl RecoveredReward {
    pub fn reward(&self, features: &FeatureTable, h: usize, s: usize, a: usize) -> f64 {
        features.linear(s, a, &self.w_hat[h])
    }

    pub fn gram_matrix(&self, h: usize) -> DMatrix<f64> {
        to_dmatrix(&self.gram[h])
    }

    /// The true reward weights paired with the given Gram matrices.
    pub fn exact(mdp: &TabularLinearMdp, like: &RecoveredReward) -> Self {
        RecoveredReward {
            w_hat: mdp.reward_weights.clone(),
            ..like.clone()
        }
    }

    /// `|phi(s, a)|_{(Lambda_h + lambda I)^{-1}}` for every `(s, a)`.
    pub fn potentials(&self, features: &FeatureTable, h: usize) -> Result<Vec<Vec<f64>>> {
        potential_table(features, &self.gram_matrix(h), self.lambda_reg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub(crate) fn potential_table(
    features: &FeatureTable,
    gram: &DMatrix<f64>,
    lambda_reg: f64,
) -> Result<Vec<Vec<f64>>> {
    let chol = spd_factor(&regularized(gram, lambda_reg), FACTOR_JITTER)?;
    Ok((0..features.num_states)
        .map(|s| {
            (0..features.num_actions)
                .map(|a| {
                    let phi = DVector::from_column_slice(features.phi(s, a));
                    inverse_quadratic_form(&chol, &phi).max(0.0).sqrt()
                })
                .collect()
        })
        .collect())
}

/// `sqrt(phi^T (Lambda + lambda I)^{-1} phi)`, via a Cholesky factor.
pub fn elliptical_potential(phi: &[f64], gram: &DMatrix<f64>, lambda_reg: f64) -> Result<f64> {
    if !(lambda_reg > 0.0) {
        return Err(Error::config("lambda_reg", "must be positive"));
    }
    let chol = spd_factor(&regularized(gram, lambda_reg), FACTOR_JITTER)?;
    let x = DVector::from_column_slice(phi);
    Ok(inverse_quadratic_form(&chol, &x).max(0.0).sqrt())
}

/// Per-cell reward error against the ground truth together with the
/// elliptical potential that bounds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardCertificate {
    /// `|r - r_hat|`, `[h][s][a]`
    pub abs_error: Vec<Vec<Vec<f64>>>,
    pub potential: Vec<Vec<Vec<f64>>>,
    /// `|r - r_hat| / potential`; `0` when both vanish, `+inf` when only the
    /// potential does.
    pub ratio: Vec<Vec<Vec<f64>>>,
}

impl RewardCertificate {
    pub fn max_ratio(&self) -> f64 {
        self.ratio.iter().flatten().flatten().cloned().fold(0.0, f64::max)
    }

    pub fn max_abs_error(&self) -> f64 {
        self.abs_error.iter().flatten().flatten().cloned().fold(0.0, f64::max)
    }

    /// Columns `h,s,a,abs_error,potential,ratio`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["h", "s", "a", "abs_error", "potential", "ratio"])?;
        for (h, step) in self.abs_error.iter().enumerate() {
            for (s, row) in step.iter().enumerate() {
                for (a, err) in row.iter().enumerate() {
                    w.write_record(&[
                        h.to_string(),
                        s.to_string(),
                        a.to_string(),
                        err.to_string(),
                        self.potential[h][s][a].to_string(),
                        self.ratio[h][s][a].to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn reward_error_certificate(
    rec: &RecoveredReward,
    mdp: &TabularLinearMdp,
) -> Result<RewardCertificate> {
    if rec.w_hat.len() != mdp.horizon || rec.gram.len() != mdp.horizon {
        return Err(Error::Shape("recovered reward horizon differs from the instance".into()));
    }
    let f = &mdp.features;
    let mut abs_error = Vec::with_capacity(mdp.horizon);
    let mut potential = Vec::with_capacity(mdp.horizon);
    let mut ratio = Vec::with_capacity(mdp.horizon);
    for h in 0..mdp.horizon {
        let pot = rec.potentials(f, h)?;
        let err: Vec<Vec<f64>> = (0..mdp.num_states)
            .map(|s| {
                (0..mdp.num_actions)
                    .map(|a| (mdp.reward(h, s, a) - rec.reward(f, h, s, a)).abs())
                    .collect()
            })
            .collect();
        let rat = err
            .iter()
            .zip(&pot)
            .map(|(er, pr)| {
                er.iter()
                    .zip(pr)
                    .map(|(&e, &p)| match (e == 0.0, p == 0.0) {
                        (true, _) => 0.0,
                        (false, true) => f64::INFINITY,
                        (false, false) => e / p,
                    })
                    .collect()
            })
            .collect();
        abs_error.push(err);
        potential.push(pot);
        ratio.push(rat);
    }
    Ok(RewardCertificate {
        abs_error,
        potential,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{sample_dataset, solve_ddc, Mechanism, DATASET_SCHEMA_VERSION};
    use crate::mdp::{random_instance, FeatureMode};
    use crate::mle::{fit_mle, true_parameters, MleConfig};

    fn fixture(n: usize) -> (TabularLinearMdp, ChoiceDataset, EstimatedModel) {
        let m = random_instance(0, 5, 3, 3, 8, FeatureMode::OneHotTabular).unwrap();
        let b = solve_ddc(&m, 0.9);
        let ds = sample_dataset(&m, &b, n, 1, Mechanism::Softmax).unwrap();
        let est = fit_mle(&ds, &m.features, &MleConfig::for_instance(3, 8)).unwrap();
        (m, ds, est)
    }

    #[test]
    fn isotropic_potential() {
        let phi = [1.0, 0.0, 0.0];
        assert!((elliptical_potential(&phi, &DMatrix::zeros(3, 3), 1.0).unwrap() - 1.0).abs() < 1e-15);
        let n = 24.0;
        let gram = DMatrix::identity(3, 3) * n;
        let got = elliptical_potential(&phi, &gram, 1.0).unwrap();
        assert!((got - (n + 1.0f64).powf(-0.5)).abs() < 1e-15);
        assert_eq!(elliptical_potential(&[0.0; 3], &gram, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn single_sample_scalar_normal_equation() {
        // one live state, one non-anchor action, target t, lambda = 1 => w = t/2
        let features = FeatureTable::one_hot_tabular(2, 2);
        let ds = ChoiceDataset {
            schema_version: DATASET_SCHEMA_VERSION,
            n: 1,
            horizon: 1,
            num_states: 2,
            num_actions: 2,
            seed: 0,
            gamma: 0.0,
            mechanism: Mechanism::Softmax,
            states: vec![vec![0]],
            actions: vec![vec![1]],
            next_states: vec![vec![0]],
        };
        let t = 0.37;
        let est = EstimatedModel::from_parameters(&features, vec![vec![t]]);
        let rec = recover_reward(&ds, &est, &features, 0.5, 1.0).unwrap();
        assert!((rec.w_hat[0][0] - t / 2.0).abs() < 1e-15);
    }

    #[test]
    fn heavy_ridge_shrinks_to_zero() {
        let (m, ds, est) = fixture(400);
        let rec = recover_reward(&ds, &est, &m.features, 0.9, 1e9).unwrap();
        let bound = (400.0 * 3.0) / 1e9;
        for w in &rec.w_hat {
            assert!(crate::linalg::norm2(w) <= bound);
        }
    }

    #[test]
    fn shrinkage_is_monotone_in_lambda() {
        let (m, ds, est) = fixture(600);
        let grid = [1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0];
        let norms: Vec<Vec<f64>> = grid
            .iter()
            .map(|&l| {
                recover_reward(&ds, &est, &m.features, 0.9, l)
                    .unwrap()
                    .w_hat
                    .iter()
                    .map(|w| crate::linalg::norm2(w))
                    .collect()
            })
            .collect();
        for pair in norms.windows(2) {
            for h in 0..3 {
                assert!(pair[1][h] <= pair[0][h] + 1e-15);
            }
        }
    }

    #[test]
    fn normal_equations_hold_and_gram_is_psd() {
        let (m, ds, est) = fixture(800);
        let rec = recover_reward(&ds, &est, &m.features, 0.9, 1.0).unwrap();
        for h in 0..3 {
            let gram = rec.gram_matrix(h);
            assert!(gram.clone().symmetric_eigen().eigenvalues.min() >= -1e-10);
            let mut rhs = DVector::zeros(8);
            for i in 0..ds.n {
                let (s, a, sn) = (ds.states[h][i], ds.actions[h][i], ds.next_states[h][i]);
                let y = est.q_hat[h][s][a] - 0.9 * est.next_value(h, sn);
                for j in 0..8 {
                    rhs[j] += m.features.phi(s, a)[j] * y;
                }
            }
            let w = DVector::from_vec(rec.w_hat[h].clone());
            let resid = (regularized(&gram, 1.0) * w - rhs).amax();
            assert!(resid < 1e-8);
            for s in 0..5 {
                assert_eq!(rec.reward(&m.features, h, s, 0), 0.0);
            }
        }
    }

    #[test]
    fn non_positive_lambda_is_rejected() {
        let (m, ds, est) = fixture(50);
        assert!(recover_reward(&ds, &est, &m.features, 0.9, 0.0).is_err());
        assert!(recover_reward(&ds, &est, &m.features, 0.9, -1.0).is_err());
    }

    #[test]
    fn nan_target_names_step_and_index() {
        let (m, ds, mut est) = fixture(50);
        let first = (0..ds.n).find(|&i| ds.actions[1][i] != 0).unwrap();
        let (s, a) = (ds.states[1][first], ds.actions[1][first]);
        est.q_hat[1][s][a] = f64::NAN;
        match recover_reward(&ds, &est, &m.features, 0.9, 1.0) {
            Err(Error::NonFiniteTarget { step: 1, index }) => assert_eq!(index, first),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exact_weights_certify_zero_error() {
        let (m, ds, est) = fixture(300);
        let rec = recover_reward(&ds, &est, &m.features, 0.9, 1.0).unwrap();
        let cert = reward_error_certificate(&RecoveredReward::exact(&m, &rec), &m).unwrap();
        assert_eq!(cert.max_abs_error(), 0.0);
        assert_eq!(cert.max_ratio(), 0.0);
    }

    #[test]
    fn anchor_rows_have_zero_error() {
        let (m, ds, est) = fixture(300);
        let rec = recover_reward(&ds, &est, &m.features, 0.9, 1.0).unwrap();
        let cert = reward_error_certificate(&rec, &m).unwrap();
        for h in 0..3 {
            for s in 0..5 {
                assert_eq!(cert.abs_error[h][s][0], 0.0);
                assert_eq!(cert.ratio[h][s][0], 0.0);
            }
        }
        assert!(cert.max_ratio().is_finite());
    }

    #[test]
    fn closed_form_matches_gradient_descent() {
        let (m, ds, est) = fixture(30);
        let lambda = 1.0;
        let rec = recover_reward(&ds, &est, &m.features, 0.9, lambda).unwrap();
        for h in 0..3 {
            let samples: Vec<(Vec<f64>, f64)> = (0..ds.n)
                .map(|i| {
                    let (s, a, sn) = (ds.states[h][i], ds.actions[h][i], ds.next_states[h][i]);
                    (m.features.phi(s, a).to_vec(), est.q_hat[h][s][a] - 0.9 * est.next_value(h, sn))
                })
                .collect();
            // objective sum (phi.w - y)^2 + lambda |w|^2; L = 2 (max eig + lambda)
            let lip = 2.0 * (ds.n as f64 + lambda);
            let mut w = vec![0.0; 8];
            for _ in 0..5000 {
                let mut g: Vec<f64> = w.iter().map(|x| 2.0 * lambda * x).collect();
                for (phi, y) in &samples {
                    let r = crate::linalg::dot(phi, &w) - y;
                    for j in 0..8 {
                        g[j] += 2.0 * r * phi[j];
                    }
                }
                for j in 0..8 {
                    w[j] -= g[j] / lip;
                }
            }
            for j in 0..8 {
                assert!((w[j] - rec.w_hat[h][j]).abs() < 1e-6, "h {h} j {j}");
            }
        }
    }

    #[test]
    fn oracle_values_recover_reward_on_deterministic_instance() {
        let m = crate::mdp::InstanceSpec::new(2, 4, 3, 3, FeatureMode::OneHotTabular)
            .deterministic()
            .build()
            .unwrap();
        let b = solve_ddc(&m, 0.9);
        let ds = sample_dataset(&m, &b, 3000, 5, Mechanism::Softmax).unwrap();
        let est = EstimatedModel::from_parameters(&m.features, true_parameters(&m.features, &b));
        let rec = recover_reward(&ds, &est, &m.features, 0.9, 1e-8).unwrap();
        for h in 0..3 {
            let counts = ds.counts(h);
            for s in 0..4 {
                for a in 0..3 {
                    if counts[s][a] > 0 {
                        let err = (rec.reward(&m.features, h, s, a) - m.reward(h, s, a)).abs();
                        assert!(err <= 1e-4, "h {h} s {s} a {a}: {err}");
                    }
                }
            }
        }
    }
}
