//! Coverage and effective-dimension diagnostics computed from exact occupancy
//! measures.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::agent::BehaviorModel;
use crate::error::{Error, Result};
use crate::linalg::{regularized, spd_factor, FACTOR_JITTER};
use crate::mdp::{occupancy, PolicyTable, TabularLinearMdp};

/// Relative eigenvalue cutoff defining the support of a PSD matrix.
const SUPPORT_TOLERANCE: f64 = 1e-12;

/// `E_pi[phi(s_h, a_h) phi(s_h, a_h)^T]` for every step, under the true
/// dynamics from the initial state.
pub fn feature_second_moments(mdp: &TabularLinearMdp, pi: &PolicyTable) -> Vec<DMatrix<f64>> {
    let d = mdp.dim();
    occupancy(mdp, pi)
        .iter()
        .map(|occ| {
            let mut m = DMatrix::zeros(d, d);
            for (s, row) in occ.iter().enumerate() {
                for (a, &p) in row.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let phi = mdp.features.phi(s, a);
                    for i in 0..d {
                        if phi[i] == 0.0 {
                            continue;
                        }
                        for j in 0..d {
                            m[(i, j)] += p * phi[i] * phi[j];
                        }
                    }
                }
            }
            m
        })
        .collect()
}

/// Numerical rank with the crate's relative cutoff.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let eig = m.clone().symmetric_eigen().eigenvalues;
    let top = eig.iter().cloned().fold(0.0, f64::max);
    eig.iter().filter(|&&e| e > SUPPORT_TOLERANCE * top.max(f64::MIN_POSITIVE)).count()
}

/// Largest `c` with `vᵀ B v >= c vᵀ A v` for every `v` in the range of `A`.
/// Returns `+inf` when `A = 0`.
pub fn relative_min_eigenvalue(b: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let eig = a.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return f64::INFINITY;
    }
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > SUPPORT_TOLERANCE * top)
        .collect();
    let d = a.nrows();
    let mut w = DMatrix::zeros(d, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let scale = eig.eigenvalues[i].sqrt().recip();
        w.set_column(c, &(eig.eigenvectors.column(i) * scale));
    }
    let reduced = w.transpose() * b * &w;
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    reduced.symmetric_eigen().eigenvalues.min()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// `min_h` of the per-step constants.
    pub c_dagger_estimate: f64,
    /// Largest `c` with `Sigma_h >= c Sigma*_h` on the support of `Sigma*_h`.
    pub per_step: Vec<f64>,
    /// Smallest eigenvalue of `Sigma_h` over steps.
    pub min_eig_sigma_b: f64,
    pub rank_sigma_b: Vec<usize>,
    pub n: usize,
}

/// Population analogue of the single-policy coverage constant. Since
/// `Lambda_h ~ n Sigma_h`, the `n` factors cancel; it is recorded for reports.
pub fn coverage_check(
    mdp: &TabularLinearMdp,
    behavior: &BehaviorModel,
    pi_star: &PolicyTable,
    n: usize,
) -> Result<CoverageReport> {
    behavior
        .pi_b
        .check_shape(mdp.horizon, mdp.num_states, mdp.num_actions)?;
    pi_star.check_shape(mdp.horizon, mdp.num_states, mdp.num_actions)?;
    let sigma_b = feature_second_moments(mdp, &behavior.pi_b);
    let sigma_star = feature_second_moments(mdp, pi_star);
    let per_step: Vec<f64> = sigma_b
        .iter()
        .zip(&sigma_star)
        .map(|(b, s)| relative_min_eigenvalue(b, s))
        .collect();
    let min_eig_sigma_b = sigma_b
        .iter()
        .map(|m| m.clone().symmetric_eigen().eigenvalues.min())
        .fold(f64::INFINITY, f64::min);
    Ok(CoverageReport {
        c_dagger_estimate: per_step.iter().cloned().fold(f64::INFINITY, f64::min),
        per_step,
        min_eig_sigma_b,
        rank_sigma_b: sigma_b.iter().map(numerical_rank).collect(),
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveDimensions {
    /// `sum_h Tr((Lambda_h + lambda I)^{-1} Sigma_h)^{1/2}`
    pub d_eff_sample: f64,
    /// `sum_h Tr((n Sigma_h + lambda I)^{-1} Sigma*_h)^{1/2}`
    pub d_eff_pop: f64,
}

fn trace_of_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<f64> {
    let chol = spd_factor(m, FACTOR_JITTER)?;
    Ok(chol.solve(rhs).trace())
}

pub fn effective_dimensions(
    gram: &[DMatrix<f64>],
    sigma_b: &[DMatrix<f64>],
    sigma_star: &[DMatrix<f64>],
    lambda_reg: f64,
    n: usize,
) -> Result<EffectiveDimensions> {
    if !(lambda_reg > 0.0) {
        return Err(Error::config("lambda_reg", "must be positive"));
    }
    if gram.len() != sigma_b.len() || gram.len() != sigma_star.len() {
        return Err(Error::Shape("per-step matrix lists differ in length".into()));
    }
    let mut sample = 0.0;
    let mut pop = 0.0;
    for h in 0..gram.len() {
        let d = gram[h].nrows();
        if sigma_b[h].nrows() != d || sigma_star[h].nrows() != d {
            return Err(Error::Dimension {
                step: h,
                what: "second-moment matrix".into(),
            });
        }
        sample += trace_of_solve(&regularized(&gram[h], lambda_reg), &sigma_b[h])?
            .max(0.0)
            .sqrt();
        pop += trace_of_solve(&regularized(&(&sigma_b[h] * n as f64), lambda_reg), &sigma_star[h])?
            .max(0.0)
            .sqrt();
    }
    Ok(EffectiveDimensions {
        d_eff_sample: sample,
        d_eff_pop: pop,
    })
}
