//! RKHS version of both estimation stages and of the planner.
//!
//! Inputs `z = (s, a)` are embedded as `phi(s, a)` and a base kernel is
//! applied to the embeddings. The kernel is then centered at the anchor,
//! `K~(z, z') = K(z, z') - K(z, (s', a_0)) - K((s, a_0), z') + K((s, a_0), (s', a_0))`,
//! so every function in the RKHS vanishes at `(s, a_0)`, and rescaled so
//! that `sup_z K~(z, z) <= 1`. The state and action spaces are finite, so all
//! kernel evaluations are lookups in the Gram matrix of the whole domain.
//!
//! The choice model is fitted with a ridge penalty `lambda/2 |Q|_H^2` on the
//! summed log-likelihood. Its representer lives on the support points
//! `(s, a')` for every visited `s` and every `a'`, and the finite problem is
//! solved in the coordinates of an eigendecomposition of the support Gram.
//! The reward and transition regressions are kernel ridge regressions over
//! the `n` sample points.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::ChoiceDataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, regularized, spd_factor, FACTOR_JITTER};
use crate::mdp::{FeatureTable, TabularLinearMdp};
use crate::mle::{ChoiceGroup, ChoiceProblem, EstimatedModel, MleConfig, SolveDiagnostics};
use crate::planner::{backward_induction, BetaMode, PessimisticPolicy, StepModel, DEFAULT_H_CAP};

/// Largest negative radicand attributed to roundoff.
pub const RADICAND_TOLERANCE: f64 = 1e-8;

/// Relative eigenvalue cutoff for the support Gram.
const EIGEN_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KernelKind {
    /// `exp(-|x - y|^2 / (2 bandwidth^2))`
    Rbf { bandwidth: f64 },
    /// `(x . y + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
    /// `x . y` on the features; already bounded by one and zero at the
    /// anchor, so it is used without rescaling.
    LinearViaFeatures,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// `lambda`, shared by the choice-model penalty, both ridge regressions
    /// and the penalty.
    pub lambda_reg: f64,
    /// `R_r`, the RKHS-norm bound on the reward.
    pub rkhs_norm_bound: f64,
}

impl KernelSpec {
    pub fn linear(lambda_reg: f64) -> Self {
        KernelSpec {
            kind: KernelKind::LinearViaFeatures,
            lambda_reg,
            rkhs_norm_bound: 1.0,
        }
    }

    pub fn rbf(bandwidth: f64, lambda_reg: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Rbf { bandwidth },
            lambda_reg,
            rkhs_norm_bound: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_reg > 0.0) || !self.lambda_reg.is_finite() {
            return Err(Error::config("kernel.lambda_reg", "must be positive"));
        }
        if !(self.rkhs_norm_bound > 0.0) {
            return Err(Error::config("kernel.rkhs_norm_bound", "must be positive"));
        }
        match self.kind {
            KernelKind::Rbf { bandwidth } if !(bandwidth > 0.0) || !bandwidth.is_finite() => {
                Err(Error::config("kernel.bandwidth", "must be positive"))
            }
            KernelKind::Polynomial { degree, offset } if degree == 0 || !(offset >= 0.0) => Err(
                Error::config("kernel.polynomial", "need degree >= 1 and offset >= 0"),
            ),
            _ => Ok(()),
        }
    }

    fn base(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Rbf { bandwidth } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelKind::Polynomial { degree, offset } => (dot(x, y) + offset).powi(degree as i32),
            KernelKind::LinearViaFeatures => dot(x, y),
        }
    }
}

/// The centered, normalized kernel on every `(s, a)`; index `s * A + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainKernel {
    pub num_states: usize,
    pub num_actions: usize,
    pub gram: DMatrix<f64>,
    /// Factor the centered kernel was divided by.
    pub scale: f64,
}

impl DomainKernel {
    pub fn new(spec: &KernelSpec, features: &FeatureTable) -> Result<Self> {
        spec.validate()?;
        let (ns, na) = (features.num_states, features.num_actions);
        let m = ns * na;
        let anchor = |s: usize| features.phi(s, 0);
        let point = |i: usize| features.phi(i / na, i % na);
        let mut gram = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let (si, sj) = (i / na, j / na);
                let v = spec.base(point(i), point(j))
                    - spec.base(point(i), anchor(sj))
                    - spec.base(anchor(si), point(j))
                    + spec.base(anchor(si), anchor(sj));
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let scale = match spec.kind {
            KernelKind::LinearViaFeatures => 1.0,
            _ => {
                let top = gram.diagonal().max();
                if top > 0.0 {
                    top
                } else {
                    1.0
                }
            }
        };
        if scale != 1.0 {
            gram /= scale;
        }
        Ok(DomainKernel {
            num_states: ns,
            num_actions: na,
            gram,
            scale,
        })
    }

    pub fn index(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    pub fn eval(&self, z: (usize, usize), w: (usize, usize)) -> f64 {
        self.gram[(self.index(z.0, z.1), self.index(w.0, w.1))]
    }

    pub fn len(&self) -> usize {
        self.gram.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[K(z_i, z_j)]` for the listed domain indices.
    pub fn sub_gram(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), idx.len(), |i, j| self.gram[(idx[i], idx[j])])
    }

    /// `[K(z_i, w)]` for every sample `i` (rows) and domain point `w` (columns).
    pub fn cross(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), self.len(), |i, w| self.gram[(idx[i], w)])
    }
}

/// Dual representation `f(z) = sum_i alpha_i K(z_i, z)` of one step's fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualFit {
    /// Expansion points `(s, a)`.
    pub points: Vec<(usize, usize)>,
    pub alpha: Vec<f64>,
    /// Gram matrix of the expansion points.
    pub gram: Vec<Vec<f64>>,
    /// Regression targets; empty for the choice model.
    pub response: Vec<f64>,
}

impl DualFit {
    pub fn evaluate(&self, kernel: &DomainKernel, s: usize, a: usize) -> f64 {
        self.points
            .iter()
            .zip(&self.alpha)
            .map(|(&p, &al)| al * kernel.eval(p, (s, a)))
            .sum()
    }

    /// Values at every `(s, a)`.
    pub fn table(&self, kernel: &DomainKernel) -> Vec<Vec<f64>> {
        (0..kernel.num_states)
            .map(|s| (0..kernel.num_actions).map(|a| self.evaluate(kernel, s, a)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelChoiceModel {
    pub spec: KernelSpec,
    pub fits: Vec<DualFit>,
    /// `Q_hat`, `pi_hat`, `V_hat` tables; `theta` holds the coefficients in
    /// the eigen-coordinates of each step's support Gram.
    pub model: EstimatedModel,
}

fn sample_indices(ds: &ChoiceDataset, kernel: &DomainKernel, h: usize) -> Vec<usize> {
    ds.states[h]
        .iter()
        .zip(&ds.actions[h])
        .map(|(&s, &a)| kernel.index(s, a))
        .collect()
}

fn check_alignment(ds: &ChoiceDataset, features: &FeatureTable) -> Result<()> {
    ds.validate()?;
    if features.num_states != ds.num_states || features.num_actions != ds.num_actions {
        return Err(Error::Shape("feature table does not match the dataset".into()));
    }
    Ok(())
}

/// Kernel logistic regression per step. `cfg.parameter_bound` bounds
/// `|Q|_H`; `cfg.ridge` is ignored in favor of `spec.lambda_reg`.
pub fn kernel_fit_mle(
    ds: &ChoiceDataset,
    features: &FeatureTable,
    spec: &KernelSpec,
    cfg: &MleConfig,
) -> Result<KernelChoiceModel> {
    check_alignment(ds, features)?;
    cfg.validate()?;
    let kernel = DomainKernel::new(spec, features)?;
    let na = ds.num_actions;
    let ridge = spec.lambda_reg / ds.n as f64;
    let steps: Vec<(DualFit, Vec<f64>, Vec<Vec<f64>>, SolveDiagnostics, f64)> = (0..ds.horizon)
        .into_par_iter()
        .map(|h| {
            let counts = ds.counts(h);
            let visited: Vec<usize> = (0..ds.num_states)
                .filter(|&s| counts[s].iter().any(|&c| c > 0))
                .collect();
            let points: Vec<(usize, usize)> =
                visited.iter().flat_map(|&s| (0..na).map(move |a| (s, a))).collect();
            let idx: Vec<usize> = points.iter().map(|&(s, a)| kernel.index(s, a)).collect();
            let gram = kernel.sub_gram(&idx);
            let eig = gram.clone().symmetric_eigen();
            let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
            let keep: Vec<usize> = (0..idx.len())
                .filter(|&i| eig.eigenvalues[i] > EIGEN_CUTOFF * top)
                .collect();
            let k = keep.len();
            // psi(z_j) = row j of U_k diag(sqrt(ev_k)), so psi psi^T = gram
            let psi = DMatrix::from_fn(idx.len(), k, |j, c| {
                eig.eigenvectors[(j, keep[c])] * eig.eigenvalues[keep[c]].sqrt()
            });
            let groups = visited
                .iter()
                .enumerate()
                .map(|(g, &s)| ChoiceGroup {
                    features: (0..na)
                        .map(|a| psi.row(g * na + a).iter().cloned().collect())
                        .collect(),
                    counts: counts[s].iter().map(|&c| c as f64).collect(),
                })
                .collect();
            let problem = ChoiceProblem {
                groups,
                dim: k,
                n: ds.n as f64,
                ridge,
            };
            let sol = if k == 0 {
                None
            } else {
                Some(problem.solve(cfg, &vec![0.0; k], h)?)
            };
            let beta = sol.as_ref().map_or_else(Vec::new, |s| s.theta.clone());
            // alpha = U_k diag(ev_k^{-1/2}) beta
            let alpha: Vec<f64> = (0..idx.len())
                .map(|j| {
                    (0..k)
                        .map(|c| eig.eigenvectors[(j, keep[c])] / eig.eigenvalues[keep[c]].sqrt() * beta[c])
                        .sum()
                })
                .collect();
            let fit = DualFit {
                points,
                alpha,
                gram: crate::linalg::from_dmatrix(&gram),
                response: Vec::new(),
            };
            let q = fit.table(&kernel);
            let ll = if k == 0 { problem.log_likelihood(&[]) } else { problem.log_likelihood(&beta) };
            let diag = sol.map_or(
                SolveDiagnostics {
                    iterations: 0,
                    gradient_norm: 0.0,
                    on_boundary: false,
                    multiplier: 0.0,
                    unobserved_choices: 0,
                },
                |s| s.diagnostics,
            );
            Ok((fit, beta, q, diag, ll))
        })
        .collect::<Result<_>>()?;
    let mut fits = Vec::with_capacity(ds.horizon);
    let mut thetas = Vec::with_capacity(ds.horizon);
    let mut q_hat = Vec::with_capacity(ds.horizon);
    let mut diagnostics = Vec::with_capacity(ds.horizon);
    let mut log_likelihood = Vec::with_capacity(ds.horizon);
    for (fit, beta, q, diag, ll) in steps {
        fits.push(fit);
        thetas.push(beta);
        q_hat.push(q);
        diagnostics.push(diag);
        log_likelihood.push(ll);
    }
    let mut model = EstimatedModel::from_q(thetas, q_hat);
    model.diagnostics = diagnostics;
    model.log_likelihood = log_likelihood;
    Ok(KernelChoiceModel {
        spec: *spec,
        fits,
        model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReward {
    pub spec: KernelSpec,
    pub gamma: f64,
    pub fits: Vec<DualFit>,
    /// `r_hat_h(s, a)` at every domain point.
    pub reward: Vec<Vec<Vec<f64>>>,
}

/// Factor of `K_h + lambda I` over the step-`h` samples.
fn factor_samples(kernel: &DomainKernel, idx: &[usize], lambda: f64) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>)> {
    let gram = kernel.sub_gram(idx);
    let chol = spd_factor(&regularized(&gram, lambda), FACTOR_JITTER)?;
    Ok((gram, chol))
}

/// Kernel ridge regression of `Q_hat_h(z) - gamma V_hat_{h+1}(s')`.
pub fn kernel_recover_reward(
    ds: &ChoiceDataset,
    est: &EstimatedModel,
    features: &FeatureTable,
    spec: &KernelSpec,
    gamma: f64,
) -> Result<KernelReward> {
    check_alignment(ds, features)?;
    if est.q_hat.len() != ds.horizon {
        return Err(Error::Shape("estimate and dataset horizons differ".into()));
    }
    let kernel = DomainKernel::new(spec, features)?;
    let fits: Vec<DualFit> = (0..ds.horizon)
        .into_par_iter()
        .map(|h| {
            let idx = sample_indices(ds, &kernel, h);
            let y: Vec<f64> = (0..ds.n)
                .map(|i| {
                    let (s, a, sn) = (ds.states[h][i], ds.actions[h][i], ds.next_states[h][i]);
                    est.q_hat[h][s][a] - gamma * est.next_value(h, sn)
                })
                .collect();
            if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteTarget { step: h, index: i });
            }
            let (gram, chol) = factor_samples(&kernel, &idx, spec.lambda_reg)?;
            let alpha = chol.solve(&DVector::from_column_slice(&y));
            Ok(DualFit {
                points: ds.states[h].iter().cloned().zip(ds.actions[h].iter().cloned()).collect(),
                alpha: alpha.iter().cloned().collect(),
                gram: crate::linalg::from_dmatrix(&gram),
                response: y,
            })
        })
        .collect::<Result<_>>()?;
    let reward = fits.iter().map(|f| f.table(&kernel)).collect();
    Ok(KernelReward {
        spec: *spec,
        gamma,
        fits,
        reward,
    })
}

/// `beta lambda^{-1/2} sqrt(K(z, z) - k^T (K + lambda I)^{-1} k)` with the
/// radicand clamped at zero; an empty `gram` means no data.
pub fn kernel_penalty(
    k_zz: f64,
    gram: &DMatrix<f64>,
    k_z: &DVector<f64>,
    lambda_reg: f64,
    beta: f64,
) -> Result<f64> {
    if !(lambda_reg > 0.0) {
        return Err(Error::config("lambda_reg", "must be positive"));
    }
    let explained = if gram.nrows() == 0 {
        0.0
    } else {
        let chol = spd_factor(&regularized(gram, lambda_reg), FACTOR_JITTER)?;
        crate::linalg::inverse_quadratic_form(&chol, k_z)
    };
    penalty_from_radicand(k_zz - explained, lambda_reg, beta)
}

fn penalty_from_radicand(radicand: f64, lambda_reg: f64, beta: f64) -> Result<f64> {
    if radicand < -RADICAND_TOLERANCE {
        return Err(Error::NegativeRadicand { value: radicand });
    }
    Ok(beta * (radicand.max(0.0) / lambda_reg).sqrt())
}

/// Penalty at every domain point from a sample factorization.
fn penalty_table(
    kernel: &DomainKernel,
    chol: &Cholesky<f64, Dyn>,
    cross: &DMatrix<f64>,
    lambda_reg: f64,
    beta: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut w = cross.clone();
    chol.l_dirty().solve_lower_triangular_mut(&mut w);
    (0..kernel.num_states)
        .map(|s| {
            (0..kernel.num_actions)
                .map(|a| {
                    let z = kernel.index(s, a);
                    let rad = kernel.gram[(z, z)] - w.column(z).norm_squared();
                    penalty_from_radicand(rad, lambda_reg, beta)
                })
                .collect()
        })
        .collect()
}

/// `(1/2) log det(I + K / lambda)`.
pub fn information_gain(gram: &DMatrix<f64>, lambda_reg: f64) -> Result<f64> {
    if gram.nrows() == 0 {
        return Ok(0.0);
    }
    let m = DMatrix::identity(gram.nrows(), gram.nrows()) + gram / lambda_reg;
    let chol = spd_factor(&m, FACTOR_JITTER)?;
    Ok(chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationGainProxy {
    /// `(1/2) log det(I + K_D / lambda)` on the realized samples.
    pub realized: f64,
    /// Greedy maximization over multisets of domain points of the same size.
    pub greedy: f64,
    /// `greedy / (1 - 1/e)`, an upper estimate of the supremum by
    /// submodularity.
    pub greedy_upper: f64,
}

/// Greedy log-det maximization: each pick adds `(1/2) log(1 + sigma^2(z)/lambda)`
/// for the point of largest posterior variance.
pub fn greedy_information_gain(domain_gram: &DMatrix<f64>, lambda_reg: f64, budget: usize) -> f64 {
    let m = domain_gram.nrows();
    if m == 0 {
        return 0.0;
    }
    let mut cov = domain_gram.clone();
    let mut total = 0.0;
    for _ in 0..budget {
        let (best, var) = (0..m)
            .map(|i| (i, cov[(i, i)]))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let var = var.max(0.0);
        total += 0.5 * (1.0 + var / lambda_reg).ln();
        let col = cov.column(best).clone_owned();
        cov -= &col * col.transpose() / (var + lambda_reg);
    }
    total
}

pub fn information_gain_proxy(
    data_gram: &DMatrix<f64>,
    domain_gram: &DMatrix<f64>,
    lambda_reg: f64,
) -> Result<InformationGainProxy> {
    let realized = information_gain(data_gram, lambda_reg)?;
    let greedy = greedy_information_gain(domain_gram, lambda_reg, data_gram.nrows());
    Ok(InformationGainProxy {
        realized,
        greedy,
        greedy_upper: greedy / (1.0 - (-1.0f64).exp()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelPlan {
    pub policy: PessimisticPolicy,
    /// Dual fits of `P V~` per step.
    pub transition_fits: Vec<DualFit>,
}

struct KernelStepModel<'a> {
    ds: &'a ChoiceDataset,
    reward: &'a KernelReward,
    penalty: Vec<Vec<Vec<f64>>>,
    factors: Vec<Cholesky<f64, Dyn>>,
    cross: Vec<DMatrix<f64>>,
    num_actions: usize,
}

impl StepModel for KernelStepModel<'_> {
    fn penalty(&self, h: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self.penalty[h].clone())
    }

    fn reward(&self, h: usize) -> Vec<Vec<f64>> {
        self.reward.reward[h].clone()
    }

    fn regress_next(&self, h: usize, v_next: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let y = DVector::from_iterator(self.ds.n, self.ds.next_states[h].iter().map(|&sn| v_next[sn]));
        let alpha = self.factors[h].solve(&y);
        let values = self.cross[h].transpose() * &alpha;
        let na = self.num_actions;
        let table = values.as_slice().chunks(na).map(|c| c.to_vec()).collect();
        Ok((alpha.iter().cloned().collect(), table))
    }
}

/// Pessimistic value iteration with every regression in dual form and the
/// posterior-variance penalty.
pub fn kernel_plan(
    ds: &ChoiceDataset,
    reward: &KernelReward,
    features: &FeatureTable,
    beta: f64,
) -> Result<KernelPlan> {
    check_alignment(ds, features)?;
    if reward.reward.len() != ds.horizon {
        return Err(Error::Shape("kernel reward and dataset horizons differ".into()));
    }
    if !(beta >= 0.0) {
        return Err(Error::config("beta", "must be nonnegative"));
    }
    let spec = &reward.spec;
    let kernel = DomainKernel::new(spec, features)?;
    let parts: Vec<(Cholesky<f64, Dyn>, DMatrix<f64>, Vec<Vec<f64>>)> = (0..ds.horizon)
        .into_par_iter()
        .map(|h| {
            let idx = sample_indices(ds, &kernel, h);
            let (_, chol) = factor_samples(&kernel, &idx, spec.lambda_reg)?;
            let cross = kernel.cross(&idx);
            let pen = penalty_table(&kernel, &chol, &cross, spec.lambda_reg, beta)?;
            Ok((chol, cross, pen))
        })
        .collect::<Result<_>>()?;
    let mut factors = Vec::with_capacity(ds.horizon);
    let mut cross = Vec::with_capacity(ds.horizon);
    let mut penalty = Vec::with_capacity(ds.horizon);
    for (c, x, p) in parts {
        factors.push(c);
        cross.push(x);
        penalty.push(p);
    }
    let model = KernelStepModel {
        ds,
        reward,
        penalty,
        factors,
        cross,
        num_actions: ds.num_actions,
    };
    let mut policy = backward_induction(
        &model,
        ds.horizon,
        ds.num_states,
        ds.num_actions,
        beta,
        spec.lambda_reg,
        BetaMode::Manual,
    )?;
    let transition_fits = policy
        .u_tilde
        .iter()
        .enumerate()
        .map(|(h, alpha)| DualFit {
            points: ds.states[h].iter().cloned().zip(ds.actions[h].iter().cloned()).collect(),
            alpha: alpha.clone(),
            gram: Vec::new(),
            response: ds.next_states[h].iter().map(|&sn| policy.next_value(h)[sn]).collect(),
        })
        .collect();
    policy.u_tilde = vec![Vec::new(); ds.horizon];
    Ok(KernelPlan {
        policy,
        transition_fits,
    })
}

/// Eigenvalue-decay regimes with the matching `lambda` and `beta` schedules.
/// The constants are user supplied; the decay itself is not verified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "regime")]
pub enum DecayRegime {
    FiniteSpectrum { mu: f64 },
    ExponentialDecay { mu: f64 },
    PolynomialDecay { mu: f64, tau: f64, input_dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulePreset {
    pub regime: DecayRegime,
    /// Multiplies the `lambda` schedule.
    pub lambda_constant: f64,
    /// Multiplies the `beta` schedule.
    pub beta_constant: f64,
    pub delta: f64,
    pub h_cap: usize,
}

impl SchedulePreset {
    pub fn new(regime: DecayRegime, lambda_constant: f64, beta_constant: f64) -> Self {
        SchedulePreset {
            regime,
            lambda_constant,
            beta_constant,
            delta: 0.05,
            h_cap: DEFAULT_H_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_constant > 0.0) || !(self.beta_constant >= 0.0) {
            return Err(Error::config("preset", "constants must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("preset.delta", "must lie in (0, 1)"));
        }
        if let DecayRegime::PolynomialDecay { mu, tau, .. } = self.regime {
            if !(mu * (1.0 - 2.0 * tau) > 1.0) || !(0.0..0.5).contains(&tau) {
                return Err(Error::config(
                    "preset.regime",
                    "polynomial decay needs tau in [0, 1/2) and mu (1 - 2 tau) > 1",
                ));
            }
        }
        Ok(())
    }

    /// Exponent of `n R_r` in the polynomial-decay schedules.
    pub fn kappa(&self) -> f64 {
        match self.regime {
            DecayRegime::PolynomialDecay { mu, tau, input_dim } => {
                let d = input_dim as f64;
                (d + 1.0) / (2.0 * (mu + d)) + 1.0 / (mu * (1.0 - 2.0 * tau) - 1.0)
            }
            _ => 0.0,
        }
    }

    pub fn lambda(&self, n: usize, horizon: usize) -> f64 {
        let log_nd = (n.max(1) as f64 / self.delta).ln();
        self.lambda_constant
            * match self.regime {
                DecayRegime::FiniteSpectrum { mu } => mu * log_nd,
                DecayRegime::ExponentialDecay { mu } => log_nd.powf(1.0 + 1.0 / mu),
                DecayRegime::PolynomialDecay { mu, tau, .. } => {
                    (n.max(1) as f64 / horizon as f64).powf(2.0 / (mu * (1.0 - 2.0 * tau) - 1.0)) * log_nd
                }
            }
    }

    /// `beta` given the realized sample effective dimension.
    pub fn beta(
        &self,
        n: usize,
        horizon: usize,
        num_actions: usize,
        rkhs_norm_bound: f64,
        d_eff_sample: f64,
    ) -> f64 {
        let h = horizon as f64;
        let lambda = self.lambda(n, horizon);
        let arg = (n.max(1) as f64 * rkhs_norm_bound * h / self.delta).ln().max(0.0);
        let growth = match self.regime {
            DecayRegime::FiniteSpectrum { mu } | DecayRegime::ExponentialDecay { mu } => {
                arg.powf(0.5 + 0.5 / mu)
            }
            DecayRegime::PolynomialDecay { .. } => {
                (n.max(1) as f64 * rkhs_norm_bound).powf(self.kappa()) * arg.sqrt()
            }
        };
        let e_h = (horizon.min(self.h_cap) as f64).exp();
        self.beta_constant
            * h
            * (lambda.sqrt() * rkhs_norm_bound + d_eff_sample * e_h * num_actions as f64 * growth)
    }
}

/// Runs the kernel estimation stages and the kernel planner on a known
/// instance; convenience for reports and equivalence checks.
pub fn kernel_pipeline(
    mdp: &TabularLinearMdp,
    ds: &ChoiceDataset,
    spec: &KernelSpec,
    cfg: &MleConfig,
    gamma: f64,
    beta: f64,
) -> Result<(KernelChoiceModel, KernelReward, KernelPlan)> {
    let fit = kernel_fit_mle(ds, &mdp.features, spec, cfg)?;
    let reward = kernel_recover_reward(ds, &fit.model, &mdp.features, spec, gamma)?;
    let plan = kernel_plan(ds, &reward, &mdp.features, beta)?;
    Ok((fit, reward, plan))
}

/// Largest discrepancies between the linear stages and their dual forms
/// under [`KernelKind::LinearViaFeatures`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub q_hat: f64,
    pub reward: f64,
    pub penalty: f64,
    pub q_tilde: f64,
    pub policies_identical: bool,
}

impl EquivalenceReport {
    pub fn max_discrepancy(&self) -> f64 {
        self.q_hat.max(self.reward).max(self.penalty).max(self.q_tilde)
    }
}

fn max_table_gap(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> f64 {
    a.iter()
        .flatten()
        .flatten()
        .zip(b.iter().flatten().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Runs each linear stage and its kernel counterpart on identical inputs.
/// The choice model uses ridge `lambda / n` on both sides; the reward stages
/// both consume the linear estimate, and each planner consumes its own
/// stage's reward.
pub fn linear_equivalence(
    ds: &ChoiceDataset,
    features: &FeatureTable,
    lambda_reg: f64,
    gamma: f64,
    beta: f64,
) -> Result<EquivalenceReport> {
    let spec = KernelSpec::linear(lambda_reg);
    let mut cfg = MleConfig::for_instance(ds.horizon, features.dim);
    cfg.ridge = lambda_reg / ds.n as f64;
    let linear_est = crate::mle::fit_mle(ds, features, &cfg)?;
    let kernel_est = kernel_fit_mle(ds, features, &spec, &cfg)?;
    let linear_rec = crate::reward::recover_reward(ds, &linear_est, features, gamma, lambda_reg)?;
    let kernel_rec = kernel_recover_reward(ds, &linear_est, features, &spec, gamma)?;
    let linear_reward: Vec<Vec<Vec<f64>>> = (0..ds.horizon)
        .map(|h| {
            (0..features.num_states)
                .map(|s| (0..features.num_actions).map(|a| linear_rec.reward(features, h, s, a)).collect())
                .collect()
        })
        .collect();
    let linear_plan = crate::planner::plan(
        ds,
        &linear_rec,
        features,
        &crate::planner::PlannerConfig::manual(beta, lambda_reg),
    )?;
    let kernel_plan = kernel_plan(ds, &kernel_rec, features, beta)?;
    Ok(EquivalenceReport {
        q_hat: max_table_gap(&linear_est.q_hat, &kernel_est.model.q_hat),
        reward: max_table_gap(&linear_reward, &kernel_rec.reward),
        penalty: max_table_gap(&linear_plan.penalty, &kernel_plan.policy.penalty),
        q_tilde: max_table_gap(&linear_plan.q_tilde, &kernel_plan.policy.q_tilde),
        policies_identical: linear_plan.pi_tilde == kernel_plan.policy.pi_tilde,
    })
}
