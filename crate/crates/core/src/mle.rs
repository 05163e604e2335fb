//! Per-step multinomial-logit maximum likelihood for the agent's `Q`.
//!
//! With linear `Q_h(s, a) = phi(s, a) . theta_h` the step-`h` log-likelihood
//! is a concave logistic-regression objective. It is maximized over the
//! Euclidean ball `|theta| <= parameter_bound`, optionally with an extra
//! ridge term. Samples are aggregated into per-state action counts first, so
//! every evaluation costs `O(S A d)` no matter how large `n` is.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{BehaviorModel, ChoiceDataset};
use crate::error::{Error, Result};
use crate::linalg::{dot, log_sum_exp, norm2, softmax};
use crate::mdp::{FeatureTable, PolicyTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Damped Newton with Armijo backtracking; an active ball constraint is
    /// handled through its KKT multiplier.
    Newton,
    /// Projected gradient ascent with backtracking.
    GradientDescentBacktracking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleConfig {
    pub max_iterations: usize,
    /// Sup-norm of the projected gradient at termination.
    pub gradient_tolerance: f64,
    /// Radius of the parameter ball.
    pub parameter_bound: f64,
    pub solver: Solver,
    /// Optional `ridge / 2 * |theta|^2` subtracted from the mean
    /// log-likelihood. Zero gives the plain estimator.
    #[serde(default)]
    pub ridge: f64,
}

impl MleConfig {
    /// Defaults with the ball radius `H sqrt(d)`.
    pub fn for_instance(horizon: usize, dim: usize) -> Self {
        MleConfig {
            parameter_bound: horizon as f64 * (dim as f64).sqrt(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::config("gradient_tolerance", "must be positive"));
        }
        if !(self.parameter_bound > 0.0) {
            return Err(Error::config("parameter_bound", "must be positive"));
        }
        if self.ridge < 0.0 || !self.ridge.is_finite() {
            return Err(Error::config("ridge", "must be finite and nonnegative"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations", "must be positive"));
        }
        Ok(())
    }
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            max_iterations: 200,
            gradient_tolerance: 1e-9,
            parameter_bound: f64::INFINITY,
            solver: Solver::Newton,
            ridge: 0.0,
        }
    }
}

/// One state's worth of choices: the candidate feature vectors and how often
/// each was chosen.
#[derive(Debug, Clone)]
pub struct ChoiceGroup {
    pub features: Vec<Vec<f64>>,
    pub counts: Vec<f64>,
}

impl ChoiceGroup {
    fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Aggregated multinomial-logit problem:
/// `max (1/n) sum_i [u(z_i) - log sum_a exp u(s_i, a)] - ridge/2 |theta|^2`.
#[derive(Debug, Clone)]
pub struct ChoiceProblem {
    pub groups: Vec<ChoiceGroup>,
    pub dim: usize,
    pub n: f64,
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    /// Sup-norm of `theta - P(theta + grad)`.
    pub gradient_norm: f64,
    pub on_boundary: bool,
    /// KKT multiplier of the ball constraint (zero when inactive).
    pub multiplier: f64,
    /// Visited `(s, a)` with a nonzero feature that were never chosen.
    #[serde(default)]
    pub unobserved_choices: usize,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub diagnostics: SolveDiagnostics,
}

impl ChoiceProblem {
    pub fn from_dataset(ds: &ChoiceDataset, features: &FeatureTable, h: usize, ridge: f64) -> Self {
        let counts = ds.counts(h);
        let groups = counts
            .iter()
            .enumerate()
            .filter(|(_, row)| row.iter().any(|&c| c > 0))
            .map(|(s, row)| ChoiceGroup {
                features: (0..ds.num_actions).map(|a| features.phi(s, a).to_vec()).collect(),
                counts: row.iter().map(|&c| c as f64).collect(),
            })
            .collect();
        ChoiceProblem {
            groups,
            dim: features.dim,
            n: ds.n as f64,
            ridge,
        }
    }

    /// Mean log-likelihood without the ridge term.
    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let mut total = 0.0;
        for g in &self.groups {
            let u: Vec<f64> = g.features.iter().map(|f| dot(f, theta)).collect();
            let lse = log_sum_exp(&u);
            for (ua, &c) in u.iter().zip(&g.counts) {
                if c > 0.0 {
                    total += c * (ua - lse);
                }
            }
        }
        total / self.n
    }

    pub fn objective(&self, theta: &[f64]) -> f64 {
        let pen = if self.ridge > 0.0 {
            0.5 * self.ridge * dot(theta, theta)
        } else {
            0.0
        };
        self.log_likelihood(theta) - pen
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for grp in &self.groups {
            let u: Vec<f64> = grp.features.iter().map(|f| dot(f, theta)).collect();
            let p = softmax(&u);
            let tot = grp.total();
            for (a, f) in grp.features.iter().enumerate() {
                let w = (grp.counts[a] - tot * p[a]) / self.n;
                if w != 0.0 {
                    for (gj, fj) in g.iter_mut().zip(f) {
                        *gj += w * fj;
                    }
                }
            }
        }
        if self.ridge > 0.0 {
            for (gj, t) in g.iter_mut().zip(theta) {
                *gj -= self.ridge * t;
            }
        }
        g
    }

    /// Negative Hessian (positive semidefinite).
    pub fn curvature(&self, theta: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        let mut m = DMatrix::zeros(d, d);
        for grp in &self.groups {
            let u: Vec<f64> = grp.features.iter().map(|f| dot(f, theta)).collect();
            let p = softmax(&u);
            let w = grp.total() / self.n;
            let mut mean = vec![0.0; d];
            for (a, f) in grp.features.iter().enumerate() {
                for j in 0..d {
                    mean[j] += p[a] * f[j];
                }
            }
            for (a, f) in grp.features.iter().enumerate() {
                let pa = w * p[a];
                if pa == 0.0 {
                    continue;
                }
                for i in 0..d {
                    if f[i] == 0.0 {
                        continue;
                    }
                    for j in 0..d {
                        m[(i, j)] += pa * f[i] * f[j];
                    }
                }
            }
            for i in 0..d {
                for j in 0..d {
                    m[(i, j)] -= w * mean[i] * mean[j];
                }
            }
        }
        for i in 0..d {
            m[(i, i)] += self.ridge;
        }
        m
    }

    fn unobserved_choices(&self) -> usize {
        self.groups
            .iter()
            .map(|g| {
                g.features
                    .iter()
                    .zip(&g.counts)
                    .filter(|(f, &c)| c == 0.0 && f.iter().any(|&x| x != 0.0))
                    .count()
            })
            .sum()
    }

    pub fn solve(&self, cfg: &MleConfig, init: &[f64], step: usize) -> Result<Solution> {
        cfg.validate()?;
        let mut theta = project(init.to_vec(), cfg.parameter_bound);
        let sol = match cfg.solver {
            Solver::Newton => self.solve_newton(cfg, &mut theta, step)?,
            Solver::GradientDescentBacktracking => self.solve_projected_gradient(cfg, &mut theta, step)?,
        };
        Ok(Solution {
            diagnostics: SolveDiagnostics {
                unobserved_choices: self.unobserved_choices(),
                ..sol.diagnostics
            },
            ..sol
        })
    }

    fn penalized_grad_max(&self, theta: &[f64], mu: f64) -> f64 {
        self.gradient(theta)
            .iter()
            .zip(theta)
            .map(|(g, t)| (g - mu * t).abs())
            .fold(0.0, f64::max)
    }

    fn gradient_mapping(&self, theta: &[f64], bound: f64) -> f64 {
        let g = self.gradient(theta);
        let stepped: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t + gi).collect();
        let p = project(stepped, bound);
        theta
            .iter()
            .zip(&p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Newton iterations on `objective - mu/2 |theta|^2` starting at `theta`.
    /// Returns `Ok(iterations)` when the gradient sup-norm drops below `tol`,
    /// or `Err(iterations)` if the iterate leaves the ball `escape` or the
    /// budget runs out.
    fn newton_inner(
        &self,
        theta: &mut Vec<f64>,
        mu: f64,
        tol: f64,
        max_iter: usize,
        escape: f64,
    ) -> std::result::Result<usize, usize> {
        let d = self.dim;
        let obj = |t: &[f64]| self.objective(t) - 0.5 * mu * dot(t, t);
        let mut f = obj(theta);
        let mut polished = false;
        for it in 0..max_iter {
            let mut g = self.gradient(theta);
            for (gj, t) in g.iter_mut().zip(theta.iter()) {
                *gj -= mu * t;
            }
            let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if gmax <= tol {
                // one extra step is nearly free at quadratic convergence
                if polished || gmax <= 1e-3 * tol {
                    return Ok(it);
                }
                polished = true;
            }
            let mut curv = self.curvature(theta);
            // Levenberg shift: directions with no data have zero gradient and
            // zero curvature, so this only regularizes the solve.
            let shift = mu + 1e-10;
            for i in 0..d {
                curv[(i, i)] += shift;
            }
            let gv = DVector::from_vec(g);
            let dir = match curv.cholesky() {
                Some(c) => c.solve(&gv),
                None => gv.clone(),
            };
            let slope = gv.dot(&dir);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(a, b)| a + t * b).collect();
                let fc = obj(&cand);
                let flat = (fc - f).abs() <= 1e-13 * f.abs().max(1.0);
                if fc >= f + 1e-4 * t * slope || (flat && self.penalized_grad_max(&cand, mu) < gmax) {
                    *theta = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // no ascent is representable in floating point any more
                return if gmax <= tol { Ok(it) } else { Err(it) };
            }
            if norm2(theta) > escape {
                return Err(it + 1);
            }
        }
        Err(max_iter)
    }

    fn solve_newton(&self, cfg: &MleConfig, theta: &mut Vec<f64>, step: usize) -> Result<Solution> {
        let bound = cfg.parameter_bound;
        let tol = cfg.gradient_tolerance;
        let escape = if bound.is_finite() { bound * (1.0 + 1e-12) } else { f64::INFINITY };
        let start = theta.clone();
        match self.newton_inner(theta, 0.0, tol, cfg.max_iterations, escape) {
            Ok(iterations) => {
                return Ok(Solution {
                    objective: self.objective(theta),
                    diagnostics: SolveDiagnostics {
                        iterations,
                        gradient_norm: self.gradient_mapping(theta, bound),
                        on_boundary: false,
                        multiplier: 0.0,
                        unobserved_choices: 0,
                    },
                    theta: theta.clone(),
                });
            }
            Err(it) if !bound.is_finite() => {
                let gn = self.gradient_mapping(theta, bound);
                return Err(Error::NonConvergence {
                    step,
                    iterations: it,
                    gradient_norm: gn,
                    last_iterate: theta.clone(),
                });
            }
            Err(_) => {}
        }

        // The constraint is active: find mu > 0 with |theta(mu)| = bound,
        // where theta(mu) maximizes objective - mu/2 |theta|^2.
        let mut total_iter = 0usize;
        let mut inner = |mu: f64, th: &mut Vec<f64>| -> Result<()> {
            match self.newton_inner(th, mu, tol * 1e-2, cfg.max_iterations, f64::INFINITY) {
                Ok(k) => {
                    total_iter += k;
                    Ok(())
                }
                Err(k) => Err(Error::NonConvergence {
                    step,
                    iterations: total_iter + k,
                    gradient_norm: self.gradient_mapping(th, bound),
                    last_iterate: th.clone(),
                }),
            }
        };
        let mut hi = 1e-6;
        let mut th_hi = project(start, bound);
        loop {
            inner(hi, &mut th_hi)?;
            if norm2(&th_hi) <= bound {
                break;
            }
            hi *= 4.0;
            if hi > 1e12 {
                return Err(Error::NonConvergence {
                    step,
                    iterations: cfg.max_iterations,
                    gradient_norm: f64::NAN,
                    last_iterate: th_hi,
                });
            }
        }
        // Bracket [lo, hi]: |theta(lo)| > bound (lo = 0 stands for the
        // unconstrained problem), |theta(hi)| <= bound.
        let mut lo = 0.0f64;
        let mut th_lo: Option<Vec<f64>> = None;
        for _ in 0..400 {
            if (norm2(&th_hi) - bound).abs() <= 1e-13 * bound || (lo > 0.0 && hi - lo <= 1e-15 * hi) {
                break;
            }
            let mu = if lo == 0.0 {
                hi / 4.0
            } else if hi / lo > 2.0 {
                (lo * hi).sqrt()
            } else {
                0.5 * (lo + hi)
            };
            let mut cand = th_hi.clone();
            inner(mu, &mut cand)?;
            if norm2(&cand) > bound {
                lo = mu;
                th_lo = Some(cand);
            } else {
                hi = mu;
                th_hi = cand;
            }
        }
        // theta(mu) is only resolved to the inner tolerance divided by the
        // curvature, which can be tiny along unobserved choices; the point of
        // the segment [theta(hi), theta(lo)] on the sphere is usually better
        // than either end.
        let mut candidates = vec![(project(th_hi.clone(), bound), hi)];
        if let Some(t_lo) = th_lo {
            if let Some(mid) = sphere_crossing(&th_hi, &t_lo, bound) {
                candidates.push((project(mid, bound), 0.5 * (lo + hi)));
            }
            candidates.push((project(t_lo, bound), lo));
        }
        let (theta_final, mu, gn) = candidates
            .into_iter()
            .map(|(t, m)| {
                let gn = self.gradient_mapping(&t, bound);
                (t, m, gn)
            })
            .min_by(|a, b| a.2.total_cmp(&b.2))
            .expect("at least one candidate");
        if gn > tol {
            return Err(Error::NonConvergence {
                step,
                iterations: total_iter,
                gradient_norm: gn,
                last_iterate: theta_final,
            });
        }
        *theta = theta_final.clone();
        Ok(Solution {
            objective: self.objective(&theta_final),
            theta: theta_final,
            diagnostics: SolveDiagnostics {
                iterations: total_iter,
                gradient_norm: gn,
                on_boundary: true,
                multiplier: mu,
                unobserved_choices: 0,
            },
        })
    }

    fn solve_projected_gradient(
        &self,
        cfg: &MleConfig,
        theta: &mut Vec<f64>,
        step: usize,
    ) -> Result<Solution> {
        let bound = cfg.parameter_bound;
        let mut f = self.objective(theta);
        // The curvature is bounded by the largest squared feature norm plus the
        // ridge, so steps of 1/L always ascend; backtracking stops there.
        let lipschitz = self
            .groups
            .iter()
            .flat_map(|g| g.features.iter().map(|f| dot(f, f)))
            .fold(0.0, f64::max)
            + self.ridge;
        let t_min = 1.0 / lipschitz.max(1e-12);
        let mut t = t_min;
        for it in 0..cfg.max_iterations {
            let gm = self.gradient_mapping(theta, bound);
            if gm <= cfg.gradient_tolerance {
                let on_boundary = bound.is_finite() && norm2(theta) >= bound * (1.0 - 1e-12);
                return Ok(Solution {
                    objective: f,
                    theta: theta.clone(),
                    diagnostics: SolveDiagnostics {
                        iterations: it,
                        gradient_norm: gm,
                        on_boundary,
                        multiplier: 0.0,
                        unobserved_choices: 0,
                    },
                });
            }
            let g = self.gradient(theta);
            t *= 2.0;
            loop {
                let cand = project(
                    theta.iter().zip(&g).map(|(a, b)| a + t * b).collect(),
                    bound,
                );
                let diff: Vec<f64> = cand.iter().zip(theta.iter()).map(|(a, b)| a - b).collect();
                let fc = self.objective(&cand);
                if t <= t_min || fc >= f + dot(&g, &diff) - dot(&diff, &diff) / (2.0 * t) {
                    *theta = cand;
                    f = fc;
                    break;
                }
                t = (0.5 * t).max(t_min);
            }
        }
        Err(Error::NonConvergence {
            step,
            iterations: cfg.max_iterations,
            gradient_norm: self.gradient_mapping(theta, bound),
            last_iterate: theta.clone(),
        })
    }
}

fn project(mut theta: Vec<f64>, bound: f64) -> Vec<f64> {
    if bound.is_finite() {
        let r = norm2(&theta);
        if r > bound {
            let s = bound / r;
            theta.iter_mut().for_each(|x| *x *= s);
        }
    }
    theta
}

/// Point `a + t (b - a)`, `t` in `[0, 1]`, with norm `radius`, if any.
fn sphere_crossing(a: &[f64], b: &[f64], radius: f64) -> Option<Vec<f64>> {
    let diff: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let qa = dot(&diff, &diff);
    let qb = 2.0 * dot(a, &diff);
    let qc = dot(a, a) - radius * radius;
    if qa == 0.0 {
        return None;
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return None;
    }
    let t = (-qb + disc.sqrt()) / (2.0 * qa);
    (0.0..=1.0)
        .contains(&t)
        .then(|| a.iter().zip(&diff).map(|(x, d)| x + t * d).collect())
}

/// Output of the first estimation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedModel {
    pub theta: Vec<Vec<f64>>,
    pub q_hat: Vec<Vec<Vec<f64>>>,
    pub v_hat: Vec<Vec<f64>>,
    pub pi_hat: PolicyTable,
    /// Achieved mean log-likelihood per step; empty when not fitted.
    pub log_likelihood: Vec<f64>,
    pub diagnostics: Vec<SolveDiagnostics>,
}

impl EstimatedModel {
    /// Tables implied by per-step parameters: `Q = phi . theta`,
    /// `pi = softmax(Q)`, `V = <pi, Q>`.
    pub fn from_parameters(features: &FeatureTable, theta: Vec<Vec<f64>>) -> Self {
        let q_hat: Vec<Vec<Vec<f64>>> = theta
            .iter()
            .map(|th| {
                (0..features.num_states)
                    .map(|s| (0..features.num_actions).map(|a| features.linear(s, a, th)).collect())
                    .collect()
            })
            .collect();
        Self::from_q(theta, q_hat)
    }

    /// Tables implied by `Q_hat` directly.
    pub fn from_q(theta: Vec<Vec<f64>>, q_hat: Vec<Vec<Vec<f64>>>) -> Self {
        let probs: Vec<Vec<Vec<f64>>> = q_hat
            .iter()
            .map(|step| step.iter().map(|row| softmax(row)).collect())
            .collect();
        let v_hat = q_hat
            .iter()
            .zip(&probs)
            .map(|(qs, ps)| qs.iter().zip(ps).map(|(q, p)| dot(q, p)).collect())
            .collect();
        EstimatedModel {
            theta,
            q_hat,
            v_hat,
            pi_hat: PolicyTable { probs },
            log_likelihood: Vec::new(),
            diagnostics: Vec::new(),
        }
    }

    /// `V_hat_{h+1}(s)` with `V_hat_H = 0`.
    pub fn next_value(&self, h: usize, s: usize) -> f64 {
        self.v_hat.get(h + 1).map_or(0.0, |v| v[s])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Least-squares parameters reproducing the agent's true `Q` tables (exact
/// for tabular features).
pub fn true_parameters(features: &FeatureTable, behavior: &BehaviorModel) -> Vec<Vec<f64>> {
    let design = features.design_matrix();
    let svd = design.svd(true, true);
    let na = features.num_actions;
    behavior
        .q
        .iter()
        .map(|q| {
            let target = DVector::from_fn(features.num_states * na, |r, _| q[r / na][r % na]);
            svd.solve(&target, 1e-12)
                .expect("SVD was computed with both factors")
                .iter()
                .cloned()
                .collect()
        })
        .collect()
}

/// Fit every step independently (in parallel) from the zero initial point.
pub fn fit_mle(ds: &ChoiceDataset, features: &FeatureTable, cfg: &MleConfig) -> Result<EstimatedModel> {
    fit_mle_from(ds, features, cfg, None)
}

/// As [`fit_mle`] with explicit initial parameters per step.
pub fn fit_mle_from(
    ds: &ChoiceDataset,
    features: &FeatureTable,
    cfg: &MleConfig,
    init: Option<&[Vec<f64>]>,
) -> Result<EstimatedModel> {
    cfg.validate()?;
    ds.validate()?;
    if features.num_states != ds.num_states || features.num_actions != ds.num_actions {
        return Err(Error::Shape("feature table does not match the dataset".into()));
    }
    if (0..features.num_states).any(|s| !features.is_zero(s, 0)) {
        return Err(Error::Shape("anchor action 0 must have the zero feature".into()));
    }
    let d = features.dim;
    let solved: Vec<Solution> = (0..ds.horizon)
        .into_par_iter()
        .map(|h| {
            let problem = ChoiceProblem::from_dataset(ds, features, h, cfg.ridge);
            let zero = vec![0.0; d];
            let start = init.map_or(zero.as_slice(), |v| v[h].as_slice());
            problem.solve(cfg, start, h)
        })
        .collect::<Result<_>>()?;
    let theta: Vec<Vec<f64>> = solved.iter().map(|s| s.theta.clone()).collect();
    let mut est = EstimatedModel::from_parameters(features, theta);
    est.log_likelihood = (0..ds.horizon)
        .map(|h| ChoiceProblem::from_dataset(ds, features, h, 0.0).log_likelihood(&solved[h].theta))
        .collect();
    est.diagnostics = solved.into_iter().map(|s| s.diagnostics).collect();
    Ok(est)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleErrorReport {
    /// `E_{D_h} |pi_hat(.|s) - pi_b(.|s)|_1^2`
    pub policy_error: Vec<f64>,
    /// `E_{D_h} |Q_hat(s, .) - Q(s, .)|_1^2`
    pub q_error: Vec<f64>,
}

impl MleErrorReport {
    pub fn mean_policy_error(&self) -> f64 {
        self.policy_error.iter().sum::<f64>() / self.policy_error.len() as f64
    }

    pub fn mean_q_error(&self) -> f64 {
        self.q_error.iter().sum::<f64>() / self.q_error.len() as f64
    }
}

/// Squared `l1` errors averaged over the states recorded in the dataset.
pub fn mle_error_report(
    est: &EstimatedModel,
    truth: &BehaviorModel,
    ds: &ChoiceDataset,
) -> Result<MleErrorReport> {
    if est.q_hat.len() != ds.horizon || truth.q.len() != ds.horizon {
        return Err(Error::Shape("horizon mismatch".into()));
    }
    let l1_sq = |a: &[f64], b: &[f64]| {
        let l1: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
        l1 * l1
    };
    let mut policy_error = Vec::with_capacity(ds.horizon);
    let mut q_error = Vec::with_capacity(ds.horizon);
    for h in 0..ds.horizon {
        let (mut pe, mut qe) = (0.0, 0.0);
        for &s in &ds.states[h] {
            pe += l1_sq(&est.pi_hat.probs[h][s], &truth.pi_b.probs[h][s]);
            qe += l1_sq(&est.q_hat[h][s], &truth.q[h][s]);
        }
        policy_error.push(pe / ds.n as f64);
        q_error.push(qe / ds.n as f64);
    }
    Ok(MleErrorReport {
        policy_error,
        q_error,
    })
}
