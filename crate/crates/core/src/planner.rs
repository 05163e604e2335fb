//! Pessimistic value iteration.
//!
//! Backward from `V~_H = 0`, each step regresses `V~_{h+1}(s')` on the
//! features with the same Gram matrix used for the reward, subtracts the
//! penalty `Gamma_h = beta |phi|_{(Lambda_h + lambda I)^{-1}}` and truncates
//! to `[0, H - h]`. The greedy policy of the resulting `Q~` is returned.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::agent::ChoiceDataset;
use crate::error::{Error, Result};
use crate::linalg::{argmax, dot};
use crate::mdp::{occupancy, FeatureTable, PolicyTable, TabularLinearMdp};
use crate::reward::{potential_table, ridge_solve, RecoveredReward};

/// Default cap on the exponent of the `e^H` factor in the theorem schedule.
pub const DEFAULT_H_CAP: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum BetaMode {
    /// Use `PlannerConfig::beta` as given.
    Manual,
    /// `beta = c H e^{min(H, h_cap)} |A| d sqrt(log(n H / delta))`.
    TheoremSchedule { constant: f64, delta: f64, h_cap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub beta: f64,
    pub lambda_reg: f64,
    pub beta_mode: BetaMode,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            beta: 0.0,
            lambda_reg: 1.0,
            beta_mode: BetaMode::Manual,
        }
    }
}

impl PlannerConfig {
    pub fn manual(beta: f64, lambda_reg: f64) -> Self {
        PlannerConfig {
            beta,
            lambda_reg,
            beta_mode: BetaMode::Manual,
        }
    }

    pub fn theorem(constant: f64, delta: f64, lambda_reg: f64) -> Self {
        PlannerConfig {
            beta: 0.0,
            lambda_reg,
            beta_mode: BetaMode::TheoremSchedule {
                constant,
                delta,
                h_cap: DEFAULT_H_CAP,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_reg > 0.0) || !self.lambda_reg.is_finite() {
            return Err(Error::config("lambda_reg", "must be positive"));
        }
        match self.beta_mode {
            BetaMode::Manual => {
                if !(self.beta >= 0.0) {
                    return Err(Error::config("beta", "must be nonnegative"));
                }
            }
            BetaMode::TheoremSchedule { constant, delta, .. } => {
                if !(constant >= 0.0) || !constant.is_finite() {
                    return Err(Error::config("beta_mode.constant", "must be nonnegative"));
                }
                if !(delta > 0.0 && delta < 1.0) {
                    return Err(Error::config("beta_mode.delta", "must lie in (0, 1)"));
                }
            }
        }
        Ok(())
    }

    /// The penalty scale used for a dataset of `n` trajectories.
    pub fn resolve_beta(&self, n: usize, horizon: usize, num_actions: usize, dim: usize) -> f64 {
        match self.beta_mode {
            BetaMode::Manual => self.beta,
            BetaMode::TheoremSchedule {
                constant,
                delta,
                h_cap,
            } => constant * theorem_schedule_scale(n, horizon, num_actions, dim, delta, h_cap),
        }
    }
}

/// `H e^{min(H, h_cap)} |A| d sqrt(log(n H / delta))`.
pub fn theorem_schedule_scale(
    n: usize,
    horizon: usize,
    num_actions: usize,
    dim: usize,
    delta: f64,
    h_cap: usize,
) -> f64 {
    let h = horizon as f64;
    let log_term = ((n.max(1) as f64) * h / delta).ln().max(0.0);
    h * (horizon.min(h_cap) as f64).exp() * num_actions as f64 * dim as f64 * log_term.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PessimisticPolicy {
    pub pi_tilde: PolicyTable,
    pub q_tilde: Vec<Vec<Vec<f64>>>,
    pub v_tilde: Vec<Vec<f64>>,
    /// `Gamma_h(s, a)`
    pub penalty: Vec<Vec<Vec<f64>>>,
    pub u_tilde: Vec<Vec<f64>>,
    /// `phi(s, a) . u~_h`, the regression estimate of `P_h V~_{h+1}`.
    pub p_tilde_v: Vec<Vec<Vec<f64>>>,
    /// `r_hat_h(s, a)`
    pub reward_hat: Vec<Vec<Vec<f64>>>,
    pub beta: f64,
    pub lambda_reg: f64,
    pub beta_mode: BetaMode,
}

impl PessimisticPolicy {
    pub fn horizon(&self) -> usize {
        self.q_tilde.len()
    }

    /// `V~_{h+1}` with `V~_H = 0`.
    pub fn next_value(&self, h: usize) -> Vec<f64> {
        match self.v_tilde.get(h + 1) {
            Some(v) => v.clone(),
            None => vec![0.0; self.v_tilde[h].len()],
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Columns `h,s,a,penalty,q_tilde,action`.
    pub fn write_penalty_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["h", "s", "a", "penalty", "q_tilde", "greedy"])?;
        for (h, step) in self.penalty.iter().enumerate() {
            for (s, row) in step.iter().enumerate() {
                let greedy = self.pi_tilde.greedy_action(h, s);
                for (a, g) in row.iter().enumerate() {
                    w.write_record(&[
                        h.to_string(),
                        s.to_string(),
                        a.to_string(),
                        g.to_string(),
                        self.q_tilde[h][s][a].to_string(),
                        u8::from(a == greedy).to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Penalty tables, reward tables and the per-step regression oracle that
/// [`backward_induction`] consumes; lets the linear and kernel planners share
/// the recursion.
pub(crate) trait StepModel {
    fn penalty(&self, h: usize) -> Result<Vec<Vec<f64>>>;
    fn reward(&self, h: usize) -> Vec<Vec<f64>>;
    /// Returns the weights (if any) and the fitted table of `P_h V`.
    fn regress_next(&self, h: usize, v_next: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)>;
}

pub(crate) fn backward_induction<M: StepModel>(
    model: &M,
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    beta: f64,
    lambda_reg: f64,
    beta_mode: BetaMode,
) -> Result<PessimisticPolicy> {
    let mut q_tilde = vec![Vec::new(); horizon];
    let mut v_tilde = vec![Vec::new(); horizon];
    let mut penalty = vec![Vec::new(); horizon];
    let mut u_tilde = vec![Vec::new(); horizon];
    let mut p_tilde_v = vec![Vec::new(); horizon];
    let mut reward_hat = vec![Vec::new(); horizon];
    let mut actions = vec![vec![0usize; num_states]; horizon];
    let mut v_next = vec![0.0; num_states];
    for h in (0..horizon).rev() {
        let cap = (horizon - h) as f64;
        let gamma_h = model.penalty(h)?;
        let r_h = model.reward(h);
        let (u, pv) = model.regress_next(h, &v_next)?;
        let q: Vec<Vec<f64>> = (0..num_states)
            .map(|s| {
                (0..num_actions)
                    .map(|a| (r_h[s][a] + pv[s][a] - gamma_h[s][a]).clamp(0.0, cap))
                    .collect()
            })
            .collect();
        let v: Vec<f64> = q
            .iter()
            .enumerate()
            .map(|(s, row)| {
                let a = argmax(row);
                actions[h][s] = a;
                row[a]
            })
            .collect();
        q_tilde[h] = q;
        v_next = v.clone();
        v_tilde[h] = v;
        penalty[h] = gamma_h;
        u_tilde[h] = u;
        p_tilde_v[h] = pv;
        reward_hat[h] = r_h;
    }
    Ok(PessimisticPolicy {
        pi_tilde: PolicyTable::deterministic(&actions, num_actions),
        q_tilde,
        v_tilde,
        penalty,
        u_tilde,
        p_tilde_v,
        reward_hat,
        beta,
        lambda_reg,
        beta_mode,
    })
}

struct LinearModel<'a> {
    ds: &'a ChoiceDataset,
    rec: &'a RecoveredReward,
    features: &'a FeatureTable,
    beta: f64,
    lambda_reg: f64,
}

impl LinearModel<'_> {
    fn penalty_from(
        features: &FeatureTable,
        rec: &RecoveredReward,
        h: usize,
        beta: f64,
        lambda_reg: f64,
    ) -> Result<Vec<Vec<f64>>> {
        let pot = potential_table(features, &rec.gram_matrix(h), lambda_reg)?;
        Ok(pot
            .into_iter()
            .map(|row| row.into_iter().map(|p| beta * p).collect())
            .collect())
    }
}

impl StepModel for LinearModel<'_> {
    fn penalty(&self, h: usize) -> Result<Vec<Vec<f64>>> {
        Self::penalty_from(self.features, self.rec, h, self.beta, self.lambda_reg)
    }

    fn reward(&self, h: usize) -> Vec<Vec<f64>> {
        let f = self.features;
        (0..f.num_states)
            .map(|s| (0..f.num_actions).map(|a| self.rec.reward(f, h, s, a)).collect())
            .collect()
    }

    fn regress_next(&self, h: usize, v_next: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let targets: Vec<f64> = self.ds.next_states[h].iter().map(|&sn| v_next[sn]).collect();
        let gram = self.rec.gram_matrix(h);
        let u = ridge_solve(self.ds, self.features, h, &gram, self.lambda_reg, &targets)?;
        let f = self.features;
        let table = (0..f.num_states)
            .map(|s| (0..f.num_actions).map(|a| f.linear(s, a, &u)).collect())
            .collect();
        Ok((u, table))
    }
}

pub fn plan(
    ds: &ChoiceDataset,
    rec: &RecoveredReward,
    features: &FeatureTable,
    cfg: &PlannerConfig,
) -> Result<PessimisticPolicy> {
    cfg.validate()?;
    ds.validate()?;
    if rec.w_hat.len() != ds.horizon || rec.gram.len() != ds.horizon {
        return Err(Error::Shape("recovered reward and dataset horizons differ".into()));
    }
    if features.num_states != ds.num_states || features.num_actions != ds.num_actions {
        return Err(Error::Shape("feature table and dataset sizes differ".into()));
    }
    if let Some(h) = rec.w_hat.iter().position(|w| w.len() != features.dim) {
        return Err(Error::Dimension {
            step: h,
            what: "reward weights".into(),
        });
    }
    let beta = cfg.resolve_beta(ds.n, ds.horizon, ds.num_actions, features.dim);
    let model = LinearModel {
        ds,
        rec,
        features,
        beta,
        lambda_reg: cfg.lambda_reg,
    };
    backward_induction(
        &model,
        ds.horizon,
        ds.num_states,
        ds.num_actions,
        beta,
        cfg.lambda_reg,
        cfg.beta_mode,
    )
}

struct ExactModel<'a> {
    mdp: &'a TabularLinearMdp,
    rec: &'a RecoveredReward,
    beta: f64,
    lambda_reg: f64,
}

impl StepModel for ExactModel<'_> {
    fn penalty(&self, h: usize) -> Result<Vec<Vec<f64>>> {
        LinearModel::penalty_from(&self.mdp.features, self.rec, h, self.beta, self.lambda_reg)
    }

    fn reward(&self, h: usize) -> Vec<Vec<f64>> {
        self.mdp.reward_table(h)
    }

    fn regress_next(&self, h: usize, v_next: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let m = self.mdp;
        let table = (0..m.num_states)
            .map(|s| (0..m.num_actions).map(|a| m.expected_next(h, s, a, v_next)).collect())
            .collect();
        Ok((Vec::new(), table))
    }
}

/// Pessimistic planning with the true reward and the true `P V~`; only the
/// penalty depends on data (through the Gram matrices in `rec`).
pub fn plan_oracle(
    mdp: &TabularLinearMdp,
    rec: &RecoveredReward,
    n: usize,
    cfg: &PlannerConfig,
) -> Result<PessimisticPolicy> {
    cfg.validate()?;
    if rec.gram.len() != mdp.horizon {
        return Err(Error::Shape("recovered reward horizon differs from the instance".into()));
    }
    let beta = cfg.resolve_beta(n, mdp.horizon, mdp.num_actions, mdp.dim());
    let model = ExactModel {
        mdp,
        rec,
        beta,
        lambda_reg: cfg.lambda_reg,
    };
    let mut pp = backward_induction(
        &model,
        mdp.horizon,
        mdp.num_states,
        mdp.num_actions,
        beta,
        cfg.lambda_reg,
        cfg.beta_mode,
    )?;
    pp.u_tilde = vec![Vec::new(); mdp.horizon];
    Ok(pp)
}

/// Absolute slack below which a cell does not count as violating.
pub const AUDIT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationAudit {
    /// Cells with `|(r_hat + P~V~) - (r + P V~)| > Gamma` per step.
    pub violations: Vec<usize>,
    pub cells_per_step: usize,
    /// Largest `|lhs| / Gamma` over cells with `Gamma > 0`.
    pub max_ratio: f64,
    /// Largest `|lhs|` over all cells.
    pub max_error: f64,
}

impl ViolationAudit {
    pub fn total_violations(&self) -> usize {
        self.violations.iter().sum()
    }

    pub fn any_violation(&self) -> bool {
        self.total_violations() > 0
    }

    pub fn violation_fraction(&self) -> f64 {
        let cells = self.cells_per_step * self.violations.len();
        if cells == 0 {
            0.0
        } else {
            self.total_violations() as f64 / cells as f64
        }
    }
}

/// Checks the uncertainty-quantifier event against the true model.
///
/// The reward part uses `rec` evaluated on the instance's features, and the
/// transition part uses the stored `P~V~` tables, so a planner that replaced
/// either estimate is audited on what it actually used.
pub fn uncertainty_violation_audit(
    pp: &PessimisticPolicy,
    rec: &RecoveredReward,
    mdp: &TabularLinearMdp,
    gamma_eval: f64,
) -> Result<ViolationAudit> {
    if rec.w_hat.len() != mdp.horizon {
        return Err(Error::Shape("policy, reward and instance horizons differ".into()));
    }
    let reward: Vec<Vec<Vec<f64>>> = (0..mdp.horizon)
        .map(|h| {
            (0..mdp.num_states)
                .map(|s| (0..mdp.num_actions).map(|a| rec.reward(&mdp.features, h, s, a)).collect())
                .collect()
        })
        .collect();
    audit_reward_table(pp, &reward, mdp, gamma_eval)
}

/// As [`uncertainty_violation_audit`] with the reward estimate given as a
/// `[h][s][a]` table.
pub fn audit_reward_table(
    pp: &PessimisticPolicy,
    reward: &[Vec<Vec<f64>>],
    mdp: &TabularLinearMdp,
    gamma_eval: f64,
) -> Result<ViolationAudit> {
    if pp.horizon() != mdp.horizon || reward.len() != mdp.horizon {
        return Err(Error::Shape("policy, reward and instance horizons differ".into()));
    }
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    let mut violations = vec![0; mdp.horizon];
    let mut max_ratio = 0.0f64;
    let mut max_error = 0.0f64;
    for h in 0..mdp.horizon {
        let v_next = pp.next_value(h);
        for s in 0..ns {
            for a in 0..na {
                let est = reward[h][s][a] + pp.p_tilde_v[h][s][a];
                let truth = mdp.reward(h, s, a) + gamma_eval * mdp.expected_next(h, s, a, &v_next);
                let err = (est - truth).abs();
                let gamma = pp.penalty[h][s][a];
                max_error = max_error.max(err);
                if gamma > 0.0 {
                    max_ratio = max_ratio.max(err / gamma);
                }
                if err > gamma + AUDIT_TOLERANCE {
                    violations[h] += 1;
                }
            }
        }
    }
    Ok(ViolationAudit {
        violations,
        cells_per_step: ns * na,
        max_ratio,
        max_error,
    })
}

/// `2 sum_h E_{pi*}[Gamma_h(s_h, a_h)]` under the true dynamics.
pub fn theorem_suboptimality_bound(
    pp: &PessimisticPolicy,
    mdp: &TabularLinearMdp,
    pi_star: &PolicyTable,
) -> Result<f64> {
    pi_star.check_shape(mdp.horizon, mdp.num_states, mdp.num_actions)?;
    if pp.horizon() != mdp.horizon {
        return Err(Error::Shape("policy and instance horizons differ".into()));
    }
    let occ = occupancy(mdp, pi_star);
    let total: f64 = occ
        .iter()
        .zip(&pp.penalty)
        .map(|(o, g)| o.iter().zip(g).map(|(orow, grow)| dot(orow, grow)).sum::<f64>())
        .sum();
    Ok(2.0 * total)
}
