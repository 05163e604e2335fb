//! Finite-horizon tabular MDPs with explicit feature maps, and the exact
//! dynamic-programming routines used as ground truth everywhere else.
//!
//! Steps are 0-indexed (`0..horizon`) and the terminal value `V_H` is zero.
//! Every instance carries an absorbing zero-reward state and an anchor
//! action: the anchor moves deterministically into the absorbing state and
//! has the zero feature vector, so any Bellman solution satisfies
//! `Q_h(s, a_0) = 0` exactly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{argmax, dot, norm2};
use crate::rng::stream_rng;

pub const MDP_SCHEMA_VERSION: u32 = 1;

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// One indicator per non-absorbing state and non-anchor action.
    OneHotTabular,
    /// Nonnegative random features of a chosen dimension.
    RandomLinear,
}

/// Feature map `phi(s, a)`, shared by all steps. Stored as `[s][a][j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub num_states: usize,
    pub num_actions: usize,
    pub dim: usize,
    pub phi: Vec<Vec<Vec<f64>>>,
}

impl FeatureTable {
    pub fn phi(&self, s: usize, a: usize) -> &[f64] {
        &self.phi[s][a]
    }

    /// `phi(s, a) . w`
    pub fn linear(&self, s: usize, a: usize, w: &[f64]) -> f64 {
        dot(&self.phi[s][a], w)
    }

    /// Tabular indicator features with the anchor action `0` and the
    /// absorbing state `num_states - 1` mapped to the zero vector.
    pub fn one_hot_tabular(num_states: usize, num_actions: usize) -> Self {
        let dim = (num_states - 1) * (num_actions - 1);
        let phi = (0..num_states)
            .map(|s| {
                (0..num_actions)
                    .map(|a| {
                        let mut v = vec![0.0; dim];
                        if s + 1 < num_states && a > 0 {
                            v[one_hot_index(s, a, num_actions)] = 1.0;
                        }
                        v
                    })
                    .collect()
            })
            .collect();
        FeatureTable {
            num_states,
            num_actions,
            dim,
            phi,
        }
    }

    /// Feature matrix with one row per `(s, a)` in row-major order.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        let rows = self.num_states * self.num_actions;
        DMatrix::from_fn(rows, self.dim, |r, j| {
            self.phi[r / self.num_actions][r % self.num_actions][j]
        })
    }

    pub fn is_zero(&self, s: usize, a: usize) -> bool {
        self.phi[s][a].iter().all(|&x| x == 0.0)
    }
}

/// Column of the indicator for `(s, a)` in [`FeatureTable::one_hot_tabular`].
pub fn one_hot_index(s: usize, a: usize, num_actions: usize) -> usize {
    s * (num_actions - 1) + (a - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularLinearMdp {
    pub schema_version: u32,
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub feature_mode: FeatureMode,
    pub absorbing_state: usize,
    pub anchor_action: usize,
    pub initial_state: usize,
    pub features: FeatureTable,
    /// `[h][s][a][s']`
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    /// `w_h`, so that `r_h(s, a) = phi(s, a) . w_h`.
    pub reward_weights: Vec<Vec<f64>>,
}

impl TabularLinearMdp {
    pub fn dim(&self) -> usize {
        self.features.dim
    }

    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.features.linear(s, a, &self.reward_weights[h])
    }

    /// `r_h` as an `S x A` table.
    pub fn reward_table(&self, h: usize) -> Vec<Vec<f64>> {
        (0..self.num_states)
            .map(|s| (0..self.num_actions).map(|a| self.reward(h, s, a)).collect())
            .collect()
    }

    /// `(P_h V)(s, a)`.
    pub fn expected_next(&self, h: usize, s: usize, a: usize, v: &[f64]) -> f64 {
        dot(&self.transitions[h][s][a], v)
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na, hz) = (self.num_states, self.num_actions, self.horizon);
        let bad = |msg: String| Err(Error::InvalidInstance(msg));
        if self.schema_version != MDP_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                expected: MDP_SCHEMA_VERSION,
            });
        }
        if ns < 2 || na < 2 || hz < 1 {
            return bad(format!("need S >= 2, A >= 2, H >= 1 (got {ns}, {na}, {hz})"));
        }
        if self.absorbing_state >= ns || self.anchor_action >= na || self.initial_state >= ns {
            return bad("special state/action index out of range".into());
        }
        if self.initial_state == self.absorbing_state {
            return bad("initial state must not be absorbing".into());
        }
        let f = &self.features;
        if f.num_states != ns || f.num_actions != na || f.phi.len() != ns {
            return bad("feature table shape does not match the instance".into());
        }
        for s in 0..ns {
            if f.phi[s].len() != na {
                return bad(format!("feature row {s} has wrong action count"));
            }
            for a in 0..na {
                let phi = &f.phi[s][a];
                if phi.len() != f.dim {
                    return bad(format!("phi({s},{a}) has wrong dimension"));
                }
                if norm2(phi) > 1.0 + 1e-12 {
                    return bad(format!("|phi({s},{a})| exceeds 1"));
                }
                if (a == self.anchor_action || s == self.absorbing_state)
                    && phi.iter().any(|&x| x != 0.0)
                {
                    return bad(format!("phi({s},{a}) must be zero"));
                }
            }
        }
        if self.transitions.len() != hz || self.reward_weights.len() != hz {
            return bad("per-step tables must have horizon entries".into());
        }
        let wmax = (f.dim as f64).sqrt();
        for h in 0..hz {
            if self.reward_weights[h].len() != f.dim {
                return bad(format!("w_{h} has wrong dimension"));
            }
            if norm2(&self.reward_weights[h]) > wmax + 1e-12 {
                return bad(format!("|w_{h}| exceeds sqrt(d)"));
            }
            if self.transitions[h].len() != ns {
                return bad(format!("P_{h} has wrong state count"));
            }
            for s in 0..ns {
                if self.transitions[h][s].len() != na {
                    return bad(format!("P_{h}({s}, .) has wrong action count"));
                }
                for a in 0..na {
                    let row = &self.transitions[h][s][a];
                    if row.len() != ns {
                        return bad(format!("P_{h}(.|{s},{a}) has wrong length"));
                    }
                    if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                        return bad(format!("P_{h}(.|{s},{a}) has a negative entry"));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOL {
                        return bad(format!("P_{h}(.|{s},{a}) sums to {sum}"));
                    }
                    if (a == self.anchor_action || s == self.absorbing_state)
                        && row[self.absorbing_state] != 1.0
                    {
                        return bad(format!("P_{h}(.|{s},{a}) must move to the absorbing state"));
                    }
                    let r = self.reward(h, s, a);
                    if !(-1e-12..=1.0 + 1e-12).contains(&r) {
                        return bad(format!("r_{h}({s},{a}) = {r} outside [0, 1]"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Largest residual of the best linear fit `P_h V(s, a) ~ phi(s, a) . u`
    /// over all `(s, a)`. Zero (to roundoff) when the instance is a linear
    /// MDP for this `V`.
    pub fn linear_transition_residual(&self, h: usize, v: &[f64]) -> f64 {
        let design = self.features.design_matrix();
        let na = self.num_actions;
        let target = DVector::from_fn(self.num_states * na, |r, _| {
            self.expected_next(h, r / na, r % na, v)
        });
        let svd = design.clone().svd(true, true);
        let u = svd
            .solve(&target, 1e-12)
            .expect("SVD was computed with both factors");
        (design * u - target).amax()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mdp: Self = serde_json::from_str(text)?;
        mdp.validate()?;
        Ok(mdp)
    }
}

/// Stochastic Markov policy, `probs[h][s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl PolicyTable {
    pub fn uniform(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        let row = vec![1.0 / num_actions as f64; num_actions];
        PolicyTable {
            probs: vec![vec![row; num_states]; horizon],
        }
    }

    /// Point-mass policy from `actions[h][s]`.
    pub fn deterministic(actions: &[Vec<usize>], num_actions: usize) -> Self {
        let probs = actions
            .iter()
            .map(|step| {
                step.iter()
                    .map(|&a| {
                        let mut row = vec![0.0; num_actions];
                        row[a] = 1.0;
                        row
                    })
                    .collect()
            })
            .collect();
        PolicyTable { probs }
    }

    pub fn horizon(&self) -> usize {
        self.probs.len()
    }

    /// Most likely action at `(h, s)`, lowest index on ties.
    pub fn greedy_action(&self, h: usize, s: usize) -> usize {
        argmax(&self.probs[h][s])
    }

    pub fn check_shape(&self, horizon: usize, num_states: usize, num_actions: usize) -> Result<()> {
        if self.probs.len() != horizon {
            return Err(Error::Shape(format!(
                "policy has {} steps, instance has {horizon}",
                self.probs.len()
            )));
        }
        for (h, step) in self.probs.iter().enumerate() {
            if step.len() != num_states || step.iter().any(|r| r.len() != num_actions) {
                return Err(Error::Dimension {
                    step: h,
                    what: format!("policy rows must be {num_states} x {num_actions}"),
                });
            }
        }
        Ok(())
    }

    /// Rows are probability vectors within `1e-12`.
    pub fn is_stochastic(&self) -> bool {
        self.probs.iter().flatten().all(|row| {
            row.iter().all(|&p| p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-12
        })
    }
}

/// `q[h][s][a]` and `v[h][s]` for `h < H`; `V_H` is implicitly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTables {
    pub q: Vec<Vec<Vec<f64>>>,
    pub v: Vec<Vec<f64>>,
}

impl ValueTables {
    /// `V_{h+1}`, with the terminal convention.
    pub fn next_value(&self, h: usize) -> Option<&[f64]> {
        self.v.get(h + 1).map(|v| v.as_slice())
    }
}

/// Backward recursion `Q_h = r_h + gamma P_h V_{h+1}`, `V_h = <pi_h, Q_h>`.
pub fn evaluate_policy(mdp: &TabularLinearMdp, pi: &PolicyTable, gamma: f64) -> Result<ValueTables> {
    let (ns, na, hz) = (mdp.num_states, mdp.num_actions, mdp.horizon);
    pi.check_shape(hz, ns, na)?;
    let mut q = vec![vec![vec![0.0; na]; ns]; hz];
    let mut v = vec![vec![0.0; ns]; hz];
    let mut next = vec![0.0; ns];
    for h in (0..hz).rev() {
        for s in 0..ns {
            for a in 0..na {
                let cont = if gamma == 0.0 {
                    0.0
                } else {
                    gamma * mdp.expected_next(h, s, a, &next)
                };
                q[h][s][a] = mdp.reward(h, s, a) + cont;
            }
            v[h][s] = dot(&pi.probs[h][s], &q[h][s]);
        }
        next.clone_from(&v[h]);
    }
    Ok(ValueTables { q, v })
}

/// Undiscounted greedy backward induction; ties go to the lowest action.
pub fn optimal_policy(mdp: &TabularLinearMdp) -> (PolicyTable, ValueTables) {
    let (ns, na, hz) = (mdp.num_states, mdp.num_actions, mdp.horizon);
    let mut q = vec![vec![vec![0.0; na]; ns]; hz];
    let mut v = vec![vec![0.0; ns]; hz];
    let mut actions = vec![vec![0usize; ns]; hz];
    let mut next = vec![0.0; ns];
    for h in (0..hz).rev() {
        for s in 0..ns {
            for a in 0..na {
                q[h][s][a] = mdp.reward(h, s, a) + mdp.expected_next(h, s, a, &next);
            }
            let best = argmax(&q[h][s]);
            actions[h][s] = best;
            v[h][s] = q[h][s][best];
        }
        next.clone_from(&v[h]);
    }
    (
        PolicyTable::deterministic(&actions, na),
        ValueTables { q, v },
    )
}

/// `V*_0(s_init) - V^pi_0(s_init)` without discounting.
pub fn suboptimality(mdp: &TabularLinearMdp, pi: &PolicyTable) -> Result<f64> {
    let (_, best) = optimal_policy(mdp);
    let val = evaluate_policy(mdp, pi, 1.0)?;
    let s0 = mdp.initial_state;
    Ok(best.v[0][s0] - val.v[0][s0])
}

/// Forward state-action marginals `d_h(s, a)` of `pi` started from the
/// initial state.
pub fn occupancy(mdp: &TabularLinearMdp, pi: &PolicyTable) -> Vec<Vec<Vec<f64>>> {
    let (ns, na, hz) = (mdp.num_states, mdp.num_actions, mdp.horizon);
    let mut state = vec![0.0; ns];
    state[mdp.initial_state] = 1.0;
    let mut out = Vec::with_capacity(hz);
    for h in 0..hz {
        let mut joint = vec![vec![0.0; na]; ns];
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if state[s] == 0.0 {
                continue;
            }
            for a in 0..na {
                let m = state[s] * pi.probs[h][s][a];
                joint[s][a] = m;
                if m != 0.0 {
                    for (sn, p) in mdp.transitions[h][s][a].iter().enumerate() {
                        next[sn] += m * p;
                    }
                }
            }
        }
        out.push(joint);
        state = next;
    }
    out
}

/// Parameters for [`InstanceSpec::build`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub seed: u64,
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    /// Ignored for one-hot features, where it is `(S-1)(A-1)`.
    #[serde(default)]
    pub dim: usize,
    pub feature_mode: FeatureMode,
    /// Point-mass transitions for every non-anchor action.
    #[serde(default)]
    pub deterministic_transitions: bool,
}

impl InstanceSpec {
    pub fn new(
        seed: u64,
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        feature_mode: FeatureMode,
    ) -> Self {
        let dim = match feature_mode {
            FeatureMode::OneHotTabular => (num_states.max(1) - 1) * (num_actions.max(1) - 1),
            FeatureMode::RandomLinear => 0,
        };
        InstanceSpec {
            seed,
            num_states,
            num_actions,
            horizon,
            dim,
            feature_mode,
            deterministic_transitions: false,
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn deterministic(mut self) -> Self {
        self.deterministic_transitions = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_states < 2 {
            return Err(Error::config("num_states", "need at least 2 (one is absorbing)"));
        }
        if self.num_actions < 2 {
            return Err(Error::config("num_actions", "need at least 2 (one is the anchor)"));
        }
        if self.horizon < 1 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        match self.feature_mode {
            FeatureMode::OneHotTabular => {
                let want = (self.num_states - 1) * (self.num_actions - 1);
                if self.dim != want {
                    return Err(Error::config(
                        "dim",
                        format!("one_hot_tabular requires d = (S-1)(A-1) = {want}, got {}", self.dim),
                    ));
                }
            }
            FeatureMode::RandomLinear => {
                if self.dim == 0 {
                    return Err(Error::config("dim", "random_linear requires d >= 1"));
                }
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<TabularLinearMdp> {
        self.validate()?;
        let (ns, na, hz) = (self.num_states, self.num_actions, self.horizon);
        let absorbing = ns - 1;
        let anchor = 0;
        let mut rng = stream_rng(self.seed, 0);

        let features = match self.feature_mode {
            FeatureMode::OneHotTabular => FeatureTable::one_hot_tabular(ns, na),
            FeatureMode::RandomLinear => {
                let d = self.dim;
                let phi = (0..ns)
                    .map(|s| {
                        (0..na)
                            .map(|a| {
                                if s == absorbing || a == anchor {
                                    return vec![0.0; d];
                                }
                                let raw: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                                let len = norm2(&raw).max(f64::MIN_POSITIVE);
                                let scale = 0.5 + 0.5 * rng.random::<f64>();
                                raw.into_iter().map(|x| x / len * scale).collect()
                            })
                            .collect()
                    })
                    .collect();
                FeatureTable {
                    num_states: ns,
                    num_actions: na,
                    dim: d,
                    phi,
                }
            }
        };

        let d = features.dim;
        // Nonnegative features with |phi| <= 1 keep r in [0, 1/H] for these weights.
        let w_max = match self.feature_mode {
            FeatureMode::OneHotTabular => 1.0 / hz as f64,
            FeatureMode::RandomLinear => 1.0 / (hz as f64 * (d as f64).sqrt()),
        };
        let reward_weights = (0..hz)
            .map(|_| (0..d).map(|_| w_max * rng.random::<f64>()).collect())
            .collect();

        let live = ns - 1;
        let mut transitions = Vec::with_capacity(hz);
        for _ in 0..hz {
            let mut step = Vec::with_capacity(ns);
            for s in 0..ns {
                let mut rows = Vec::with_capacity(na);
                for a in 0..na {
                    let mut row = vec![0.0; ns];
                    if s == absorbing || a == anchor {
                        row[absorbing] = 1.0;
                    } else if self.deterministic_transitions {
                        row[rng.random_range(0..live)] = 1.0;
                    } else {
                        // flat Dirichlet over the live states
                        let e: Vec<f64> = (0..live)
                            .map(|_| -(1.0 - rng.random::<f64>()).ln())
                            .collect();
                        let z: f64 = e.iter().sum();
                        for (t, x) in e.iter().enumerate() {
                            row[t] = x / z;
                        }
                        let sum: f64 = row.iter().sum();
                        row[live - 1] += 1.0 - sum;
                    }
                    rows.push(row);
                }
                step.push(rows);
            }
            transitions.push(step);
        }

        let mdp = TabularLinearMdp {
            schema_version: MDP_SCHEMA_VERSION,
            num_states: ns,
            num_actions: na,
            horizon: hz,
            feature_mode: self.feature_mode,
            absorbing_state: absorbing,
            anchor_action: anchor,
            initial_state: 0,
            features,
            transitions,
            reward_weights,
        };
        mdp.validate()?;
        Ok(mdp)
    }
}

/// Random instance satisfying every structural invariant; deterministic in
/// `seed`.
pub fn random_instance(
    seed: u64,
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    dim: usize,
    feature_mode: FeatureMode,
) -> Result<TabularLinearMdp> {
    InstanceSpec::new(seed, num_states, num_actions, horizon, feature_mode)
        .with_dim(dim)
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TabularLinearMdp {
        random_instance(0, 4, 3, 3, 6, FeatureMode::OneHotTabular).unwrap()
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = random_instance(11, 5, 3, 3, 8, FeatureMode::OneHotTabular).unwrap();
        let b = random_instance(11, 5, 3, 3, 8, FeatureMode::OneHotTabular).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn one_hot_rows_are_basis_or_zero() {
        let m = random_instance(3, 3, 3, 2, 4, FeatureMode::OneHotTabular).unwrap();
        assert_eq!(m.dim(), 4);
        for s in 0..3 {
            for a in 0..3 {
                let phi = m.features.phi(s, a);
                let ones = phi.iter().filter(|&&x| x == 1.0).count();
                let zeros = phi.iter().filter(|&&x| x == 0.0).count();
                assert!(ones + zeros == 4 && ones <= 1);
                assert_eq!(ones == 0, s == 2 || a == 0);
            }
        }
    }

    #[test]
    fn infeasible_dimensions_are_rejected() {
        assert!(random_instance(0, 1, 3, 2, 0, FeatureMode::OneHotTabular).is_err());
        assert!(random_instance(0, 3, 1, 2, 0, FeatureMode::OneHotTabular).is_err());
        assert!(random_instance(0, 3, 3, 2, 5, FeatureMode::OneHotTabular).is_err());
        assert!(random_instance(0, 3, 3, 2, 0, FeatureMode::RandomLinear).is_err());
    }

    #[test]
    fn random_linear_instances_validate() {
        for seed in 0..20 {
            let m = random_instance(seed, 6, 4, 4, 3, FeatureMode::RandomLinear).unwrap();
            m.validate().unwrap();
        }
    }

    #[test]
    fn last_step_q_is_reward() {
        let m = small();
        let pi = PolicyTable::uniform(3, 4, 3);
        let vt = evaluate_policy(&m, &pi, 0.7).unwrap();
        assert_eq!(vt.q[2], m.reward_table(2));
    }

    #[test]
    fn zero_discount_gives_myopic_q() {
        let m = small();
        let pi = PolicyTable::uniform(3, 4, 3);
        let vt = evaluate_policy(&m, &pi, 0.0).unwrap();
        for h in 0..3 {
            assert_eq!(vt.q[h], m.reward_table(h));
        }
    }

    #[test]
    fn shape_errors_name_the_step() {
        let m = small();
        let mut pi = PolicyTable::uniform(3, 4, 3);
        pi.probs[1].pop();
        match evaluate_policy(&m, &pi, 1.0) {
            Err(Error::Dimension { step, .. }) => assert_eq!(step, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn optimal_policy_has_zero_suboptimality() {
        let m = small();
        let (pi, _) = optimal_policy(&m);
        assert!(suboptimality(&m, &pi).unwrap().abs() < 1e-15);
    }

    #[test]
    fn zero_reward_instance() {
        let mut m = small();
        for w in &mut m.reward_weights {
            w.iter_mut().for_each(|x| *x = 0.0);
        }
        let (pi, vt) = optimal_policy(&m);
        assert!(vt.v.iter().flatten().all(|&x| x == 0.0));
        assert!((0..3).all(|h| (0..4).all(|s| pi.greedy_action(h, s) == 0)));
        let uni = PolicyTable::uniform(3, 4, 3);
        assert_eq!(suboptimality(&m, &uni).unwrap(), 0.0);
    }

    #[test]
    fn one_hot_instances_are_linear_mdps() {
        let m = random_instance(5, 5, 3, 3, 8, FeatureMode::OneHotTabular).unwrap();
        let mut rng = stream_rng(99, 0);
        for _ in 0..100 {
            let mut v: Vec<f64> = (0..5).map(|_| 3.0 * rng.random::<f64>()).collect();
            v[m.absorbing_state] = 0.0;
            for h in 0..3 {
                assert!(m.linear_transition_residual(h, &v) < 1e-10);
            }
        }
    }

    #[test]
    fn occupancy_sums_to_one() {
        let m = small();
        let occ = occupancy(&m, &PolicyTable::uniform(3, 4, 3));
        for step in occ {
            let total: f64 = step.iter().flatten().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = random_instance(8, 5, 3, 3, 4, FeatureMode::RandomLinear).unwrap();
        let back = TabularLinearMdp::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }
}
