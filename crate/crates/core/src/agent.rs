//! The bounded-rational demonstrator.
//!
//! The agent solves a `gamma`-discounted Bellman system and then picks actions
//! by softmax over its `Q` values, which is the same as taking the argmax of
//! `Q` perturbed by i.i.d. standard Gumbel noise. Both sampling routes are
//! available so that the equivalence can be checked by simulation.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, softmax};
use crate::mdp::{PolicyTable, TabularLinearMdp};
use crate::rng::stream_rng;

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorModel {
    pub gamma: f64,
    /// `Q^{pi_b, gamma}_h(s, a)`
    pub q: Vec<Vec<Vec<f64>>>,
    /// Ex-ante value `<pi_b, Q>`.
    pub v: Vec<Vec<f64>>,
    pub pi_b: PolicyTable,
}

/// Exact backward solution of the discounted choice model:
/// `Q_h = r_h + gamma P_h V_{h+1}`, `pi_h = softmax(Q_h)`, `V_h = <pi_h, Q_h>`.
pub fn solve_ddc(mdp: &TabularLinearMdp, gamma: f64) -> BehaviorModel {
    let (ns, na, hz) = (mdp.num_states, mdp.num_actions, mdp.horizon);
    let mut q = vec![vec![vec![0.0; na]; ns]; hz];
    let mut v = vec![vec![0.0; ns]; hz];
    let mut probs = vec![vec![vec![0.0; na]; ns]; hz];
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
            probs[h][s] = softmax(&q[h][s]);
            v[h][s] = dot(&probs[h][s], &q[h][s]);
        }
        next.clone_from(&v[h]);
    }
    BehaviorModel {
        gamma,
        q,
        v,
        pi_b: PolicyTable { probs },
    }
}

impl BehaviorModel {
    /// Agent whose `Q` tables are given directly (used to build saturated or
    /// shifted agents in experiments). Policy and ex-ante values follow.
    pub fn from_q(gamma: f64, q: Vec<Vec<Vec<f64>>>) -> Self {
        let probs: Vec<Vec<Vec<f64>>> = q
            .iter()
            .map(|step| step.iter().map(|row| softmax(row)).collect())
            .collect();
        let v = q
            .iter()
            .zip(&probs)
            .map(|(qs, ps)| qs.iter().zip(ps).map(|(qr, pr)| dot(qr, pr)).collect())
            .collect();
        BehaviorModel {
            gamma,
            q,
            v,
            pi_b: PolicyTable { probs },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// Draw directly from the softmax policy.
    Softmax,
    /// `argmax_a { Q_h(s, a) + eps(a) }` with standard Gumbel `eps`.
    GumbelArgmax,
}

/// `n` logged trajectories, stored per step as `[h][i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceDataset {
    pub schema_version: u32,
    pub n: usize,
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub seed: u64,
    pub gamma: f64,
    pub mechanism: Mechanism,
    pub states: Vec<Vec<usize>>,
    pub actions: Vec<Vec<usize>>,
    pub next_states: Vec<Vec<usize>>,
}

/// Standard Gumbel draw, `-ln(-ln U)`.
pub fn standard_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // U in (0, 1): random::<f64>() is in [0, 1), so flip it.
    let u = 1.0 - rng.random::<f64>();
    -(-u.ln()).ln()
}

fn sample_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // roundoff: fall back to the last index with positive mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Pick an action at `(h, s)` with the requested mechanism.
pub fn choose_action<R: Rng + ?Sized>(
    rng: &mut R,
    behavior: &BehaviorModel,
    h: usize,
    s: usize,
    mechanism: Mechanism,
) -> usize {
    match mechanism {
        Mechanism::Softmax => sample_index(rng, &behavior.pi_b.probs[h][s]),
        Mechanism::GumbelArgmax => {
            let q = &behavior.q[h][s];
            let mut best = 0;
            let mut best_val = f64::NEG_INFINITY;
            for (a, &qa) in q.iter().enumerate() {
                let val = qa + standard_gumbel(rng);
                if val > best_val {
                    best_val = val;
                    best = a;
                }
            }
            best
        }
    }
}

/// Simulate `n` independent trajectories from the initial state. Trajectory
/// `i` uses its own stream keyed by `(seed, i)`, so the output does not depend
/// on the number of worker threads.
pub fn sample_dataset(
    mdp: &TabularLinearMdp,
    behavior: &BehaviorModel,
    n: usize,
    seed: u64,
    mechanism: Mechanism,
) -> Result<ChoiceDataset> {
    if n == 0 {
        return Err(Error::config("n", "need at least one trajectory"));
    }
    let hz = mdp.horizon;
    let trajectories: Vec<Vec<(usize, usize, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let mut s = mdp.initial_state;
            let mut steps = Vec::with_capacity(hz);
            for h in 0..hz {
                let a = choose_action(&mut rng, behavior, h, s, mechanism);
                let sn = sample_index(&mut rng, &mdp.transitions[h][s][a]);
                steps.push((s, a, sn));
                s = sn;
            }
            steps
        })
        .collect();

    let mut states = vec![Vec::with_capacity(n); hz];
    let mut actions = vec![Vec::with_capacity(n); hz];
    let mut next_states = vec![Vec::with_capacity(n); hz];
    for traj in &trajectories {
        for (h, &(s, a, sn)) in traj.iter().enumerate() {
            states[h].push(s);
            actions[h].push(a);
            next_states[h].push(sn);
        }
    }
    Ok(ChoiceDataset {
        schema_version: DATASET_SCHEMA_VERSION,
        n,
        horizon: hz,
        num_states: mdp.num_states,
        num_actions: mdp.num_actions,
        seed,
        gamma: behavior.gamma,
        mechanism,
        states,
        actions,
        next_states,
    })
}

impl ChoiceDataset {
    /// Action counts at step `h`, as `[s][a]`.
    pub fn counts(&self, h: usize) -> Vec<Vec<usize>> {
        let mut c = vec![vec![0usize; self.num_actions]; self.num_states];
        for (&s, &a) in self.states[h].iter().zip(&self.actions[h]) {
            c[s][a] += 1;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |step: usize, what: String| Err(Error::Dimension { step, what });
        if self.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                expected: DATASET_SCHEMA_VERSION,
            });
        }
        if self.n == 0 {
            return Err(Error::Shape("dataset is empty".into()));
        }
        if self.states.len() != self.horizon
            || self.actions.len() != self.horizon
            || self.next_states.len() != self.horizon
        {
            return Err(Error::Shape("dataset must have one block per step".into()));
        }
        for h in 0..self.horizon {
            if self.states[h].len() != self.n
                || self.actions[h].len() != self.n
                || self.next_states[h].len() != self.n
            {
                return bad(h, format!("expected {} samples", self.n));
            }
            if self.states[h].iter().chain(&self.next_states[h]).any(|&s| s >= self.num_states)
                || self.actions[h].iter().any(|&a| a >= self.num_actions)
            {
                return bad(h, "index out of range".into());
            }
            if h + 1 < self.horizon && self.next_states[h] != self.states[h + 1] {
                return bad(h, "next states do not chain into the following step".into());
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ds: Self = serde_json::from_str(text)?;
        ds.validate()?;
        Ok(ds)
    }

    /// Flat CSV with columns `traj,h,s,a,s_next`, ordered by trajectory.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["traj", "h", "s", "a", "s_next"])?;
        for i in 0..self.n {
            for h in 0..self.horizon {
                w.write_record(&[
                    i.to_string(),
                    h.to_string(),
                    self.states[h][i].to_string(),
                    self.actions[h][i].to_string(),
                    self.next_states[h][i].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-step empirical distribution of visited states.
pub fn empirical_state_distribution(ds: &ChoiceDataset) -> Vec<Vec<f64>> {
    ds.states
        .iter()
        .map(|step| {
            let mut hist = vec![0.0; ds.num_states];
            for &s in step {
                hist[s] += 1.0;
            }
            hist.iter_mut().for_each(|x| *x /= step.len() as f64);
            hist
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{random_instance, FeatureMode};

    #[test]
    fn behavior_invariants_hold_on_random_instances() {
        for seed in 0..100 {
            let m = random_instance(seed, 5, 3, 4, 8, FeatureMode::OneHotTabular).unwrap();
            let b = solve_ddc(&m, 0.9);
            for h in 0..4 {
                for s in 0..5 {
                    let p = softmax(&b.q[h][s]);
                    for a in 0..3 {
                        assert!((p[a] - b.pi_b.probs[h][s][a]).abs() < 1e-10);
                    }
                    assert!((dot(&p, &b.q[h][s]) - b.v[h][s]).abs() < 1e-10);
                    assert!(b.q[h][s][0].abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn zero_reward_agent_is_uniform() {
        let mut m = random_instance(1, 4, 3, 3, 6, FeatureMode::OneHotTabular).unwrap();
        m.reward_weights.iter_mut().flatten().for_each(|w| *w = 0.0);
        let b = solve_ddc(&m, 0.9);
        for row in b.pi_b.probs.iter().flatten() {
            for &p in row {
                assert!((p - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        assert!(b.v.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn myopic_agent_uses_rewards() {
        let m = random_instance(2, 4, 3, 3, 6, FeatureMode::OneHotTabular).unwrap();
        let b = solve_ddc(&m, 0.0);
        for h in 0..3 {
            assert_eq!(b.q[h], m.reward_table(h));
        }
    }

    #[test]
    fn datasets_chain_and_are_seed_deterministic() {
        let m = random_instance(4, 5, 3, 3, 8, FeatureMode::OneHotTabular).unwrap();
        let b = solve_ddc(&m, 0.9);
        for mech in [Mechanism::Softmax, Mechanism::GumbelArgmax] {
            let a = sample_dataset(&m, &b, 300, 17, mech).unwrap();
            a.validate().unwrap();
            assert!(a.states[0].iter().all(|&s| s == m.initial_state));
            let again = sample_dataset(&m, &b, 300, 17, mech).unwrap();
            assert_eq!(a, again);
        }
    }

    #[test]
    fn thread_count_does_not_change_samples() {
        let m = random_instance(4, 5, 3, 3, 8, FeatureMode::OneHotTabular).unwrap();
        let b = solve_ddc(&m, 0.9);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| sample_dataset(&m, &b, 500, 3, Mechanism::GumbelArgmax).unwrap());
        let c = four.install(|| sample_dataset(&m, &b, 500, 3, Mechanism::GumbelArgmax).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn zero_trajectories_is_an_error() {
        let m = random_instance(4, 3, 2, 2, 2, FeatureMode::OneHotTabular).unwrap();
        let b = solve_ddc(&m, 0.5);
        assert!(sample_dataset(&m, &b, 0, 0, Mechanism::Softmax).is_err());
    }

    #[test]
    fn broken_chaining_is_rejected() {
        let m = random_instance(4, 5, 3, 3, 8, FeatureMode::OneHotTabular).unwrap();
        let b = solve_ddc(&m, 0.9);
        let mut ds = sample_dataset(&m, &b, 20, 1, Mechanism::Softmax).unwrap();
        let s = ds.next_states[0][0];
        ds.next_states[0][0] = (s + 1) % 4;
        assert!(ds.validate().is_err());
    }

    #[test]
    fn single_trajectory_gives_point_masses() {
        let m = random_instance(6, 5, 3, 3, 8, FeatureMode::OneHotTabular).unwrap();
        let b = solve_ddc(&m, 0.9);
        let ds = sample_dataset(&m, &b, 1, 0, Mechanism::Softmax).unwrap();
        for (h, hist) in empirical_state_distribution(&ds).iter().enumerate() {
            assert_eq!(hist[ds.states[h][0]], 1.0);
            assert_eq!(hist.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn csv_has_one_row_per_transition() {
        let m = random_instance(6, 4, 3, 2, 6, FeatureMode::OneHotTabular).unwrap();
        let b = solve_ddc(&m, 0.9);
        let ds = sample_dataset(&m, &b, 7, 0, Mechanism::Softmax).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "traj,h,s,a,s_next");
        assert_eq!(lines.len(), 1 + 7 * 2);
    }
}
