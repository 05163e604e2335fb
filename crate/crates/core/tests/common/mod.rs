//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use choicerl_core::mdp::{PolicyTable, TabularLinearMdp};

/// Expected discounted return from `(h, s, a)` by listing every continuation.
pub fn enumerate_q(m: &TabularLinearMdp, pi: &PolicyTable, gamma: f64, h: usize, s: usize, a: usize) -> f64 {
    // (probability, accumulated return, discount, state, action, step)
    let mut frontier = vec![(1.0, 0.0, 1.0, s, a, h)];
    let mut total = 0.0;
    while let Some((p, ret, disc, s, a, t)) = frontier.pop() {
        let ret = ret + disc * m.reward(t, s, a);
        if t + 1 == m.horizon {
            total += p * ret;
            continue;
        }
        for (sn, &ps) in m.transitions[t][s][a].iter().enumerate() {
            for (an, &pa) in pi.probs[t + 1][sn].iter().enumerate() {
                if ps * pa > 0.0 {
                    frontier.push((p * ps * pa, ret, disc * gamma, sn, an, t + 1));
                }
            }
        }
    }
    total
}

pub fn all_deterministic_policies(m: &TabularLinearMdp) -> Vec<PolicyTable> {
    let cells = m.horizon * m.num_states;
    let count = m.num_actions.pow(cells as u32);
    (0..count)
        .map(|mut code| {
            let actions: Vec<Vec<usize>> = (0..m.horizon)
                .map(|_| {
                    (0..m.num_states)
                        .map(|_| {
                            let a = code % m.num_actions;
                            code /= m.num_actions;
                            a
                        })
                        .collect()
                })
                .collect();
            PolicyTable::deterministic(&actions, m.num_actions)
        })
        .collect()
}

pub struct MemoDdc<'a> {
    pub m: &'a TabularLinearMdp,
    pub gamma: f64,
    pub memo: HashMap<(usize, usize), f64>,
}

impl MemoDdc<'_> {
    pub fn q(&mut self, h: usize, s: usize, a: usize) -> f64 {
        let mut q = self.m.reward(h, s, a);
        if h + 1 < self.m.horizon {
            for sn in 0..self.m.num_states {
                let p = self.m.transitions[h][s][a][sn];
                if p > 0.0 {
                    q += self.gamma * p * self.v(h + 1, sn);
                }
            }
        }
        q
    }

    pub fn policy(&mut self, h: usize, s: usize) -> Vec<f64> {
        let qs: Vec<f64> = (0..self.m.num_actions).map(|a| self.q(h, s, a)).collect();
        let top = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = qs.iter().map(|q| (q - top).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }

    pub fn v(&mut self, h: usize, s: usize) -> f64 {
        if let Some(&v) = self.memo.get(&(h, s)) {
            return v;
        }
        let pi = self.policy(h, s);
        let v = (0..self.m.num_actions).map(|a| pi[a] * self.q(h, s, a)).sum();
        self.memo.insert((h, s), v);
        v
    }
}

impl<'a> MemoDdc<'a> {
    pub fn new(m: &'a TabularLinearMdp, gamma: f64) -> Self {
        MemoDdc { m, gamma, memo: HashMap::new() }
    }
}

/// Total variation distance.
pub fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
