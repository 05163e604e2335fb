//! Learning a reward and a near-optimal policy from logged choices of a
//! bounded-rational agent.
//!
//! The pipeline has two stages. First the agent's choice model is fitted by
//! per-step multinomial-logit maximum likelihood ([`mle`]), which recovers its
//! `Q` and ex-ante `V` functions; the reward is then read off the Bellman
//! residual by ridge regression ([`reward`]). Second, a pessimistic value
//! iteration ([`planner`]) plans against the recovered reward, subtracting an
//! elliptical-potential penalty. [`kernel`] provides the RKHS version of both
//! stages and [`diagnostics`] / [`sweep`] the rate experiments.

pub mod agent;
pub mod diagnostics;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod mdp;
pub mod mle;
pub mod pipeline;
pub mod planner;
pub mod reward;
pub mod rng;
pub mod sweep;

pub use error::{Error, Result};
