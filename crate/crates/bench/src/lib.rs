//! Shared inputs for the benchmarks.

use choicerl_core::agent::{sample_dataset, solve_ddc, BehaviorModel, ChoiceDataset, Mechanism};
use choicerl_core::mdp::{FeatureMode, InstanceSpec, TabularLinearMdp};

pub const GAMMA: f64 = 0.9;

pub struct Fixture {
    pub mdp: TabularLinearMdp,
    pub behavior: BehaviorModel,
    pub dataset: ChoiceDataset,
}

/// Desk instance with `n` trajectories.
pub fn fixture(n: usize) -> Fixture {
    let mdp = InstanceSpec::new(0, 5, 3, 3, FeatureMode::OneHotTabular)
        .build()
        .expect("desk instance builds");
    let behavior = solve_ddc(&mdp, GAMMA);
    let dataset = sample_dataset(&mdp, &behavior, n, 7, Mechanism::Softmax).expect("sampling succeeds");
    Fixture { mdp, behavior, dataset }
}
