//! Shared fixtures for the solver benchmarks.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semlab_core::{mdp::random_mdp, FiniteMdp, Simulator, TabularPolicy, TransitionDataset};

/// A Dirichlet(1) MDP and a buffer of uniform-policy episodes.
pub fn fixture(num_states: usize, num_actions: usize, episodes: usize, seed: u64) -> (FiniteMdp, TransitionDataset) {
    let mdp = random_mdp(seed, num_states, num_actions, 1.0);
    let sim = Simulator::new(Arc::new(mdp.clone()));
    let pi = TabularPolicy::uniform(num_states, num_actions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = TransitionDataset::new(num_states, num_actions);
    for _ in 0..episodes {
        ds.push_episode(&sim.rollout(&pi, 100, &mut rng)).expect("indices in range");
    }
    (mdp, ds)
}
