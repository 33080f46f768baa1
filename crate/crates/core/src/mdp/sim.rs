use std::sync::Arc;

use rand::Rng;

use super::{FiniteMdp, TabularPolicy};

/// One rollout: the start state and the `(s, a, s')` transitions that followed.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub initial_state: usize,
    pub transitions: Vec<(usize, usize, usize)>,
}

/// Sampling-only access to an MDP.
///
/// Learners get a `Simulator`, never the model itself: they can draw start states
/// and successors but cannot read `T` or `p0`.
#[derive(Clone)]
pub struct Simulator {
    mdp: Arc<FiniteMdp>,
    cdf: Vec<f64>,
    p0_cdf: Vec<f64>,
}

fn cumulative(p: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    p.map(|x| {
        acc += x;
        acc
    })
    .collect()
}

fn sample_cdf<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Samples an index from a probability row.
pub(crate) fn sample_row<R: Rng + ?Sized>(row: ndarray::ArrayView1<f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

impl Simulator {
    pub fn new(mdp: Arc<FiniteMdp>) -> Self {
        let (s, a) = (mdp.num_states(), mdp.num_actions());
        let t = mdp.transition();
        let mut cdf = Vec::with_capacity(s * a * s);
        for i in 0..s {
            for j in 0..a {
                cdf.extend(cumulative(t.slice(ndarray::s![i, j, ..]).iter().copied()));
            }
        }
        let p0_cdf = cumulative(mdp.p0().iter().copied());
        Self { mdp, cdf, p0_cdf }
    }

    pub fn num_states(&self) -> usize {
        self.mdp.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.mdp.num_actions()
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_cdf(&self.p0_cdf, rng)
    }

    pub fn step<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let n = self.num_states();
        let start = (s * self.num_actions() + a) * n;
        sample_cdf(&self.cdf[start..start + n], rng)
    }

    /// Runs `policy` for `length` steps from a fresh start state.
    pub fn rollout<R: Rng + ?Sized>(&self, policy: &TabularPolicy, length: usize, rng: &mut R) -> Episode {
        let initial_state = self.reset(rng);
        let mut s = initial_state;
        let mut transitions = Vec::with_capacity(length);
        for _ in 0..length {
            let a = sample_row(policy.row(s), rng);
            let next = self.step(s, a, rng);
            transitions.push((s, a, next));
            s = next;
        }
        Episode { initial_state, transitions }
    }
}
