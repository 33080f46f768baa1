//! Intrinsic-reward explorers: count/density rewards optimized by exact
//! model-based policy gradient, and Q-learning with greedy or softmax targets.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TransitionDataset;
use crate::dice::CollectionConfig;
use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{stationary_distribution, FiniteMdp, Simulator, TabularPolicy};

/// Visitation counts; `n_s(s) = Σ_a n_sa(s,a)`, `total = Σ_s n_s(s)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountTables {
    pub n_sa: Array2<u64>,
    pub n_s: Array1<u64>,
    pub total: u64,
}

impl CountTables {
    pub fn from_dataset(dataset: &TransitionDataset) -> Self {
        Self { n_sa: dataset.counts_sa().clone(), n_s: dataset.counts_s().clone(), total: dataset.len() as u64 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// `1/√N(s,a)`.
    CbSa,
    /// `1/√N(s)`.
    CbS,
    /// `−log d̄^D(s)`.
    PbS,
}

impl RewardKind {
    pub const ALL: [RewardKind; 3] = [RewardKind::CbSa, RewardKind::CbS, RewardKind::PbS];

    pub fn key(self) -> &'static str {
        match self {
            RewardKind::CbSa => "cb_sa",
            RewardKind::CbS => "cb_s",
            RewardKind::PbS => "pb_s",
        }
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.key() == s).ok_or_else(|| Error::Config(format!("unknown reward kind '{s}'")))
    }
}

/// Reward table over `(s,a)`. Counts enter as `max(N, 1)`; PB-S gives unvisited
/// states the add-one mass `1/(total + S)`.
pub fn intrinsic_reward(kind: RewardKind, counts: &CountTables) -> Array2<f64> {
    let (ns, na) = counts.n_sa.dim();
    let inv_sqrt = |n: u64| 1.0 / (n.max(1) as f64).sqrt();
    match kind {
        RewardKind::CbSa => counts.n_sa.mapv(inv_sqrt),
        RewardKind::CbS => Array2::from_shape_fn((ns, na), |(s, _)| inv_sqrt(counts.n_s[s])),
        RewardKind::PbS => {
            let total = counts.total as f64;
            Array2::from_shape_fn((ns, na), |(s, _)| {
                let n = counts.n_s[s];
                if n > 0 {
                    -(n as f64 / total).ln()
                } else {
                    (total + ns as f64).ln()
                }
            })
        }
    }
}

/// Count-normalized transition rows; unseen `(s,a)` rows are uniform.
pub fn mle_transition(dataset: &TransitionDataset) -> Array3<f64> {
    mle_from_counts(dataset.counts_sas())
}

pub fn mle_from_counts(counts: &Array3<u64>) -> Array3<f64> {
    let (ns, na, _) = counts.dim();
    let mut t = Array3::zeros(counts.raw_dim());
    for s in 0..ns {
        for a in 0..na {
            let row = counts.slice(ndarray::s![s, a, ..]);
            let n: u64 = row.sum();
            let mut out = t.slice_mut(ndarray::s![s, a, ..]);
            if n == 0 {
                out.fill(1.0 / ns as f64);
            } else {
                out.assign(&row.mapv(|c| c as f64 / n as f64));
            }
        }
    }
    t
}

/// Exact `(Q, V)` of `policy` for the reward table under `model`.
pub fn policy_values(model: &FiniteMdp, reward: &Array2<f64>, policy: &TabularPolicy) -> Result<(Array2<f64>, Array1<f64>)> {
    let gamma = model.gamma();
    if gamma >= 1.0 {
        return Err(Error::InvalidArgument("policy evaluation needs gamma < 1".into()));
    }
    let ns = model.num_states();
    let r_pi = (reward * policy.probs()).sum_axis(Axis(1));
    let a = Array2::<f64>::eye(ns) - &(model.state_transition(policy) * gamma);
    let v = linalg::solve(&a, &r_pi)?;
    let q = reward + &(model.expected_next(&v) * gamma);
    Ok((q, v))
}

/// `E_{d̄^π, π}[r̂]` under `model`, i.e. `(1−γ) E_{p0}[V^π]`.
pub fn pg_objective(model: &FiniteMdp, reward: &Array2<f64>, logits: &Array2<f64>) -> Result<f64> {
    let pi = TabularPolicy::softmax(logits);
    let occ = stationary_distribution(model, &pi)?;
    Ok((&occ.d * reward).sum())
}

/// `∂/∂θ(s,b) = d̄^π(s) π(b|s) (Q(s,b) − V(s))` under `model`.
pub fn pg_gradient(model: &FiniteMdp, reward: &Array2<f64>, logits: &Array2<f64>) -> Result<Array2<f64>> {
    let pi = TabularPolicy::softmax(logits);
    let occ = stationary_distribution(model, &pi)?;
    let (q, v) = policy_values(model, reward, &pi)?;
    Ok(Array2::from_shape_fn(logits.raw_dim(), |(s, b)| {
        occ.d_bar[s] * pi.probs()[[s, b]] * (q[[s, b]] - v[s])
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgConfig {
    pub reward: RewardKind,
    pub learning_rate: f64,
    /// Discount of the planning model.
    pub gamma: f64,
}

impl Default for PgConfig {
    fn default() -> Self {
        Self { reward: RewardKind::PbS, learning_rate: 1000.0, gamma: 0.95 }
    }
}

/// Softmax-policy learner ascending the exact model-based policy gradient.
#[derive(Clone, Debug)]
pub struct PgLearner {
    pub logits: Array2<f64>,
    pub config: PgConfig,
}

impl PgLearner {
    pub fn new(num_states: usize, num_actions: usize, config: PgConfig) -> Self {
        Self { logits: Array2::zeros((num_states, num_actions)), config }
    }

    pub fn policy(&self) -> TabularPolicy {
        TabularPolicy::softmax(&self.logits)
    }
}

/// Collects episodes with the softmax policy, then [`pg_update`].
pub fn pg_baseline_iteration<R: Rng + ?Sized>(
    sim: &Simulator,
    learner: &mut PgLearner,
    buffer: &mut TransitionDataset,
    collection: &CollectionConfig,
    rng: &mut R,
) -> Result<f64> {
    let behavior = learner.policy();
    for _ in 0..collection.episodes_per_iteration {
        buffer.push_episode(&sim.rollout(&behavior, collection.episode_length, rng))?;
    }
    pg_update(learner, buffer)
}

/// Rebuilds `T̂` and `r̂` from the buffer and takes one gradient-ascent step.
/// Returns the model-based objective after the step.
pub fn pg_update(learner: &mut PgLearner, buffer: &TransitionDataset) -> Result<f64> {
    let model = FiniteMdp::new(mle_transition(buffer), buffer.initial_distribution()?, learner.config.gamma)?;
    let reward = intrinsic_reward(learner.config.reward, &CountTables::from_dataset(buffer));
    let grad = pg_gradient(&model, &reward, &learner.logits)?;
    learner.logits.scaled_add(learner.config.learning_rate, &grad);
    pg_objective(&model, &reward, &learner.logits)
}

/// `Q(s,a) ← Q(s,a) + η (r + γ max_{a'} Q(s',a') − Q(s,a))`.
pub fn q_learning_step(q: &mut Array2<f64>, s: usize, a: usize, next: usize, reward: f64, eta: f64, gamma: f64) {
    let target = reward + gamma * q.row(next).fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    q[[s, a]] += eta * (target - q[[s, a]]);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    Greedy,
    Softmax,
}

/// Greedy one-hot rows (lowest-index tie-break) or `softmax(Q/τ)`.
pub fn target_policy(q: &Array2<f64>, mode: TargetMode, tau: f64) -> TabularPolicy {
    match mode {
        TargetMode::Greedy => {
            let actions: Vec<usize> = q
                .outer_iter()
                .map(|row| {
                    let best = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                    row.iter().position(|&x| x == best).unwrap_or(0)
                })
                .collect();
            TabularPolicy::deterministic(&actions, q.ncols())
        }
        TargetMode::Softmax => TabularPolicy::softmax(&(q / tau)),
    }
}

/// `(1−ε) π + ε · uniform` per row.
pub fn epsilon_soft(policy: &TabularPolicy, epsilon: f64) -> TabularPolicy {
    let na = policy.num_actions() as f64;
    TabularPolicy::new(policy.probs().mapv(|p| (1.0 - epsilon) * p + epsilon / na)).expect("mixture of distributions")
}

/// `ε_T = min(1, 5/T)` for 1-based iteration `T`.
pub fn epsilon_schedule(iteration: usize) -> f64 {
    (5.0 / iteration.max(1) as f64).min(1.0)
}

/// `τ_T = max(0.05, 5/T)` for 1-based iteration `T`.
pub fn tau_schedule(iteration: usize) -> f64 {
    (5.0 / iteration.max(1) as f64).max(0.05)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QConfig {
    pub reward: RewardKind,
    pub mode: TargetMode,
    pub learning_rate: f64,
    pub gamma: f64,
}

impl Default for QConfig {
    fn default() -> Self {
        Self { reward: RewardKind::PbS, mode: TargetMode::Greedy, learning_rate: 0.1, gamma: 0.95 }
    }
}

/// Tabular Q-learner with an ε-soft behavior policy. Transitions are replayed in
/// collection order, each rewarded by the counts up to and including itself.
#[derive(Clone, Debug)]
pub struct QLearner {
    pub q: Array2<f64>,
    pub config: QConfig,
    iteration: usize,
    seen: usize,
    n_sa: Array2<u64>,
    n_s: Array1<u64>,
}

impl QLearner {
    pub fn new(num_states: usize, num_actions: usize, config: QConfig) -> Self {
        Self {
            q: Array2::zeros((num_states, num_actions)),
            config,
            iteration: 0,
            seen: 0,
            n_sa: Array2::zeros((num_states, num_actions)),
            n_s: Array1::zeros(num_states),
        }
    }

    /// Target policy at the current schedule position.
    pub fn policy(&self) -> TabularPolicy {
        target_policy(&self.q, self.config.mode, tau_schedule(self.iteration.max(1)))
    }

    /// ε-soft behavior for the next iteration.
    pub fn behavior(&self) -> TabularPolicy {
        let t = self.iteration + 1;
        epsilon_soft(&target_policy(&self.q, self.config.mode, tau_schedule(t)), epsilon_schedule(t))
    }

    fn reward(&self, s: usize, a: usize) -> f64 {
        let inv_sqrt = |c: u64| 1.0 / (c.max(1) as f64).sqrt();
        match self.config.reward {
            RewardKind::CbSa => inv_sqrt(self.n_sa[[s, a]]),
            RewardKind::CbS => inv_sqrt(self.n_s[s]),
            RewardKind::PbS => -(self.n_s[s] as f64 / self.seen as f64).ln(),
        }
    }

    /// Q-learning over the transitions appended since the previous call.
    pub fn update(&mut self, buffer: &TransitionDataset) {
        self.iteration += 1;
        for &(s, a, next) in &buffer.transitions()[self.seen..] {
            self.seen += 1;
            self.n_sa[[s, a]] += 1;
            self.n_s[s] += 1;
            let r = self.reward(s, a);
            q_learning_step(&mut self.q, s, a, next, r, self.config.learning_rate, self.config.gamma);
        }
    }

    pub fn iterate<R: Rng + ?Sized>(
        &mut self,
        sim: &Simulator,
        buffer: &mut TransitionDataset,
        collection: &CollectionConfig,
        rng: &mut R,
    ) -> Result<()> {
        let behavior = self.behavior();
        for _ in 0..collection.episodes_per_iteration {
            buffer.push_episode(&sim.rollout(&behavior, collection.episode_length, rng))?;
        }
        self.update(buffer);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::random_mdp;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn counts(n_sa: Array2<u64>) -> CountTables {
        let n_s = n_sa.sum_axis(Axis(1));
        let total = n_s.sum();
        CountTables { n_sa, n_s, total }
    }

    #[test]
    fn reward_examples() {
        let c = counts(array![[4, 0], [1, 0], [0, 0], [11, 0]]);
        let r = intrinsic_reward(RewardKind::CbSa, &c);
        assert_eq!(r[[0, 0]], 0.5);
        assert_eq!(r[[0, 1]], 1.0);
        assert_eq!(intrinsic_reward(RewardKind::CbS, &c)[[1, 1]], 1.0);
        let r = intrinsic_reward(RewardKind::PbS, &c);
        // d̄^D(s0) = 4/16.
        assert_abs_diff_eq!(r[[0, 0]], 4f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(r[[2, 1]], 20f64.ln(), epsilon = 1e-15);
        for kind in RewardKind::ALL {
            assert!(intrinsic_reward(kind, &c).iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn mle_rows() {
        let mut c = Array3::zeros((3, 2, 3));
        c[[0, 0, 0]] = 3;
        c[[0, 0, 1]] = 1;
        let t = mle_from_counts(&c);
        assert_eq!(t.slice(ndarray::s![0, 0, ..]).to_vec(), vec![0.75, 0.25, 0.0]);
        assert_eq!(t.slice(ndarray::s![2, 1, ..]).to_vec(), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn mle_is_consistent() {
        let mdp = random_mdp(2, 3, 2, 1.0);
        let sim = Simulator::new(Arc::new(mdp.clone()));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ds = TransitionDataset::new(3, 2);
        for s in 0..3 {
            for a in 0..2 {
                for _ in 0..100_000 {
                    ds.push(s, a, sim.step(s, a, &mut rng)).unwrap();
                }
            }
        }
        let err = (&mle_transition(&ds) - mdp.transition()).iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        assert!(err < 0.02);
    }

    #[test]
    fn pg_gradient_matches_finite_differences() {
        let model = random_mdp(3, 4, 3, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reward = Array2::from_shape_fn((4, 3), |_| rng.random_range(0.0..2.0));
        for _ in 0..5 {
            let logits = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
            let g = pg_gradient(&model, &reward, &logits).unwrap();
            let h = 1e-6;
            for idx in [(0, 0), (1, 2), (3, 1)] {
                let mut p = logits.clone();
                p[idx] += h;
                let mut m = logits.clone();
                m[idx] -= h;
                let fd = (pg_objective(&model, &reward, &p).unwrap() - pg_objective(&model, &reward, &m).unwrap()) / (2.0 * h);
                assert!((fd - g[idx]).abs() <= 1e-4 * g[idx].abs().max(1e-3), "{fd} vs {}", g[idx]);
            }
        }
        assert!(pg_gradient(&model, &Array2::zeros((4, 3)), &Array2::zeros((4, 3))).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn q_update_examples() {
        let mut q = Array2::zeros((2, 2));
        q_learning_step(&mut q, 0, 1, 1, 1.0, 0.5, 0.95);
        assert_eq!(q[[0, 1]], 0.5);
        let mut q = Array2::zeros((2, 2));
        q_learning_step(&mut q, 0, 0, 1, 0.0, 0.5, 0.95);
        assert!(q.iter().all(|&x| x == 0.0));
        let mut q = Array2::zeros((1, 1));
        for _ in 0..5000 {
            q_learning_step(&mut q, 0, 0, 0, 1.0, 0.5, 0.95);
        }
        assert_abs_diff_eq!(q[[0, 0]], 20.0, epsilon = 1e-9);
    }

    #[test]
    fn target_and_soft_policies() {
        let q = array![[1.0, 1.0], [1.0, 0.0]];
        assert_eq!(target_policy(&q, TargetMode::Greedy, 1.0).row(0).to_vec(), vec![1.0, 0.0]);
        let p = target_policy(&q, TargetMode::Softmax, 1.0);
        assert_abs_diff_eq!(p.probs()[[1, 0]], 0.7310585786300049, epsilon = 1e-12);
        let p = target_policy(&q, TargetMode::Softmax, 1e3);
        assert!(p.probs().iter().all(|&x| (x - 0.5).abs() < 1e-3));
        let one_hot = TabularPolicy::deterministic(&[0, 1], 2);
        assert_eq!(epsilon_soft(&one_hot, 0.0), one_hot);
        assert_eq!(epsilon_soft(&one_hot, 1.0), TabularPolicy::uniform(2, 2));
        assert_eq!(epsilon_soft(&one_hot, 0.5).row(0).to_vec(), vec![0.75, 0.25]);
        assert_eq!(epsilon_schedule(1), 1.0);
        assert_eq!(epsilon_schedule(10), 0.5);
        assert_eq!(tau_schedule(1000), 0.05);
    }
}
