//! Planning-based ground truth: the maximal achievable state entropy `H*` by
//! conditional gradient over the occupancy polytope, with exact MDP solves as the
//! linear subproblem.

use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::mle_transition;
use crate::dataset::TransitionDataset;
use crate::dice::CollectionConfig;
use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{entropy_unchecked, policy_from_occupancy, stationary_distribution, FiniteMdp, Occupancy, Simulator, TabularPolicy};

const VI_MAX_ITERS: usize = 1_000_000;
/// Relative slack under which two action values count as tied.
const TIE_TOL: f64 = 1e-12;

/// Lowest-index argmax, with ties up to `TIE_TOL`.
fn greedy_action(q: ndarray::ArrayView1<'_, f64>, prefer: Option<usize>) -> usize {
    let best = q.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let slack = TIE_TOL * (1.0 + best.abs());
    if let Some(a) = prefer {
        if q[a] >= best - slack {
            return a;
        }
    }
    q.iter().position(|&x| x >= best - slack).expect("nonempty action set")
}

fn action_values(mdp: &FiniteMdp, reward: &Array1<f64>, v: &Array1<f64>, gamma: f64) -> Array2<f64> {
    let mut q = mdp.expected_next(v) * gamma;
    for (s, mut row) in q.outer_iter_mut().enumerate() {
        row += reward[s];
    }
    q
}

fn span(v: &Array1<f64>) -> f64 {
    v.fold(f64::NEG_INFINITY, |m, &x| m.max(x)) - v.fold(f64::INFINITY, |m, &x| m.min(x))
}

/// Greedy deterministic policy for the state reward `reward`.
///
/// `gamma < 1`: value iteration until the Bellman residual max-norm is below
/// `tol`. `gamma = 1`: relative value iteration on the aperiodic transform
/// `(I + T)/2` (same optimal policies) until the span of the residual is below `tol`.
pub fn value_iteration(mdp: &FiniteMdp, reward: &Array1<f64>, gamma: f64, tol: f64) -> Result<TabularPolicy> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    if reward.len() != ns {
        return Err(Error::Shape(format!("reward over {} states for {ns}-state MDP", reward.len())));
    }
    if !(gamma > 0.0 && gamma <= 1.0) || !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma {gamma}, tol {tol}")));
    }
    let mut v = Array1::<f64>::zeros(ns);
    for _ in 0..VI_MAX_ITERS {
        let q = if gamma < 1.0 {
            action_values(mdp, reward, &v, gamma)
        } else {
            let mut q = action_values(mdp, reward, &v, 1.0);
            q.zip_mut_with(&v.view().insert_axis(Axis(1)).broadcast((ns, na)).unwrap(), |x, vs| *x = 0.5 * (*x + vs));
            q
        };
        let next = q.map_axis(Axis(1), |row| row.fold(f64::NEG_INFINITY, |m, &x| m.max(x)));
        let diff = &next - &v;
        let done = if gamma < 1.0 { diff.iter().fold(0.0_f64, |m, x| m.max(x.abs())) < tol } else { span(&diff) < tol };
        v = if gamma < 1.0 { next } else { &next - next[0] };
        if done {
            let q = action_values(mdp, reward, &v, gamma);
            let actions: Vec<usize> = q.outer_iter().map(|row| greedy_action(row, None)).collect();
            return Ok(TabularPolicy::deterministic(&actions, na));
        }
    }
    Err(Error::NoConvergence(VI_MAX_ITERS))
}

/// Exact best response: value iteration, then policy iteration until stable (`γ < 1`).
fn best_response(mdp: &FiniteMdp, reward: &Array1<f64>) -> Result<TabularPolicy> {
    let gamma = mdp.gamma();
    let pi = value_iteration(mdp, reward, gamma, 1e-10)?;
    if gamma >= 1.0 {
        return Ok(pi);
    }
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut actions: Vec<usize> = pi.probs().outer_iter().map(|r| r.iter().position(|&p| p == 1.0).unwrap()).collect();
    for _ in 0..1000 {
        let pi = TabularPolicy::deterministic(&actions, na);
        let a = Array2::<f64>::eye(ns) - &(mdp.state_transition(&pi) * gamma);
        let v = linalg::solve(&a, reward)?;
        let q = action_values(mdp, reward, &v, gamma);
        let next: Vec<usize> = q.outer_iter().zip(&actions).map(|(row, &a)| greedy_action(row, Some(a))).collect();
        if next == actions {
            return Ok(pi);
        }
        actions = next;
    }
    Err(Error::NoConvergence(1000))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrankWolfeOptions {
    pub iters: usize,
    /// Gradients are taken at `(1−ε) d̄ + ε/S`.
    pub smoothing_eps: f64,
    /// Exact line search on the entropy restriction instead of `2/(k+2)`.
    pub line_search: bool,
    /// Stop once the duality gap falls below this.
    pub gap_tol: Option<f64>,
}

impl Default for FrankWolfeOptions {
    fn default() -> Self {
        Self { iters: 20_000, smoothing_eps: 1e-6, line_search: true, gap_tol: Some(1e-5) }
    }
}

impl FrankWolfeOptions {
    /// Plain `2/(k+2)` schedule for a fixed number of iterations.
    pub fn plain(iters: usize) -> Self {
        Self { iters, line_search: false, gap_tol: None, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub occupancy: Occupancy,
    pub entropy_star: f64,
    /// `(k, H[d̄_k])` for every visited iterate.
    pub iterates: Vec<(usize, f64)>,
    pub policy: TabularPolicy,
    /// Smallest duality gap seen; bounds `H* − entropy_star` up to smoothing.
    pub gap: f64,
}

fn entropy_gradient(d_bar: &Array1<f64>, eps: f64) -> Array1<f64> {
    let n = d_bar.len() as f64;
    d_bar.mapv(|p| -((1.0 - eps) * p + eps / n).ln() - 1.0)
}

fn mix_entropy(a: &Array1<f64>, b: &Array1<f64>, eta: f64) -> f64 {
    entropy_unchecked(a.iter().zip(b).map(|(x, y)| (1.0 - eta) * x + eta * y))
}

/// Golden-section maximization of the concave `η ↦ H[(1−η) a + η b]` on `[0, 1]`.
fn line_search(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (mix_entropy(a, b, x1), mix_entropy(a, b, x2));
    while hi - lo > 1e-12 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = mix_entropy(a, b, x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = mix_entropy(a, b, x1);
        }
    }
    let mid = 0.5 * (lo + hi);
    [0.0, mid, 1.0].into_iter().fold((0.0, f64::NEG_INFINITY), |(be, bv), e| {
        let v = mix_entropy(a, b, e);
        if v > bv { (e, v) } else { (be, bv) }
    }).0
}

/// Maximizes `H[d̄]` over the occupancies of `mdp`, starting from the uniform policy.
pub fn frank_wolfe_sem(mdp: &FiniteMdp, opts: &FrankWolfeOptions) -> Result<OracleResult> {
    if opts.iters == 0 || !(opts.smoothing_eps > 0.0 && opts.smoothing_eps < 0.5) {
        return Err(Error::InvalidArgument(format!("iters {} smoothing {}", opts.iters, opts.smoothing_eps)));
    }
    let mut occ = stationary_distribution(mdp, &TabularPolicy::uniform(mdp.num_states(), mdp.num_actions()))?;
    let mut best = occ.clone();
    let mut best_h = occ.state_entropy();
    let mut iterates = vec![(0, best_h)];
    let mut min_gap = f64::INFINITY;
    for k in 0..opts.iters {
        let grad = entropy_gradient(&occ.d_bar, opts.smoothing_eps);
        let vertex = stationary_distribution(mdp, &best_response(mdp, &grad)?)?;
        let gap = grad.dot(&(&vertex.d_bar - &occ.d_bar));
        min_gap = min_gap.min(gap.max(0.0));
        if opts.gap_tol.is_some_and(|tol| gap < tol) {
            break;
        }
        let eta = if opts.line_search { line_search(&occ.d_bar, &vertex.d_bar) } else { 2.0 / (k as f64 + 2.0) };
        occ = Occupancy::from_joint(&occ.d * (1.0 - eta) + &vertex.d * eta);
        let h = occ.state_entropy();
        iterates.push((k + 1, h));
        if h > best_h {
            best_h = h;
            best = occ.clone();
        }
    }
    let policy = policy_from_occupancy(&best.d);
    Ok(OracleResult { occupancy: best, entropy_star: best_h, iterates, policy, gap: min_gap })
}

/// Transition model used by [`MaxEntLearner`].
#[derive(Clone, Debug)]
pub enum ModelSource {
    /// Maximum-likelihood model of the buffer with its empirical initial distribution.
    Mle { gamma: f64 },
    /// A known model; planning then matches [`frank_wolfe_sem`] with the plain schedule.
    Known(Arc<FiniteMdp>),
}

/// Frank-Wolfe over a mixture of policies, planning in a model of the collected data.
#[derive(Clone, Debug)]
pub struct MaxEntLearner {
    components: Vec<(f64, TabularPolicy)>,
    policy: TabularPolicy,
    model: ModelSource,
    smoothing_eps: f64,
    steps: usize,
}

impl MaxEntLearner {
    pub fn new(num_states: usize, num_actions: usize, model: ModelSource, smoothing_eps: f64) -> Self {
        let uniform = TabularPolicy::uniform(num_states, num_actions);
        Self { components: vec![(1.0, uniform.clone())], policy: uniform, model, smoothing_eps, steps: 0 }
    }

    /// Markov collapse of the current mixture (uniform before the first step).
    pub fn policy(&self) -> &TabularPolicy {
        &self.policy
    }

    fn planning_model(&self, buffer: &TransitionDataset) -> Result<FiniteMdp> {
        match &self.model {
            ModelSource::Known(mdp) => Ok(mdp.as_ref().clone()),
            ModelSource::Mle { gamma } => FiniteMdp::new(mle_transition(buffer), buffer.initial_distribution()?, *gamma),
        }
    }

    /// One Frank-Wolfe step in the model of `buffer`.
    pub fn plan(&mut self, buffer: &TransitionDataset) -> Result<()> {
        let model = self.planning_model(buffer)?;
        let mut d = Array2::zeros((model.num_states(), model.num_actions()));
        for (w, pi) in &self.components {
            d.scaled_add(*w, &stationary_distribution(&model, pi)?.d);
        }
        let occ = Occupancy::from_joint(d);
        let vertex = best_response(&model, &entropy_gradient(&occ.d_bar, self.smoothing_eps))?;
        let eta = 2.0 / (self.steps as f64 + 2.0);
        self.components.iter_mut().for_each(|(w, _)| *w *= 1.0 - eta);
        self.components.retain(|(w, _)| *w > 0.0);
        let vertex_d = stationary_distribution(&model, &vertex)?.d;
        self.components.push((eta, vertex));
        self.steps += 1;
        self.policy = policy_from_occupancy(&(&occ.d * (1.0 - eta) + &vertex_d * eta));
        Ok(())
    }

    /// Collects with the current policy, then plans.
    pub fn iterate<R: Rng + ?Sized>(
        &mut self,
        sim: &Simulator,
        buffer: &mut TransitionDataset,
        collection: &CollectionConfig,
        rng: &mut R,
    ) -> Result<()> {
        for _ in 0..collection.episodes_per_iteration {
            buffer.push_episode(&sim.rollout(&self.policy, collection.episode_length, rng))?;
        }
        self.plan(buffer)
    }
}

/// One point of a MaxEnt learning curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    pub episodes: usize,
    pub policy: TabularPolicy,
    /// State marginal of the buffer (`None` before any data).
    pub data_marginal: Option<Array1<f64>>,
}

/// Runs the MLE-model MaxEnt baseline for `iters` iterations; point 0 is the
/// uniform initial policy.
pub fn maxent_baseline_run<R: Rng + ?Sized>(
    sim: &Simulator,
    collection: &CollectionConfig,
    iters: usize,
    model: ModelSource,
    rng: &mut R,
) -> Result<Vec<CurvePoint>> {
    let (ns, na) = (sim.num_states(), sim.num_actions());
    let mut learner = MaxEntLearner::new(ns, na, model, 1e-6);
    let mut buffer = TransitionDataset::new(ns, na);
    let mut curve = vec![CurvePoint { iteration: 0, episodes: 0, policy: learner.policy().clone(), data_marginal: None }];
    for k in 1..=iters {
        learner.iterate(sim, &mut buffer, collection, rng)?;
        curve.push(CurvePoint {
            iteration: k,
            episodes: k * collection.episodes_per_iteration,
            policy: learner.policy().clone(),
            data_marginal: Some(buffer.d_s()?),
        });
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{example_three_state, random_mdp, symmetric_mdp};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_reward_gives_lowest_index_policy() {
        let mdp = random_mdp(1, 4, 3, 1.0);
        let pi = value_iteration(&mdp, &Array1::from_elem(4, 0.7), 0.95, 1e-10).unwrap();
        assert!(pi.probs().outer_iter().all(|r| r[0] == 1.0));
        let uniform_reward = entropy_gradient(&Array1::from_elem(4, 0.25), 1e-6);
        let pi = value_iteration(&mdp, &uniform_reward, 0.95, 1e-10).unwrap();
        assert!(pi.probs().outer_iter().all(|r| r[0] == 1.0));
    }

    #[test]
    fn greedy_policy_beats_every_deterministic_policy() {
        let t = Array3::from_shape_vec((2, 2, 2), vec![0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.05, 0.95]).unwrap();
        let mdp = FiniteMdp::new(t, array![0.5, 0.5], 0.9).unwrap();
        let reward = array![1.0, 0.0];
        let pi = value_iteration(&mdp, &reward, 0.9, 1e-12).unwrap();
        let value = |p: &TabularPolicy| stationary_distribution(&mdp, p).unwrap().d_bar.dot(&reward);
        let v = value(&pi);
        for q in TabularPolicy::enumerate_deterministic(2, 2) {
            assert!(v >= value(&q) - 1e-12);
        }
    }

    #[test]
    fn relative_value_iteration_maximizes_average_reward() {
        let mdp = random_mdp(3, 4, 2, 1.0).with_gamma(1.0).unwrap();
        let reward = array![1.0, 0.0, 0.3, -0.5];
        let pi = value_iteration(&mdp, &reward, 1.0, 1e-12).unwrap();
        let gain = |p: &TabularPolicy| stationary_distribution(&mdp, p).unwrap().d_bar.dot(&reward);
        let g = gain(&pi);
        for q in TabularPolicy::enumerate_deterministic(4, 2) {
            assert!(g >= gain(&q) - 1e-9);
        }
    }

    #[test]
    fn symmetric_mdp_reaches_log_s() {
        let res = frank_wolfe_sem(&symmetric_mdp(5, 3, 0.9), &FrankWolfeOptions::default()).unwrap();
        assert_abs_diff_eq!(res.entropy_star, 5f64.ln(), epsilon = 1e-6);
    }

    #[test]
    fn three_state_optimum_matches_grid() {
        let mdp = example_three_state();
        let res = frank_wolfe_sem(&mdp, &FrankWolfeOptions::default()).unwrap();
        // Only s1's action matters.
        let grid = (0..=1000)
            .map(|i| {
                let p = i as f64 / 1000.0;
                let pi = TabularPolicy::new(array![[0.5, 0.5], [1.0 - p, p], [0.5, 0.5]]).unwrap();
                stationary_distribution(&mdp, &pi).unwrap().state_entropy()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((res.entropy_star - grid).abs() < 1e-3, "{} vs {grid}", res.entropy_star);
        assert!(res.gap < 1e-3);
    }

    #[test]
    fn collapsed_policy_reproduces_the_mixture() {
        let mdp = random_mdp(4, 5, 3, 1.0);
        let res = frank_wolfe_sem(&mdp, &FrankWolfeOptions::plain(50)).unwrap();
        let h = stationary_distribution(&mdp, &res.policy).unwrap().state_entropy();
        assert!(h >= res.entropy_star - 1e-6);
        assert!(res.iterates.len() == 51);
    }

    #[test]
    fn known_model_maxent_matches_the_oracle() {
        let mdp = Arc::new(random_mdp(6, 4, 2, 1.0));
        let sim = Simulator::new(mdp.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let collection = CollectionConfig { episodes_per_iteration: 1, episode_length: 10 };
        let curve = maxent_baseline_run(&sim, &collection, 30, ModelSource::Known(mdp.clone()), &mut rng).unwrap();
        let uniform = stationary_distribution(&mdp, &TabularPolicy::uniform(4, 2)).unwrap().state_entropy();
        let h0 = stationary_distribution(&mdp, &curve[0].policy).unwrap().state_entropy();
        assert_eq!(h0, uniform);
        let end = stationary_distribution(&mdp, &curve.last().unwrap().policy).unwrap().state_entropy();
        let oracle = frank_wolfe_sem(&mdp, &FrankWolfeOptions::plain(30)).unwrap();
        assert!((end - oracle.iterates.last().unwrap().1).abs() < 1e-3, "{end} vs {:?}", oracle.iterates.last());
    }
}
