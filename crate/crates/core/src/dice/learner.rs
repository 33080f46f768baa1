//! Tabular instantiation of the online algorithm: collect with the current
//! policy, then alternate dual, advantage-regression and policy updates.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::objective::{eval_l_hat, grad_l_hat, Batch};
use super::{advantage_regressed, advantage_sample, compute_w, CorrectionRatios, DualVars, SemdiceConfig};
use crate::dataset::TransitionDataset;
use crate::error::{Error, Result};
use crate::mdp::{Simulator, TabularPolicy};
use crate::optim::Optimizer;

/// Floor on `w` inside the log of the policy objective.
const LOG_W_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectionConfig {
    pub episodes_per_iteration: usize,
    pub episode_length: usize,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        Self { episodes_per_iteration: 10, episode_length: 100 }
    }
}

#[derive(Clone, Debug)]
pub struct LearnerState {
    pub dual: DualVars,
    pub e_table: Array2<f64>,
    pub policy_logits: Array2<f64>,
    dual_opt: Optimizer,
    e_opt: Optimizer,
    policy_opt: Optimizer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    /// Full-batch `L̂` after the updates.
    pub objective: f64,
    pub buffer_len: usize,
}

impl LearnerState {
    /// Zero duals and advantages, uniform policy.
    pub fn new(num_states: usize, num_actions: usize, cfg: &SemdiceConfig) -> Result<Self> {
        cfg.validate()?;
        let dual = DualVars::zeros(num_states, cfg.undiscounted());
        let dual_len = dual.to_flat().len();
        let table = num_states * num_actions;
        Ok(Self {
            dual,
            e_table: Array2::zeros((num_states, num_actions)),
            policy_logits: Array2::zeros((num_states, num_actions)),
            dual_opt: Optimizer::new(cfg.optimizer, cfg.learning_rate, dual_len)?,
            e_opt: Optimizer::new(cfg.optimizer, cfg.e_learning_rate, table)?,
            policy_opt: Optimizer::new(cfg.policy_optimizer, cfg.policy_learning_rate, table)?,
        })
    }

    pub fn policy(&self) -> TabularPolicy {
        TabularPolicy::softmax(&self.policy_logits)
    }

    /// Ratios implied by the regressed advantages.
    pub fn correction_ratios(&self, cfg: &SemdiceConfig) -> CorrectionRatios {
        compute_w(&self.e_table, cfg.alpha, cfg.fdiv)
    }

    pub fn dual_step(&mut self, dataset: &TransitionDataset, cfg: &SemdiceConfig, batch: Batch<'_>) -> Result<()> {
        let grad = grad_l_hat(dataset, &self.dual, cfg, batch)?;
        let mut params = self.dual.to_flat();
        self.dual_opt.step(&mut params, &grad.to_flat());
        self.dual.set_flat(&params);
        if !self.dual.is_finite() {
            return Err(Error::Divergence { iterations: 0, trace: vec![f64::NAN] });
        }
        Ok(())
    }
}

fn log_w(e: f64, cfg: &SemdiceConfig) -> f64 {
    cfg.fdiv.conjugate_plus_prime(e / cfg.alpha).max(LOG_W_FLOOR).ln()
}

/// `J(π) = −E_{s∼d̄^D, a∼π}[log w(s,a)]` with `w` from the learner's `e_table`.
pub fn i_projection_objective(
    logits: &Array2<f64>,
    e_table: &Array2<f64>,
    dataset: &TransitionDataset,
    cfg: &SemdiceConfig,
) -> Result<f64> {
    let d = dataset.d_s()?;
    let pi = TabularPolicy::softmax(logits);
    let mut j = 0.0;
    for s in 0..d.len() {
        if d[s] == 0.0 {
            continue;
        }
        let inner: f64 = pi.row(s).iter().zip(e_table.row(s)).map(|(p, &e)| p * log_w(e, cfg)).sum();
        j -= d[s] * inner;
    }
    Ok(j)
}

/// Closed-form `∂J/∂logits`: `−d̄^D(s) π(b|s) (g(s,b) − Σ_a π(a|s) g(s,a))`, `g = log w`.
pub fn i_projection_grad(
    logits: &Array2<f64>,
    e_table: &Array2<f64>,
    dataset: &TransitionDataset,
    cfg: &SemdiceConfig,
) -> Result<Array2<f64>> {
    let d = dataset.d_s()?;
    let pi = TabularPolicy::softmax(logits);
    let mut grad = Array2::zeros(logits.raw_dim());
    for s in 0..d.len() {
        if d[s] == 0.0 {
            continue;
        }
        let g: Vec<f64> = e_table.row(s).iter().map(|&e| log_w(e, cfg)).collect();
        let mean: f64 = pi.row(s).iter().zip(&g).map(|(p, g)| p * g).sum();
        for (b, gb) in g.iter().enumerate() {
            grad[[s, b]] = -d[s] * pi.probs()[[s, b]] * (gb - mean);
        }
    }
    Ok(grad)
}

pub fn i_projection_step(state: &mut LearnerState, dataset: &TransitionDataset, cfg: &SemdiceConfig) -> Result<()> {
    let grad = i_projection_grad(&state.policy_logits, &state.e_table, dataset, cfg)?;
    let mut params: Vec<f64> = state.policy_logits.iter().copied().collect();
    state.policy_opt.step(&mut params, grad.as_slice().expect("standard layout"));
    state.policy_logits = Array2::from_shape_vec(state.policy_logits.raw_dim(), params).expect("shape preserved");
    // Softmax is shift invariant per row; recentring keeps logits bounded.
    for mut row in state.policy_logits.outer_iter_mut() {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row -= m;
    }
    Ok(())
}

/// Gradient of `E_{(s,a,s')∼D}[(e(s,a) − ê(s,a,s'))²]`: `2 d^D(s,a) (e(s,a) − ē(s,a))`.
pub fn e_regression_grad(e_table: &Array2<f64>, dual: &DualVars, dataset: &TransitionDataset, gamma: f64) -> Result<Array2<f64>> {
    let d = dataset.d_sa()?;
    let target = advantage_regressed(dataset, dual, gamma);
    Ok(Array2::from_shape_fn(e_table.raw_dim(), |(s, a)| 2.0 * d[[s, a]] * (e_table[[s, a]] - target[[s, a]])))
}

/// Mean squared regression error of `e_table` against the sampled advantages.
pub fn e_regression_loss(e_table: &Array2<f64>, dual: &DualVars, dataset: &TransitionDataset, gamma: f64) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = dataset.len() as f64;
    let mut loss = 0.0;
    for ((s, a, t), &c) in dataset.counts_sas().indexed_iter() {
        if c > 0 {
            loss += c as f64 / n * (e_table[[s, a]] - advantage_sample(dual, s, a, t, gamma)).powi(2);
        }
    }
    Ok(loss)
}

pub fn e_regression_step(state: &mut LearnerState, dataset: &TransitionDataset, cfg: &SemdiceConfig) -> Result<()> {
    let grad = e_regression_grad(&state.e_table, &state.dual, dataset, cfg.gamma)?;
    let mut params: Vec<f64> = state.e_table.iter().copied().collect();
    state.e_opt.step(&mut params, grad.as_slice().expect("standard layout"));
    state.e_table = Array2::from_shape_vec(state.e_table.raw_dim(), params).expect("shape preserved");
    Ok(())
}

/// One environment iteration: collect episodes with the current policy into
/// `buffer`, then `updates_per_iteration` rounds of dual → `e` → policy updates.
pub fn semdice_online_iteration<R: Rng + ?Sized>(
    sim: &Simulator,
    learner: &mut LearnerState,
    buffer: &mut TransitionDataset,
    cfg: &SemdiceConfig,
    collection: &CollectionConfig,
    rng: &mut R,
) -> Result<IterationStats> {
    let behavior = learner.policy();
    for _ in 0..collection.episodes_per_iteration {
        buffer.push_episode(&sim.rollout(&behavior, collection.episode_length, rng))?;
    }
    update_from_buffer(learner, buffer, cfg, rng)
}

/// The update block of an iteration on a fixed buffer.
pub fn update_from_buffer<R: Rng + ?Sized>(
    learner: &mut LearnerState,
    buffer: &TransitionDataset,
    cfg: &SemdiceConfig,
    rng: &mut R,
) -> Result<IterationStats> {
    for _ in 0..cfg.updates_per_iteration {
        match cfg.minibatch_size {
            Some(m) => {
                let idx = buffer.sample_indices(m, rng);
                learner.dual_step(buffer, cfg, Batch::Indices(&idx))?;
            }
            None => learner.dual_step(buffer, cfg, Batch::Full)?,
        }
        e_regression_step(learner, buffer, cfg)?;
        i_projection_step(learner, buffer, cfg)?;
    }
    Ok(IterationStats { objective: eval_l_hat(buffer, &learner.dual, cfg, Batch::Full)?, buffer_len: buffer.len() })
}
