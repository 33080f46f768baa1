//! Dual objectives for entropy maximization over stationary distributions.
//!
//! The primal maximizes `H[d̄] − α D_f(d || d^D)` subject to Bellman flow and
//! marginalization constraints. Its Lagrange multipliers `ν` (flow) and `μ`
//! (marginalization) turn it into the unconstrained convex minimization
//!
//! ```text
//! L(ν, μ)  = (1−γ) E_{p0}[ν] + E_{d^D}[α f₊*(e/α)] + Σ_s exp(−μ(s) − 1)
//! L̃(ν, μ) = (1−γ) E_{p0}[ν] + E_{d^D}[α f₊*(e/α)] + log Σ_s exp(−μ(s))
//! ```
//!
//! with advantage `e(s,a) = μ(s) + γ E_{s'}[ν(s')] − ν(s)`. The minimizer encodes the
//! optimal occupancy through the correction ratio `w = ((f')^{-1}(e/α))₊ = d/d^D`.

mod horizon;
mod learner;
mod objective;
mod solve;

pub use horizon::{
    eval_horizon_objective, grad_horizon_objective, horizon_state_distributions, solve_dual_finite_horizon,
    HorizonDual, HorizonSolution,
};
pub use learner::{
    e_regression_grad, e_regression_loss, e_regression_step, i_projection_grad, i_projection_objective,
    i_projection_step, semdice_online_iteration, update_from_buffer, CollectionConfig, IterationStats, LearnerState,
};
pub use objective::{
    eval_l, eval_l_hat, eval_l_tilde, grad_l, grad_l_hat, grad_l_tilde, importance_weighted_log_mean_exp, Batch,
};
pub use solve::{solve_dual, solve_dual_undiscounted, DualSolution, SolveMode, SolveOptions};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::TransitionDataset;
use crate::error::{Error, Result};
use crate::fdiv::FDivergence;
use crate::mdp::{FiniteMdp, TabularPolicy};
use crate::optim::OptimizerKind;

/// Lagrange multipliers. `lambda` is the normalization multiplier, present only
/// in the undiscounted (`γ = 1`) formulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualVars {
    pub nu: Array1<f64>,
    pub mu: Array1<f64>,
    pub lambda: Option<f64>,
}

impl DualVars {
    pub fn zeros(num_states: usize, undiscounted: bool) -> Self {
        Self {
            nu: Array1::zeros(num_states),
            mu: Array1::zeros(num_states),
            lambda: undiscounted.then_some(0.0),
        }
    }

    pub fn num_states(&self) -> usize {
        self.nu.len()
    }

    pub fn is_finite(&self) -> bool {
        self.nu.iter().chain(self.mu.iter()).all(|x| x.is_finite())
            && self.lambda.is_none_or(f64::is_finite)
    }

    /// `[ν, μ, λ?]` flattened.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.nu.iter().chain(self.mu.iter()).copied().collect();
        v.extend(self.lambda);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let n = self.num_states();
        assert_eq!(flat.len(), 2 * n + usize::from(self.lambda.is_some()));
        self.nu.iter_mut().zip(&flat[..n]).for_each(|(x, v)| *x = *v);
        self.mu.iter_mut().zip(&flat[n..2 * n]).for_each(|(x, v)| *x = *v);
        if let Some(l) = self.lambda.as_mut() {
            *l = flat[2 * n];
        }
    }

    /// `(ν + c/(1−γ), μ + c)`: the direction along which `L̃` is constant.
    pub fn shifted(&self, c: f64, gamma: f64) -> Self {
        Self {
            nu: &self.nu + c / (1.0 - gamma),
            mu: &self.mu + c,
            lambda: self.lambda,
        }
    }

    fn check(&self, config: &SemdiceConfig) -> Result<()> {
        let undiscounted = config.gamma >= 1.0;
        if self.lambda.is_some() != undiscounted {
            return Err(Error::InvalidArgument(format!(
                "dual {} lambda but gamma = {}",
                if self.lambda.is_some() { "has" } else { "lacks" },
                config.gamma
            )));
        }
        Ok(())
    }
}

/// How the sample objective estimates `E[α f₊*(e/α)]` from the buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// `f₊*` of each per-transition `ê(s, a, s')`; biased upward by Jensen on stochastic transitions.
    Sample,
    /// `f₊*` of the per-`(s, a)` mean of `ê`, i.e. the exact advantage under the buffer's MLE model.
    Tabular,
}

/// Hyperparameters of the dual solvers and the online learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemdiceConfig {
    pub alpha: f64,
    pub gamma: f64,
    #[serde(alias = "fdiv_key")]
    pub fdiv: FDivergence,
    /// Step size for `(ν, μ)`.
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Transitions per stochastic gradient of the `f₊*` term; `None` = full batch.
    pub minibatch_size: Option<usize>,
    pub updates_per_iteration: usize,
    pub e_learning_rate: f64,
    pub policy_learning_rate: f64,
    pub policy_optimizer: OptimizerKind,
    pub estimator: Estimator,
}

impl Default for SemdiceConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gamma: 0.95,
            fdiv: FDivergence::SoftChi2,
            learning_rate: 1e-2,
            optimizer: OptimizerKind::Adam,
            minibatch_size: None,
            updates_per_iteration: 50,
            e_learning_rate: 1e-1,
            policy_learning_rate: 1.0,
            policy_optimizer: OptimizerKind::Sgd,
            estimator: Estimator::Sample,
        }
    }
}

impl SemdiceConfig {
    /// Defaults for full-gradient batch solves.
    pub fn exact(alpha: f64, gamma: f64) -> Self {
        Self {
            alpha,
            gamma,
            learning_rate: 1e-2,
            optimizer: OptimizerKind::Lbfgs,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.learning_rate > 0.0 && self.e_learning_rate > 0.0 && self.policy_learning_rate > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.minibatch_size == Some(0) || self.updates_per_iteration == 0 {
            return Err(Error::Config("minibatch size and updates per iteration must be positive".into()));
        }
        Ok(())
    }

    pub fn undiscounted(&self) -> bool {
        self.gamma >= 1.0
    }
}

/// `w(s,a) = d(s,a) / d^D(s,a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRatios {
    pub w: Array2<f64>,
}

impl CorrectionRatios {
    /// `w ⊙ d^D`, the occupancy the ratios encode.
    pub fn occupancy(&self, d_data: &Array2<f64>) -> Array2<f64> {
        &self.w * d_data
    }
}

/// Exact advantage `e(s,a) = μ(s) + γ Σ_{s'} T(s'|s,a) ν(s') − ν(s) (+ λ)`.
pub fn advantage_exact(mdp: &FiniteMdp, dual: &DualVars, config: &SemdiceConfig) -> Result<Array2<f64>> {
    dual.check(config)?;
    if dual.num_states() != mdp.num_states() {
        return Err(Error::Shape(format!("dual over {} states, MDP over {}", dual.num_states(), mdp.num_states())));
    }
    let mut e = mdp.expected_next(&dual.nu) * config.gamma;
    let lambda = dual.lambda.unwrap_or(0.0);
    for (s, mut row) in e.outer_iter_mut().enumerate() {
        row += dual.mu[s] - dual.nu[s] + lambda;
    }
    Ok(e)
}

/// Single-sample advantage `ê(s,a,s') = μ(s) + γ ν(s') − ν(s) (+ λ)`.
pub fn advantage_sample(dual: &DualVars, s: usize, _a: usize, next: usize, gamma: f64) -> f64 {
    dual.mu[s] + gamma * dual.nu[next] - dual.nu[s] + dual.lambda.unwrap_or(0.0)
}

/// Per-`(s,a)` mean of `ê` over the observed successors (the least-squares fit of
/// `e` to `ê`); zero at unseen pairs.
pub fn advantage_regressed(dataset: &TransitionDataset, dual: &DualVars, gamma: f64) -> Array2<f64> {
    let (ns, na) = (dataset.num_states(), dataset.num_actions());
    let counts = dataset.counts_sas();
    let mut e = Array2::zeros((ns, na));
    for s in 0..ns {
        for a in 0..na {
            let n = dataset.counts_sa()[[s, a]];
            if n == 0 {
                continue;
            }
            let next_mean: f64 =
                (0..ns).map(|t| counts[[s, a, t]] as f64 * dual.nu[t]).sum::<f64>() / n as f64;
            e[[s, a]] = dual.mu[s] + gamma * next_mean - dual.nu[s] + dual.lambda.unwrap_or(0.0);
        }
    }
    e
}

/// `w = max(0, (f')^{-1}(e/α))` element-wise.
pub fn compute_w(e_values: &Array2<f64>, alpha: f64, fdiv: FDivergence) -> CorrectionRatios {
    CorrectionRatios {
        w: e_values.mapv(|e| fdiv.conjugate_plus_prime(e / alpha)),
    }
}

/// `π(a|s) ∝ w(s,a) d^D(s,a)` at visited states, uniform elsewhere.
pub fn extract_policy_exact(w: &CorrectionRatios, dataset: &TransitionDataset) -> Result<TabularPolicy> {
    let d = dataset.d_sa()?;
    Ok(crate::mdp::policy_from_occupancy(&w.occupancy(&d)))
}
