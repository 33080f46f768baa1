//! Batch minimization of the dual objectives.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{eval_l, eval_l_hat, eval_l_tilde, grad_l, grad_l_hat, grad_l_tilde, Batch};
use super::{advantage_exact, advantage_regressed, compute_w, CorrectionRatios, DualVars, SemdiceConfig};
use crate::dataset::TransitionDataset;
use crate::error::{Error, Result};
use crate::mdp::FiniteMdp;
use crate::optim::{lbfgs_minimize, Optimizer, OptimizerKind};

/// Consecutive objective increases that count as divergence.
const DIVERGENCE_WINDOW: usize = 100;
/// Steps without a new best objective before the step size is halved.
const PLATEAU_PATIENCE: usize = 1000;
const MIN_LR_FRACTION: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    /// Full gradients of `L̃` under the true transition model.
    ExactLTilde,
    /// (Mini-batch) gradients of `L̂` from the dataset alone.
    SampleLHat,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub mode: SolveMode,
    pub max_iters: usize,
    /// Stop once the full-batch gradient max-norm falls below this.
    pub tol: f64,
    /// Seeds minibatch sampling.
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { mode: SolveMode::ExactLTilde, max_iters: 200_000, tol: 1e-7, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub dual: DualVars,
    pub w: CorrectionRatios,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// First-order minimization stopping on a small gradient.
///
/// `eval` returns `(objective, step gradient, full gradient)`; the last decides
/// convergence. Stepwise rules halve their step on plateaus; L-BFGS uses only the
/// full gradient. Returns `(params, objective, grad max-norm, iterations, converged)`.
pub(super) fn minimize_flat(
    mut params: Vec<f64>,
    cfg: &SemdiceConfig,
    opts: &SolveOptions,
    mut eval: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)>,
) -> Result<(Vec<f64>, f64, f64, usize, bool)> {
    if cfg.optimizer == OptimizerKind::Lbfgs {
        let out = lbfgs_minimize(params, |x| eval(x).map(|(v, _, g)| (v, g)), opts.max_iters, opts.tol, 10)?;
        return Ok((out.x, out.value, out.grad_norm, out.iterations, out.converged));
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, params.len())?;
    let min_lr = cfg.learning_rate * MIN_LR_FRACTION;
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut prev = f64::INFINITY;
    let mut rising = 0;
    let mut trace = Vec::with_capacity(DIVERGENCE_WINDOW);
    for it in 0..opts.max_iters {
        let (value, step_grad, full_grad) = eval(&params)?;
        let gnorm = max_norm(&full_grad);
        if !value.is_finite() || !gnorm.is_finite() {
            trace.push(value);
            return Err(Error::Divergence { iterations: it, trace });
        }
        if gnorm < opts.tol {
            return Ok((params, value, gnorm, it, true));
        }
        rising = if value > prev { rising + 1 } else { 0 };
        if trace.len() == DIVERGENCE_WINDOW {
            trace.remove(0);
        }
        trace.push(value);
        if rising >= DIVERGENCE_WINDOW {
            return Err(Error::Divergence { iterations: it, trace });
        }
        prev = value;
        if value < best - 1e-15 * best.abs() {
            best = value;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= PLATEAU_PATIENCE && opt.lr() > min_lr {
                opt.set_lr((opt.lr() * 0.5).max(min_lr));
                since_best = 0;
            }
        }
        opt.step(&mut params, &step_grad);
    }
    let (value, _, full_grad) = eval(&params)?;
    let gnorm = max_norm(&full_grad);
    Ok((params, value, gnorm, opts.max_iters, false))
}

fn minimize(
    start: DualVars,
    cfg: &SemdiceConfig,
    opts: &SolveOptions,
    mut eval: impl FnMut(&DualVars) -> Result<(f64, DualVars, DualVars)>,
) -> Result<(DualVars, f64, f64, usize, bool)> {
    let mut dual = start.clone();
    let (params, value, gnorm, it, conv) = minimize_flat(start.to_flat(), cfg, opts, |x| {
        dual.set_flat(x);
        let (v, g, full) = eval(&dual)?;
        Ok((v, g.to_flat(), full.to_flat()))
    })?;
    let mut out = start;
    out.set_flat(&params);
    Ok((out, value, gnorm, it, conv))
}

/// Minimizes `L̃` (exact mode, needs `mdp`) or `L̂` (sample mode) from zero duals.
///
/// Exact mode returns `w` from the exact advantage; sample mode from the
/// least-squares fit of `e` to the sampled advantages.
pub fn solve_dual(
    mdp: Option<&FiniteMdp>,
    dataset: &TransitionDataset,
    cfg: &SemdiceConfig,
    opts: &SolveOptions,
) -> Result<DualSolution> {
    cfg.validate()?;
    if cfg.undiscounted() {
        return Err(Error::InvalidArgument("use solve_dual_undiscounted when gamma = 1".into()));
    }
    let start = DualVars::zeros(dataset.num_states(), false);
    match opts.mode {
        SolveMode::ExactLTilde => {
            let mdp = mdp.ok_or_else(|| Error::InvalidArgument("exact mode needs the MDP".into()))?;
            let (dual, objective, grad_norm, iterations, converged) = minimize(start, cfg, opts, |d| {
                let g = grad_l_tilde(mdp, dataset, d, cfg)?;
                Ok((eval_l_tilde(mdp, dataset, d, cfg)?, g.clone(), g))
            })?;
            let w = compute_w(&advantage_exact(mdp, &dual, cfg)?, cfg.alpha, cfg.fdiv);
            Ok(DualSolution { dual, w, objective, grad_norm, iterations, converged })
        }
        SolveMode::SampleLHat => {
            if cfg.minibatch_size.is_some() && cfg.optimizer == OptimizerKind::Lbfgs {
                return Err(Error::Config("minibatch solves need a stepwise optimizer".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let (dual, objective, grad_norm, iterations, converged) = minimize(start, cfg, opts, |d| {
                let full = grad_l_hat(dataset, d, cfg, Batch::Full)?;
                let step = match cfg.minibatch_size {
                    Some(m) => grad_l_hat(dataset, d, cfg, Batch::Indices(&dataset.sample_indices(m, &mut rng)))?,
                    None => full.clone(),
                };
                Ok((eval_l_hat(dataset, d, cfg, Batch::Full)?, step, full))
            })?;
            let w = compute_w(&advantage_regressed(dataset, &dual, cfg.gamma), cfg.alpha, cfg.fdiv);
            Ok(DualSolution { dual, w, objective, grad_norm, iterations, converged })
        }
    }
}

/// Minimizes the average-reward dual `L − λ` (with `λ` inside the advantage)
/// under the true model. The resulting `w ⊙ d^D` is a stationary distribution
/// summing to one.
pub fn solve_dual_undiscounted(
    mdp: &FiniteMdp,
    dataset: &TransitionDataset,
    cfg: &SemdiceConfig,
    opts: &SolveOptions,
) -> Result<DualSolution> {
    cfg.validate()?;
    if !cfg.undiscounted() {
        return Err(Error::InvalidArgument("undiscounted solve needs gamma = 1".into()));
    }
    let start = DualVars::zeros(dataset.num_states(), true);
    let (dual, objective, grad_norm, iterations, converged) = minimize(start, cfg, opts, |d| {
        let g = grad_l(mdp, dataset, d, cfg)?;
        Ok((eval_l(mdp, dataset, d, cfg)?, g.clone(), g))
    })?;
    let w = compute_w(&advantage_exact(mdp, &dual, cfg)?, cfg.alpha, cfg.fdiv);
    Ok(DualSolution { dual, w, objective, grad_norm, iterations, converged })
}
