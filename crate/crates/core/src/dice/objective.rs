//! Objective values and analytic gradients of `L`, `L̃` and the sample-based `L̂`.

use ndarray::{Array1, Array2};

use super::{advantage_exact, advantage_regressed, advantage_sample, DualVars, Estimator, SemdiceConfig};
use crate::dataset::TransitionDataset;
use crate::error::{Error, Result};
use crate::mdp::FiniteMdp;

/// Transitions entering the `f₊*` term of `L̂`.
#[derive(Clone, Copy, Debug)]
pub enum Batch<'a> {
    /// Every transition, evaluated through the count table.
    Full,
    /// Indices into `dataset.transitions()`, repeats allowed.
    Indices(&'a [usize]),
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `softmax(−μ)` restricted to `mask`; zero off the mask.
fn softmax_neg(mu: &Array1<f64>, mask: impl Fn(usize) -> bool) -> Array1<f64> {
    let m = (0..mu.len()).filter(|&s| mask(s)).map(|s| -mu[s]).fold(f64::NEG_INFINITY, f64::max);
    let mut p = Array1::from_shape_fn(mu.len(), |s| if mask(s) { (-mu[s] - m).exp() } else { 0.0 });
    let z = p.sum();
    p /= z;
    p
}

fn initial_term(nu: &Array1<f64>, p0: &Array1<f64>, gamma: f64) -> f64 {
    if gamma >= 1.0 {
        0.0
    } else {
        (1.0 - gamma) * p0.dot(nu)
    }
}

fn check_shapes(mdp: &FiniteMdp, dataset: &TransitionDataset, dual: &DualVars) -> Result<()> {
    if mdp.num_states() != dataset.num_states() || mdp.num_actions() != dataset.num_actions() {
        return Err(Error::Shape("dataset and MDP dimensions differ".into()));
    }
    if dual.num_states() != mdp.num_states() {
        return Err(Error::Shape("dual and MDP dimensions differ".into()));
    }
    Ok(())
}

/// `(1−γ) E_{p0}[ν] + E_{d^D}[α f₊*(e/α)]`, shared by `L` and `L̃`.
fn exact_common(mdp: &FiniteMdp, dataset: &TransitionDataset, dual: &DualVars, cfg: &SemdiceConfig) -> Result<f64> {
    check_shapes(mdp, dataset, dual)?;
    let e = advantage_exact(mdp, dual, cfg)?;
    let d = dataset.d_sa()?;
    let f_term: f64 = e
        .iter()
        .zip(d.iter())
        .filter(|(_, &w)| w > 0.0)
        .map(|(&e, &w)| w * cfg.alpha * cfg.fdiv.conjugate_plus(e / cfg.alpha))
        .sum();
    Ok(initial_term(&dual.nu, mdp.p0(), cfg.gamma) + f_term - dual.lambda.unwrap_or(0.0))
}

/// `L(ν, μ)` with the `Σ_s exp(−μ(s) − 1)` normalization term.
pub fn eval_l(mdp: &FiniteMdp, dataset: &TransitionDataset, dual: &DualVars, cfg: &SemdiceConfig) -> Result<f64> {
    let common = exact_common(mdp, dataset, dual, cfg)?;
    let norm: f64 = dual.mu.iter().map(|m| (-m - 1.0).exp()).sum();
    let value = common + norm;
    if !value.is_finite() {
        return Err(Error::Overflow("exp(-mu - 1)"));
    }
    Ok(value)
}

/// `L̃(ν, μ)` with the `log Σ_s exp(−μ(s))` normalization term.
pub fn eval_l_tilde(
    mdp: &FiniteMdp,
    dataset: &TransitionDataset,
    dual: &DualVars,
    cfg: &SemdiceConfig,
) -> Result<f64> {
    let common = exact_common(mdp, dataset, dual, cfg)?;
    Ok(common + log_sum_exp(dual.mu.iter().map(|m| -m)))
}

/// Monte-Carlo form of the normalization term: `log mean_i exp(−μ(s_i) − log d̄^D(s_i))`
/// for states drawn from `d̄^D`.
pub fn importance_weighted_log_mean_exp(dataset: &TransitionDataset, mu: &Array1<f64>, states: &[usize]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = dataset.d_s()?;
    if let Some(&s) = states.iter().find(|&&s| d[s] == 0.0) {
        return Err(Error::ZeroCount(s));
    }
    let lme = log_sum_exp(states.iter().map(|&s| -mu[s] - d[s].ln()));
    Ok(lme - (states.len() as f64).ln())
}

/// `log Σ_{s : N(s) > 0} exp(−μ(s))`, the full-batch value of the term above.
fn visited_log_sum_exp(dataset: &TransitionDataset, mu: &Array1<f64>) -> f64 {
    let counts = dataset.counts_s();
    log_sum_exp((0..mu.len()).filter(|&s| counts[s] > 0).map(|s| -mu[s]))
}

fn check_sample(dataset: &TransitionDataset, dual: &DualVars, cfg: &SemdiceConfig) -> Result<()> {
    dual.check(cfg)?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dual.num_states() != dataset.num_states() {
        return Err(Error::Shape("dual and dataset dimensions differ".into()));
    }
    if cfg.gamma < 1.0 && dataset.initial_states().is_empty() {
        return Err(Error::InvalidArgument("dataset has no initial states".into()));
    }
    Ok(())
}

/// Visits `(s, a, s', weight)` for the transitions in `batch`; weights sum to 1.
fn for_each_transition(dataset: &TransitionDataset, batch: Batch<'_>, mut visit: impl FnMut(usize, usize, usize, f64)) {
    match batch {
        Batch::Full => {
            let n = dataset.len() as f64;
            for ((s, a, t), &c) in dataset.counts_sas().indexed_iter() {
                if c > 0 {
                    visit(s, a, t, c as f64 / n);
                }
            }
        }
        Batch::Indices(idx) => {
            let weight = 1.0 / idx.len() as f64;
            let tr = dataset.transitions();
            for &i in idx {
                let (s, a, t) = tr[i];
                visit(s, a, t, weight);
            }
        }
    }
}

/// Visits `(s, a, weight)` for the pairs in `batch`; weights sum to 1.
fn for_each_pair(dataset: &TransitionDataset, batch: Batch<'_>, mut visit: impl FnMut(usize, usize, f64)) {
    match batch {
        Batch::Full => {
            let n = dataset.len() as f64;
            for ((s, a), &c) in dataset.counts_sa().indexed_iter() {
                if c > 0 {
                    visit(s, a, c as f64 / n);
                }
            }
        }
        Batch::Indices(idx) => {
            let weight = 1.0 / idx.len() as f64;
            let tr = dataset.transitions();
            for &i in idx {
                let (s, a, _) = tr[i];
                visit(s, a, weight);
            }
        }
    }
}

/// `L̂(ν, μ)` from samples: mean of `ν` over initial states, mean of `α f₊*(ê/α)`
/// over `batch`, and the full-batch log-mean-exp normalization term.
pub fn eval_l_hat(dataset: &TransitionDataset, dual: &DualVars, cfg: &SemdiceConfig, batch: Batch<'_>) -> Result<f64> {
    check_sample(dataset, dual, cfg)?;
    if let Batch::Indices(idx) = batch {
        if idx.is_empty() {
            return Err(Error::InvalidArgument("empty minibatch".into()));
        }
    }
    let init = if cfg.gamma < 1.0 {
        initial_term(&dual.nu, &dataset.initial_distribution()?, cfg.gamma)
    } else {
        0.0
    };
    let mut f_term = 0.0;
    match cfg.estimator {
        Estimator::Sample => for_each_transition(dataset, batch, |s, a, t, w| {
            let e = advantage_sample(dual, s, a, t, cfg.gamma);
            f_term += w * cfg.alpha * cfg.fdiv.conjugate_plus(e / cfg.alpha);
        }),
        Estimator::Tabular => {
            let e = advantage_regressed(dataset, dual, cfg.gamma);
            for_each_pair(dataset, batch, |s, a, w| {
                f_term += w * cfg.alpha * cfg.fdiv.conjugate_plus(e[[s, a]] / cfg.alpha);
            });
        }
    }
    Ok(init + f_term + visited_log_sum_exp(dataset, &dual.mu) - dual.lambda.unwrap_or(0.0))
}

/// Gradient of the exact `f₊*` and initial terms, plus `λ`'s `−1`.
fn exact_common_grad(
    mdp: &FiniteMdp,
    dataset: &TransitionDataset,
    dual: &DualVars,
    cfg: &SemdiceConfig,
) -> Result<DualVars> {
    check_shapes(mdp, dataset, dual)?;
    let e = advantage_exact(mdp, dual, cfg)?;
    let d = dataset.d_sa()?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let t = mdp.transition();
    // g(s,a) = d^D(s,a) (f₊*)'(e/α) = ∂/∂e of the f-term.
    let g: Array2<f64> = Array2::from_shape_fn((ns, na), |(s, a)| {
        if d[[s, a]] > 0.0 {
            d[[s, a]] * cfg.fdiv.conjugate_plus_prime(e[[s, a]] / cfg.alpha)
        } else {
            0.0
        }
    });
    let mut grad = DualVars::zeros(ns, dual.lambda.is_some());
    if cfg.gamma < 1.0 {
        grad.nu.scaled_add(1.0 - cfg.gamma, mdp.p0());
    }
    for s in 0..ns {
        for a in 0..na {
            let gsa = g[[s, a]];
            if gsa == 0.0 {
                continue;
            }
            grad.mu[s] += gsa;
            grad.nu[s] -= gsa;
            for next in 0..ns {
                grad.nu[next] += cfg.gamma * gsa * t[[s, a, next]];
            }
        }
    }
    if let Some(l) = grad.lambda.as_mut() {
        *l = g.sum() - 1.0;
    }
    Ok(grad)
}

/// `∇L`.
pub fn grad_l(mdp: &FiniteMdp, dataset: &TransitionDataset, dual: &DualVars, cfg: &SemdiceConfig) -> Result<DualVars> {
    let mut grad = exact_common_grad(mdp, dataset, dual, cfg)?;
    grad.mu.zip_mut_with(&dual.mu, |g, m| *g -= (-m - 1.0).exp());
    if !grad.is_finite() {
        return Err(Error::Overflow("exp(-mu - 1)"));
    }
    Ok(grad)
}

/// `∇L̃`.
pub fn grad_l_tilde(
    mdp: &FiniteMdp,
    dataset: &TransitionDataset,
    dual: &DualVars,
    cfg: &SemdiceConfig,
) -> Result<DualVars> {
    let mut grad = exact_common_grad(mdp, dataset, dual, cfg)?;
    grad.mu -= &softmax_neg(&dual.mu, |_| true);
    Ok(grad)
}

/// `∇L̂` on `batch`; the normalization term is always full batch.
pub fn grad_l_hat(
    dataset: &TransitionDataset,
    dual: &DualVars,
    cfg: &SemdiceConfig,
    batch: Batch<'_>,
) -> Result<DualVars> {
    check_sample(dataset, dual, cfg)?;
    let ns = dataset.num_states();
    let mut grad = DualVars::zeros(ns, dual.lambda.is_some());
    if cfg.gamma < 1.0 {
        grad.nu.scaled_add(1.0 - cfg.gamma, &dataset.initial_distribution()?);
    }
    let mut g_total = 0.0;
    match cfg.estimator {
        Estimator::Sample => for_each_transition(dataset, batch, |s, a, t, w| {
            let e = advantage_sample(dual, s, a, t, cfg.gamma);
            let g = w * cfg.fdiv.conjugate_plus_prime(e / cfg.alpha);
            grad.mu[s] += g;
            grad.nu[s] -= g;
            grad.nu[t] += cfg.gamma * g;
            g_total += g;
        }),
        Estimator::Tabular => {
            let e = advantage_regressed(dataset, dual, cfg.gamma);
            let mut g_sa = Array2::<f64>::zeros(e.raw_dim());
            for_each_pair(dataset, batch, |s, a, w| g_sa[[s, a]] += w * cfg.fdiv.conjugate_plus_prime(e[[s, a]] / cfg.alpha));
            let (n_sa, n_sas) = (dataset.counts_sa(), dataset.counts_sas());
            for ((s, a), &g) in g_sa.indexed_iter() {
                if g == 0.0 {
                    continue;
                }
                grad.mu[s] += g;
                grad.nu[s] -= g;
                let n = n_sa[[s, a]] as f64;
                for (t, &c) in n_sas.slice(ndarray::s![s, a, ..]).indexed_iter() {
                    if c > 0 {
                        grad.nu[t] += cfg.gamma * g * c as f64 / n;
                    }
                }
                g_total += g;
            }
        }
    }
    let counts = dataset.counts_s();
    grad.mu -= &softmax_neg(&dual.mu, |s| counts[s] > 0);
    if let Some(l) = grad.lambda.as_mut() {
        *l = g_total - 1.0;
    }
    Ok(grad)
}
