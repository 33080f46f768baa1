//! Finite-horizon dual with timestep-indexed multipliers.
//!
//! Maximizes `Σ_{t=0}^{T} H[d̄_t] − α Σ_t D_f(d_t || d^D)` over non-stationary
//! occupancies. With `ν_{T+1} ≡ 0` the dual reads
//!
//! ```text
//! E_{p0}[ν_0] + Σ_t E_{d^D}[α f₊*(e_t/α)] + Σ_t Σ_s exp(−μ_t(s) − 1),
//! e_t(s,a) = μ_t(s) + E_{s'}[ν_{t+1}(s')] − ν_t(s).
//! ```

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::solve::{minimize_flat, SolveOptions};
use super::{compute_w, CorrectionRatios, SemdiceConfig};
use crate::dataset::TransitionDataset;
use crate::error::{Error, Result};
use crate::mdp::{policy_from_occupancy, FiniteMdp, TabularPolicy};

/// Per-timestep multipliers. `nu` has `T + 2` slots; the last is identically zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonDual {
    pub nu: Vec<Array1<f64>>,
    pub mu: Vec<Array1<f64>>,
}

impl HorizonDual {
    pub fn zeros(num_states: usize, horizon: usize) -> Self {
        Self {
            nu: vec![Array1::zeros(num_states); horizon + 2],
            mu: vec![Array1::zeros(num_states); horizon + 1],
        }
    }

    pub fn horizon(&self) -> usize {
        self.mu.len() - 1
    }

    /// `[ν_0..ν_T, μ_0..μ_T]`; the fixed terminal slot is excluded.
    pub fn to_flat(&self) -> Vec<f64> {
        let t = self.horizon();
        self.nu[..=t].iter().chain(self.mu.iter()).flat_map(|v| v.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let t = self.horizon();
        let n = self.mu[0].len();
        assert_eq!(flat.len(), 2 * (t + 1) * n);
        let mut chunks = flat.chunks(n);
        for v in self.nu[..=t].iter_mut().chain(self.mu.iter_mut()) {
            v.assign(&Array1::from(chunks.next().unwrap().to_vec()));
        }
        self.nu[t + 1].fill(0.0);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonSolution {
    pub dual: HorizonDual,
    pub w: Vec<CorrectionRatios>,
    /// `π_t ∝ w_t ⊙ d^D`.
    pub policies: Vec<TabularPolicy>,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn check(mdp: &FiniteMdp, dataset: &TransitionDataset, dual: &HorizonDual) -> Result<Array2<f64>> {
    if dataset.timesteps().is_none() {
        return Err(Error::MissingTimesteps);
    }
    if mdp.num_states() != dataset.num_states() || dual.mu[0].len() != mdp.num_states() {
        return Err(Error::Shape("horizon dual, dataset and MDP dimensions differ".into()));
    }
    dataset.d_sa()
}

fn advantages(mdp: &FiniteMdp, dual: &HorizonDual) -> Vec<Array2<f64>> {
    (0..=dual.horizon())
        .map(|t| {
            let mut e = mdp.expected_next(&dual.nu[t + 1]);
            for (s, mut row) in e.outer_iter_mut().enumerate() {
                row += dual.mu[t][s] - dual.nu[t][s];
            }
            e
        })
        .collect()
}

pub fn eval_horizon_objective(
    mdp: &FiniteMdp,
    dataset: &TransitionDataset,
    dual: &HorizonDual,
    cfg: &SemdiceConfig,
) -> Result<f64> {
    let d = check(mdp, dataset, dual)?;
    let mut value = mdp.p0().dot(&dual.nu[0]);
    for (t, e) in advantages(mdp, dual).iter().enumerate() {
        value += e
            .iter()
            .zip(d.iter())
            .filter(|(_, &w)| w > 0.0)
            .map(|(&e, &w)| w * cfg.alpha * cfg.fdiv.conjugate_plus(e / cfg.alpha))
            .sum::<f64>();
        value += dual.mu[t].iter().map(|m| (-m - 1.0).exp()).sum::<f64>();
    }
    if !value.is_finite() {
        return Err(Error::Overflow("exp(-mu_t - 1)"));
    }
    Ok(value)
}

/// Gradient in the layout of [`HorizonDual::to_flat`].
pub fn grad_horizon_objective(
    mdp: &FiniteMdp,
    dataset: &TransitionDataset,
    dual: &HorizonDual,
    cfg: &SemdiceConfig,
) -> Result<HorizonDual> {
    let d = check(mdp, dataset, dual)?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let horizon = dual.horizon();
    let tr = mdp.transition();
    let mut grad = HorizonDual::zeros(ns, horizon);
    grad.nu[0] += mdp.p0();
    for (t, e) in advantages(mdp, dual).iter().enumerate() {
        for s in 0..ns {
            for a in 0..na {
                if d[[s, a]] == 0.0 {
                    continue;
                }
                let g = d[[s, a]] * cfg.fdiv.conjugate_plus_prime(e[[s, a]] / cfg.alpha);
                grad.mu[t][s] += g;
                grad.nu[t][s] -= g;
                for next in 0..ns {
                    grad.nu[t + 1][next] += g * tr[[s, a, next]];
                }
            }
        }
        grad.mu[t].zip_mut_with(&dual.mu[t], |g, m| *g -= (-m - 1.0).exp());
    }
    grad.nu[horizon + 1].fill(0.0);
    Ok(grad)
}

/// `d̄_0 = p0`, `d̄_{t+1}(s') = Σ_{s,a} d̄_t(s) π_t(a|s) T(s'|s,a)` for `t < policies.len()`.
pub fn horizon_state_distributions(mdp: &FiniteMdp, policies: &[TabularPolicy]) -> Vec<Array1<f64>> {
    let mut out = vec![mdp.p0().clone()];
    for pi in &policies[..policies.len().saturating_sub(1)] {
        let next = out.last().unwrap().dot(&mdp.state_transition(pi));
        out.push(next);
    }
    out
}

/// Minimizes the finite-horizon dual from zero under the true model.
pub fn solve_dual_finite_horizon(
    mdp: &FiniteMdp,
    dataset: &TransitionDataset,
    cfg: &SemdiceConfig,
    horizon: usize,
    opts: &SolveOptions,
) -> Result<HorizonSolution> {
    cfg.validate()?;
    let start = HorizonDual::zeros(mdp.num_states(), horizon);
    check(mdp, dataset, &start)?;
    let mut work = start.clone();
    let (params, objective, grad_norm, iterations, converged) = minimize_flat(start.to_flat(), cfg, opts, |x| {
        work.set_flat(x);
        let g = grad_horizon_objective(mdp, dataset, &work, cfg)?.to_flat();
        Ok((eval_horizon_objective(mdp, dataset, &work, cfg)?, g.clone(), g))
    })?;
    let mut dual = start;
    dual.set_flat(&params);
    let d = dataset.d_sa()?;
    let w: Vec<CorrectionRatios> = advantages(mdp, &dual).iter().map(|e| compute_w(e, cfg.alpha, cfg.fdiv)).collect();
    let policies = w.iter().map(|w| policy_from_occupancy(&w.occupancy(&d))).collect();
    Ok(HorizonSolution { dual, w, policies, objective, grad_norm, iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{random_mdp, Simulator};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn tagged_data(mdp: &FiniteMdp, horizon: usize) -> TransitionDataset {
        let sim = Simulator::new(Arc::new(mdp.clone()));
        let pi = TabularPolicy::uniform(mdp.num_states(), mdp.num_actions());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ds = TransitionDataset::new_tagged(mdp.num_states(), mdp.num_actions());
        for _ in 0..200 {
            ds.push_episode(&sim.rollout(&pi, horizon + 1, &mut rng)).unwrap();
        }
        ds
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mdp = random_mdp(2, 3, 2, 1.0);
        let ds = tagged_data(&mdp, 3);
        let cfg = SemdiceConfig::exact(0.5, 0.95);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut dual = HorizonDual::zeros(3, 3);
        let flat: Vec<f64> = (0..dual.to_flat().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        dual.set_flat(&flat);
        let g = grad_horizon_objective(&mdp, &ds, &dual, &cfg).unwrap().to_flat();
        let h = 1e-6;
        for i in 0..flat.len() {
            let mut x = flat.clone();
            x[i] += h;
            let mut p = dual.clone();
            p.set_flat(&x);
            x[i] -= 2.0 * h;
            let mut m = dual.clone();
            m.set_flat(&x);
            let fd = (eval_horizon_objective(&mdp, &ds, &p, &cfg).unwrap()
                - eval_horizon_objective(&mdp, &ds, &m, &cfg).unwrap())
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn untagged_dataset_is_rejected() {
        let mdp = random_mdp(2, 3, 2, 1.0);
        let mut ds = TransitionDataset::new(3, 2);
        ds.push(0, 0, 1).unwrap();
        let cfg = SemdiceConfig::exact(0.5, 0.95);
        assert!(matches!(
            solve_dual_finite_horizon(&mdp, &ds, &cfg, 2, &SolveOptions::default()),
            Err(Error::MissingTimesteps)
        ));
    }

    #[test]
    fn zero_horizon_recovers_initial_distribution() {
        let mdp = random_mdp(5, 3, 2, 1.0);
        let ds = tagged_data(&mdp, 0);
        let cfg = SemdiceConfig::exact(0.05, 0.95);
        let sol = solve_dual_finite_horizon(&mdp, &ds, &cfg, 0, &SolveOptions { tol: 1e-8, ..Default::default() }).unwrap();
        assert!(sol.converged);
        let d = sol.w[0].occupancy(&ds.d_sa().unwrap());
        for s in 0..3 {
            assert!((d.row(s).sum() - mdp.p0()[s]).abs() < 1e-3);
        }
        assert_eq!(horizon_state_distributions(&mdp, &sol.policies), vec![mdp.p0().clone()]);
    }

    #[test]
    fn terminal_multiplier_stays_zero() {
        let mut dual = HorizonDual::zeros(2, 1);
        dual.set_flat(&[1.0; 8]);
        assert!(dual.nu[2].iter().all(|&x| x == 0.0));
        assert_eq!(dual.to_flat(), vec![1.0; 8]);
    }
}
