//! First-order update rules over flat parameter slices.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
    /// Limited-memory quasi-Newton with backtracking; batch solves only.
    Lbfgs,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            "lbfgs" => Ok(Self::Lbfgs),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// Per-parameter-vector optimizer state.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: u64,
        m: Vec<f64>,
        v: Vec<f64>,
    },
    Sgd {
        lr: f64,
    },
}

impl Optimizer {
    /// Stepwise rule for `kind`; L-BFGS has no stepwise form.
    pub fn new(kind: OptimizerKind, lr: f64, len: usize) -> Result<Self, Error> {
        match kind {
            OptimizerKind::Adam => Ok(Self::adam(lr, len)),
            OptimizerKind::Sgd => Ok(Self::Sgd { lr }),
            OptimizerKind::Lbfgs => Err(Error::Config("lbfgs is only available for batch solves".into())),
        }
    }

    /// Adam with `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn adam(lr: f64, len: usize) -> Self {
        Self::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            Self::Adam { lr, .. } | Self::Sgd { lr } => *lr,
        }
    }

    pub fn set_lr(&mut self, new_lr: f64) {
        match self {
            Self::Adam { lr, .. } | Self::Sgd { lr } => *lr = new_lr,
        }
    }

    /// One descent step `params -= update(grad)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len(), "parameter/gradient length mismatch");
        match self {
            Self::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            Self::Adam { lr, beta1, beta2, eps, t, m, v } => {
                assert_eq!(m.len(), params.len(), "optimizer sized for another parameter vector");
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                for i in 0..params.len() {
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * grad[i];
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * grad[i] * grad[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    params[i] -= *lr * m_hat / (v_hat.sqrt() + *eps);
                }
            }
        }
    }
}

/// Outcome of [`lbfgs_minimize`].
#[derive(Clone, Debug)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

const STALL_LIMIT: usize = 50;

/// L-BFGS with Armijo backtracking until the gradient max-norm drops below `tol`.
///
/// `f` returns the value and gradient. Non-finite trial values shrink the step.
/// Gives up unconverged after 50 consecutive round-off-level decreases.
pub fn lbfgs_minimize(
    mut x: Vec<f64>,
    mut f: impl FnMut(&[f64]) -> crate::error::Result<(f64, Vec<f64>)>,
    max_iters: usize,
    tol: f64,
    memory: usize,
) -> crate::error::Result<LbfgsOutcome> {
    let (mut value, mut grad) = f(&x)?;
    let mut history: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = std::collections::VecDeque::new();
    let mut stalled = 0;
    for it in 0..max_iters {
        let gnorm = max_abs(&grad);
        if gnorm < tol {
            return Ok(LbfgsOutcome { x, value, grad_norm: gnorm, iterations: it, converged: true });
        }
        // Two-loop recursion for d = −H g.
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let scale = history.back().map_or(1.0 / max_abs(&grad).max(1.0), |(s, y, _)| dot(s, y) / dot(y, y));
        q.iter_mut().for_each(|qi| *qi *= scale);
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&dir, &grad);
        if !(slope < 0.0) {
            history.clear();
            dir = grad.iter().map(|g| -g / max_abs(&grad)).collect();
            slope = dot(&dir, &grad);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            if let Ok((v, g)) = f(&trial) {
                if v.is_finite() && v <= value + 1e-4 * step * slope {
                    accepted = Some((trial, v, g));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, v_new, g_new)) = accepted else {
            // No decrease representable along the direction: as converged as f allows.
            return Ok(LbfgsOutcome { x, value, grad_norm: gnorm, iterations: it, converged: false });
        };
        // Decreases at round-off level: the gradient floor of `f` has been reached.
        stalled = if value - v_new <= 4.0 * f64::EPSILON * value.abs().max(1.0) { stalled + 1 } else { 0 };
        if stalled == STALL_LIMIT {
            return Ok(LbfgsOutcome { x: x_new, value: v_new, grad_norm: max_abs(&g_new), iterations: it + 1, converged: false });
        }
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 {
            if history.len() == memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        value = v_new;
        grad = g_new;
    }
    let gnorm = max_abs(&grad);
    Ok(LbfgsOutcome { x, value, grad_norm: gnorm, iterations: max_iters, converged: gnorm < tol })
}
