use ndarray::{Array1, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use super::FiniteMdp;

/// Discount used by generated MDPs unless overridden with [`FiniteMdp::with_gamma`].
pub const DEFAULT_GAMMA: f64 = 0.95;

fn dirichlet(rng: &mut ChaCha8Rng, gamma: &Gamma<f64>, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = v.iter().sum();
    if total > 0.0 && total.is_finite() {
        v.iter_mut().for_each(|x| *x /= total);
    } else {
        v.iter_mut().for_each(|x| *x = 1.0 / n as f64);
    }
    v
}

/// Random MDP with symmetric Dirichlet(`concentration`) transition rows and initial
/// distribution. Deterministic in `seed`.
pub fn random_mdp(seed: u64, num_states: usize, num_actions: usize, concentration: f64) -> FiniteMdp {
    assert!(num_states >= 1 && num_actions >= 1, "empty state or action space");
    let gamma_dist = Gamma::new(concentration, 1.0).expect("concentration must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Array3::zeros((num_states, num_actions, num_states));
    for s in 0..num_states {
        for a in 0..num_actions {
            let row = dirichlet(&mut rng, &gamma_dist, num_states);
            for (t, p) in row.into_iter().enumerate() {
                transition[[s, a, t]] = p;
            }
        }
    }
    let p0 = Array1::from(dirichlet(&mut rng, &gamma_dist, num_states));
    FiniteMdp::new(transition, p0, DEFAULT_GAMMA).expect("Dirichlet rows are valid distributions")
}

/// Three states, two actions. `s0 -> s1` and `s2 -> s1` under both actions; at `s1`,
/// `a0` leads to `s0` and `a1` leads to `s2`. Starts in `s1` with `gamma = 0.99`.
///
/// Any deterministic choice at `s1` cuts off one of the outer states, so the
/// entropy-maximizing policy must randomize there.
pub fn example_three_state() -> FiniteMdp {
    let mut t = Array3::zeros((3, 2, 3));
    for a in 0..2 {
        t[[0, a, 1]] = 1.0;
        t[[2, a, 1]] = 1.0;
    }
    t[[1, 0, 0]] = 1.0;
    t[[1, 1, 2]] = 1.0;
    FiniteMdp::new(t, ndarray::array![0.0, 1.0, 0.0], 0.99).expect("valid instance")
}

/// `T(s'|s,a) = 1/S` with uniform `p0`.
pub fn symmetric_mdp(num_states: usize, num_actions: usize, gamma: f64) -> FiniteMdp {
    let u = 1.0 / num_states as f64;
    FiniteMdp::new(
        Array3::from_elem((num_states, num_actions, num_states), u),
        Array1::from_elem(num_states, u),
        gamma,
    )
    .expect("valid instance")
}
