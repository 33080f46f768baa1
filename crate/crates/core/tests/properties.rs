//! Property tests for the dual objectives, the dataset and the measurement layer.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use semlab_core::dice::{advantage_exact, compute_w, eval_l, eval_l_tilde, grad_l_tilde};
use semlab_core::harness::bootstrap_ci;
use semlab_core::mdp::{bellman_flow_residual, random_mdp, stationary_distribution};
use semlab_core::stats::normalized_entropy;
use semlab_core::{DualVars, FDivergence, FiniteMdp, SemdiceConfig, Simulator, TabularPolicy, TransitionDataset};

const S: usize = 5;

fn fixture() -> (FiniteMdp, TransitionDataset) {
    let mdp = random_mdp(3, S, 3, 1.0);
    let sim = Simulator::new(Arc::new(mdp.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ds = TransitionDataset::new(S, 3);
    let pi = TabularPolicy::uniform(S, 3);
    for _ in 0..60 {
        ds.push_episode(&sim.rollout(&pi, 40, &mut rng)).unwrap();
    }
    (mdp, ds)
}

fn dual() -> impl Strategy<Value = DualVars> {
    (prop::collection::vec(-3.0..3.0_f64, S), prop::collection::vec(-3.0..3.0_f64, S))
        .prop_map(|(nu, mu)| DualVars { nu: Array1::from(nu), mu: Array1::from(mu), lambda: None })
}

fn fdiv() -> impl Strategy<Value = FDivergence> {
    prop_oneof![Just(FDivergence::SoftChi2), Just(FDivergence::Kl)]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn shift_leaves_l_tilde_and_w_unchanged(d in dual(), c in -5.0..5.0_f64, f in fdiv(), alpha in 0.05..2.0_f64) {
        let (mdp, ds) = fixture();
        let cfg = SemdiceConfig { fdiv: f, ..SemdiceConfig::exact(alpha, mdp.gamma()) };
        let shifted = d.shifted(c, cfg.gamma);
        let a = eval_l_tilde(&mdp, &ds, &d, &cfg).unwrap();
        let b = eval_l_tilde(&mdp, &ds, &shifted, &cfg).unwrap();
        // Round-off grows with the shift magnitude relative to the temperature.
        let tol = 1e-12 * (1.0 + c.abs() / (1.0 - cfg.gamma)) / alpha * a.abs().max(1.0);
        prop_assert!((a - b).abs() < tol, "{a} vs {b}");
        let w0 = compute_w(&advantage_exact(&mdp, &d, &cfg).unwrap(), alpha, f);
        let w1 = compute_w(&advantage_exact(&mdp, &shifted, &cfg).unwrap(), alpha, f);
        for (x, y) in w0.w.iter().zip(w1.w.iter()) {
            prop_assert!((x - y).abs() <= tol * x.abs().max(1.0));
        }
    }

    #[test]
    fn l_tilde_gradient_is_orthogonal_to_the_shift(d in dual()) {
        let (mdp, ds) = fixture();
        let cfg = SemdiceConfig::exact(0.5, mdp.gamma());
        let g = grad_l_tilde(&mdp, &ds, &d, &cfg).unwrap();
        let along = g.nu.sum() / (1.0 - cfg.gamma) + g.mu.sum();
        prop_assert!(along.abs() < 1e-9, "directional derivative {along}");
    }

    #[test]
    fn l_tilde_is_midpoint_convex(a in dual(), b in dual(), f in fdiv()) {
        let (mdp, ds) = fixture();
        let cfg = SemdiceConfig { fdiv: f, ..SemdiceConfig::exact(0.5, mdp.gamma()) };
        let mid = DualVars { nu: (&a.nu + &b.nu) / 2.0, mu: (&a.mu + &b.mu) / 2.0, lambda: None };
        let fa = eval_l_tilde(&mdp, &ds, &a, &cfg).unwrap();
        let fb = eval_l_tilde(&mdp, &ds, &b, &cfg).unwrap();
        let fm = eval_l_tilde(&mdp, &ds, &mid, &cfg).unwrap();
        prop_assert!(fm <= (fa + fb) / 2.0 + 1e-9);
    }

    #[test]
    fn l_dominates_l_tilde_with_equality_on_the_normalized_slice(mut d in dual()) {
        let (mdp, ds) = fixture();
        let cfg = SemdiceConfig::exact(0.5, mdp.gamma());
        prop_assert!(eval_l(&mdp, &ds, &d, &cfg).unwrap() >= eval_l_tilde(&mdp, &ds, &d, &cfg).unwrap() - 1e-12);
        let z: f64 = d.mu.iter().map(|m| (-m).exp()).sum();
        d.mu += z.ln() - 1.0;
        let gap = eval_l(&mdp, &ds, &d, &cfg).unwrap() - eval_l_tilde(&mdp, &ds, &d, &cfg).unwrap();
        prop_assert!(gap.abs() < 1e-9);
    }

    #[test]
    fn ratios_are_nonnegative(e in prop::collection::vec(-20.0..20.0_f64, 12), alpha in 0.01..5.0_f64, f in fdiv()) {
        let w = compute_w(&Array2::from_shape_vec((4, 3), e.clone()).unwrap(), alpha, f);
        for (wi, ei) in w.w.iter().zip(&e) {
            prop_assert!(*wi >= 0.0);
            if f == FDivergence::SoftChi2 && *ei >= 0.0 {
                prop_assert!((wi - (ei / alpha + 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn counts_match_a_recount(steps in prop::collection::vec((0..4usize, 0..2usize, 0..4usize), 1..200)) {
        let mut ds = TransitionDataset::new(4, 2);
        for &(s, a, t) in &steps {
            ds.push(s, a, t).unwrap();
        }
        let (sa, sas, st) = ds.recount();
        prop_assert_eq!(&sa, ds.counts_sa());
        prop_assert_eq!(&sas, ds.counts_sas());
        prop_assert_eq!(&st, ds.counts_s());
        prop_assert_eq!(ds.counts_sa().sum_axis(ndarray::Axis(1)), ds.counts_s().clone());
        let d = ds.d_sa().unwrap();
        prop_assert!((d.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_distributions_are_feasible(seed in 0..1000u64, logits in prop::collection::vec(-4.0..4.0_f64, 12)) {
        let mdp = random_mdp(seed, 4, 3, 0.5);
        let pi = TabularPolicy::softmax(&Array2::from_shape_vec((4, 3), logits).unwrap());
        let occ = stationary_distribution(&mdp, &pi).unwrap();
        prop_assert!((occ.d_bar.sum() - 1.0).abs() < 1e-9);
        prop_assert!(occ.d_bar.iter().all(|&p| p >= 0.0));
        let res = bellman_flow_residual(&mdp, &occ.d).unwrap();
        prop_assert!(res.iter().all(|r| r.abs() < 1e-9));
    }

    #[test]
    fn normalization_is_affine(hu in 0.0..2.0_f64, span in 0.01..1.0_f64, t in -1.0..2.0_f64) {
        let (v, _) = normalized_entropy(hu + t * span, hu, hu + span);
        prop_assert!((v - t).abs() < 1e-9);
    }

    #[test]
    fn bootstrap_interval_contains_the_mean(values in prop::collection::vec(-5.0..5.0_f64, 1..30), seed in 0..100u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mean, lo, hi) = bootstrap_ci(&values, 200, &mut rng);
        prop_assert!(lo <= mean && mean <= hi);
        let direct = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!((mean - direct).abs() < 1e-12);
    }
}
