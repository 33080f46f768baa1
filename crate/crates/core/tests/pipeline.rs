//! End-to-end checks of the experiment pipeline on small configurations.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use semlab_core::baselines::mle_transition;
use semlab_core::dice::{eval_l_hat, eval_l_tilde, Batch};
use semlab_core::harness::{aggregate, online_semdice_defaults, read_records, run_experiment, write_outputs, ExperimentConfig};
use semlab_core::mdp::random_mdp;
use semlab_core::stats::MetricRecord;
use semlab_core::{DualVars, Error, Estimator, FiniteMdp, SemdiceConfig, Simulator, TabularPolicy, TransitionDataset};

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(
        r#"
methods = ["semdice", "cb_sa", "uniform"]
seeds = [0, 1]
episodes_per_iter = 5
episode_length = 30
max_episodes = 20
snapshots = true
[mdp]
kind = "random"
states = 6
actions = 2
concentration = 1.0
[semdice]
updates_per_iteration = 20
"#,
    )
    .unwrap()
}

#[test]
fn identical_configs_give_identical_records() {
    let a = run_experiment(&small()).unwrap();
    let b = run_experiment(&small()).unwrap();
    assert!(a.failures.is_empty());
    assert_eq!(a.records, b.records);
    assert_eq!(a.records.len(), 3 * 2 * 4);
}

#[test]
fn outputs_round_trip_through_csv() {
    let summary = run_experiment(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&summary, dir.path()).unwrap();
    let raw = std::fs::read_to_string(dir.path().join("raw.csv")).unwrap();
    assert_eq!(raw.lines().next().unwrap(), MetricRecord::HEADER.join(","));
    let back = read_records(&dir.path().join("raw.csv")).unwrap();
    assert_eq!(back.len(), summary.records.len());
    for (x, y) in back.iter().zip(&summary.records) {
        assert_eq!((&x.method, x.seed, x.iteration), (&y.method, y.seed, y.iteration));
        assert_eq!(x.policy_entropy, y.policy_entropy);
    }
    let agg = std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    assert!(agg.starts_with("method,iteration,episodes,num_seeds,policy_entropy_mean"));
    // One row per (method, iteration), both seeds pooled.
    assert_eq!(agg.lines().count(), 1 + 3 * 4);
    assert!(agg.lines().nth(1).unwrap().contains(",2,"));
    let snap = dir.path().join("snapshots").join("semdice_seed0.json");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(snap).unwrap()).unwrap();
    assert!(!json["4"]["dual"]["nu"].is_null());
    assert!(json["4"]["policy"].is_object());
}

#[test]
fn aggregate_rejects_a_foreign_schema() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "method,seed,iteration,reward\nx,0,1,2.0\n").unwrap();
    match aggregate(&[bad.as_path()], &dir.path().join("out.csv"), 0) {
        Err(Error::Schema(cols)) => {
            assert!(cols.contains(&"reward".to_string()));
            assert!(cols.iter().any(|c| c == "missing:policy_entropy"));
        }
        other => panic!("expected a schema error, got {other:?}"),
    }
}

#[test]
fn partial_semdice_table_keeps_online_defaults() {
    let cfg = ExperimentConfig::from_toml_str("[semdice]\nalpha = 0.3\n").unwrap();
    let defaults = online_semdice_defaults();
    assert_eq!(cfg.semdice.alpha, 0.3);
    assert_eq!(cfg.semdice.learning_rate, defaults.learning_rate);
    assert_eq!(cfg.semdice.updates_per_iteration, defaults.updates_per_iteration);
    assert_eq!(cfg.semdice.estimator, Estimator::Tabular);
    assert!(ExperimentConfig::from_toml_str("[semdice]\nalhpa = 0.3\n").is_err());
}

#[test]
fn uniform_method_normalizes_to_zero() {
    let summary = run_experiment(&small()).unwrap();
    for r in summary.method_records("uniform") {
        assert!(r.normalized_policy_entropy.abs() < 1e-9, "{r:?}");
    }
}

#[test]
fn tabular_estimator_matches_l_tilde_on_the_fitted_model() {
    let mdp = random_mdp(11, 4, 2, 1.0);
    let sim = Simulator::new(Arc::new(mdp.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ds = TransitionDataset::new(4, 2);
    for _ in 0..50 {
        ds.push_episode(&sim.rollout(&TabularPolicy::uniform(4, 2), 30, &mut rng)).unwrap();
    }
    assert!(ds.counts_sa().iter().all(|&c| c > 0));
    let model = FiniteMdp::new(mle_transition(&ds), ds.initial_distribution().unwrap(), mdp.gamma()).unwrap();
    let dual = DualVars {
        nu: ndarray::array![0.3, -1.2, 0.8, 0.1],
        mu: ndarray::array![-0.4, 0.5, 0.0, 1.1],
        lambda: None,
    };
    for alpha in [0.05, 1.0] {
        let exact = SemdiceConfig::exact(alpha, mdp.gamma());
        let tabular = SemdiceConfig { estimator: Estimator::Tabular, ..exact.clone() };
        let a = eval_l_tilde(&model, &ds, &dual, &exact).unwrap();
        let b = eval_l_hat(&ds, &dual, &tabular, Batch::Full).unwrap();
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "alpha {alpha}: {a} vs {b}");
    }
}
