use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, Extraction, Method};
use crate::baselines::{pg_update, PgConfig, PgLearner, QConfig, QLearner};
use crate::dataset::TransitionDataset;
use crate::dice::{extract_policy_exact, update_from_buffer, CollectionConfig, CorrectionRatios, DualVars, LearnerState, SemdiceConfig};
use crate::error::Result;
use crate::mdp::{state_entropy, stationary_distribution, FiniteMdp, Simulator, TabularPolicy};
use crate::oracle::{frank_wolfe_sem, MaxEntLearner, ModelSource};
use crate::stats::{normalized_entropy, MetricRecord};

/// A method as seen by the harness: it proposes a behavior policy, learns from
/// the buffer, and exposes a target policy. Learners never see the true model.
pub trait Learner {
    fn behavior(&self) -> TabularPolicy;
    /// Learns from `buffer` after new episodes were appended; returns the method's objective.
    fn update(&mut self, buffer: &TransitionDataset, rng: &mut ChaCha8Rng) -> Result<Option<f64>>;
    fn target(&self, buffer: &TransitionDataset) -> Result<TabularPolicy>;
    /// JSON-ready state for snapshots, if the method has any.
    fn snapshot(&self) -> Option<serde_json::Value> {
        None
    }
}

struct SemdiceLearner {
    state: LearnerState,
    config: SemdiceConfig,
    extraction: Extraction,
}

#[derive(Serialize)]
struct SemdiceSnapshot<'a> {
    dual: &'a DualVars,
    w: CorrectionRatios,
    policy: TabularPolicy,
}

impl Learner for SemdiceLearner {
    fn behavior(&self) -> TabularPolicy {
        self.state.policy()
    }

    fn update(&mut self, buffer: &TransitionDataset, rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
        Ok(Some(update_from_buffer(&mut self.state, buffer, &self.config, rng)?.objective))
    }

    fn target(&self, buffer: &TransitionDataset) -> Result<TabularPolicy> {
        match self.extraction {
            Extraction::Softmax => Ok(self.state.policy()),
            Extraction::Exact => extract_policy_exact(&self.state.correction_ratios(&self.config), buffer),
        }
    }

    fn snapshot(&self) -> Option<serde_json::Value> {
        serde_json::to_value(SemdiceSnapshot {
            dual: &self.state.dual,
            w: self.state.correction_ratios(&self.config),
            policy: self.state.policy(),
        })
        .ok()
    }
}

impl Learner for PgLearner {
    fn behavior(&self) -> TabularPolicy {
        self.policy()
    }

    fn update(&mut self, buffer: &TransitionDataset, _: &mut ChaCha8Rng) -> Result<Option<f64>> {
        pg_update(self, buffer).map(Some)
    }

    fn target(&self, _: &TransitionDataset) -> Result<TabularPolicy> {
        Ok(self.policy())
    }
}

impl Learner for QLearner {
    fn behavior(&self) -> TabularPolicy {
        QLearner::behavior(self)
    }

    fn update(&mut self, buffer: &TransitionDataset, _: &mut ChaCha8Rng) -> Result<Option<f64>> {
        QLearner::update(self, buffer);
        Ok(None)
    }

    fn target(&self, _: &TransitionDataset) -> Result<TabularPolicy> {
        Ok(self.policy())
    }
}

impl Learner for MaxEntLearner {
    fn behavior(&self) -> TabularPolicy {
        self.policy().clone()
    }

    fn update(&mut self, buffer: &TransitionDataset, _: &mut ChaCha8Rng) -> Result<Option<f64>> {
        self.plan(buffer)?;
        Ok(None)
    }

    fn target(&self, _: &TransitionDataset) -> Result<TabularPolicy> {
        Ok(self.policy().clone())
    }
}

struct UniformLearner(TabularPolicy);

impl Learner for UniformLearner {
    fn behavior(&self) -> TabularPolicy {
        self.0.clone()
    }

    fn update(&mut self, _: &TransitionDataset, _: &mut ChaCha8Rng) -> Result<Option<f64>> {
        Ok(None)
    }

    fn target(&self, _: &TransitionDataset) -> Result<TabularPolicy> {
        Ok(self.0.clone())
    }
}

fn make_learner(method: Method, ns: usize, na: usize, cfg: &ExperimentConfig, semdice: &SemdiceConfig) -> Result<Box<dyn Learner>> {
    Ok(match method {
        Method::Semdice => Box::new(SemdiceLearner {
            state: LearnerState::new(ns, na, semdice)?,
            config: semdice.clone(),
            extraction: cfg.extraction,
        }),
        Method::Pg(reward) => {
            Box::new(PgLearner::new(ns, na, PgConfig { reward, learning_rate: cfg.pg.learning_rate, gamma: cfg.gamma }))
        }
        Method::Q(mode, reward) => {
            Box::new(QLearner::new(ns, na, QConfig { reward, mode, learning_rate: cfg.q.learning_rate, gamma: cfg.gamma }))
        }
        Method::MaxEnt => Box::new(MaxEntLearner::new(ns, na, ModelSource::Mle { gamma: cfg.gamma }, 1e-6)),
        Method::Uniform => Box::new(UniformLearner(TabularPolicy::uniform(ns, na))),
    })
}

/// Who collects the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Collector {
    /// Each learner's own behavior policy.
    Learner,
    /// A frozen uniform policy for every method.
    Uniform,
}

/// Reference entropies of one (seed, MDP) pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Reference {
    pub h_uniform: f64,
    pub h_star: f64,
    pub oracle_gap: f64,
}

pub fn reference_entropies(mdp: &FiniteMdp, cfg: &ExperimentConfig) -> Result<Reference> {
    let n = mdp.num_states();
    let h_uniform = stationary_distribution(mdp, &TabularPolicy::uniform(n, mdp.num_actions()))?.state_entropy();
    let oracle = frank_wolfe_sem(mdp, &cfg.oracle)?;
    Ok(Reference { h_uniform, h_star: oracle.entropy_star, oracle_gap: oracle.gap })
}

/// A failed (method, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunFailure {
    pub method: String,
    pub seed: u64,
    pub error: String,
    pub numerical: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunSummary {
    /// Sorted by (method order, seed, iteration).
    pub records: Vec<MetricRecord>,
    pub failures: Vec<RunFailure>,
    pub references: BTreeMap<u64, Reference>,
    /// `(method, seed) → [(iteration, snapshot)]`.
    #[serde(skip)]
    pub snapshots: BTreeMap<(String, u64), Vec<(usize, serde_json::Value)>>,
}

impl RunSummary {
    pub fn method_records<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a MetricRecord> + 'a {
        self.records.iter().filter(move |r| r.method == method)
    }

    /// Final-iteration records of `method`, one per seed.
    pub fn final_records<'a>(&'a self, method: &'a str) -> Vec<&'a MetricRecord> {
        let last = self.method_records(method).map(|r| r.iteration).max();
        self.method_records(method).filter(|r| Some(r.iteration) == last).collect()
    }

    /// Mean of `field` over the final-iteration records of `method`.
    pub fn final_mean(&self, method: &str, field: impl Fn(&MetricRecord) -> f64) -> f64 {
        let recs = self.final_records(method);
        recs.iter().map(|r| field(r)).sum::<f64>() / recs.len() as f64
    }
}

/// FNV-1a, giving every method its own RNG stream within a seed.
fn stream_id(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

struct MethodRun {
    records: Vec<MetricRecord>,
    snapshots: Vec<(usize, serde_json::Value)>,
}

#[allow(clippy::too_many_arguments)]
fn run_method(
    label: &str,
    method: Method,
    semdice: &SemdiceConfig,
    seed: u64,
    mdp: &Arc<FiniteMdp>,
    reference: &Reference,
    cfg: &ExperimentConfig,
    collector: Collector,
) -> Result<MethodRun> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let sim = Simulator::new(mdp.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(label));
    let mut learner = make_learner(method, ns, na, cfg, semdice)?;
    let mut buffer = TransitionDataset::new(ns, na);
    let collection = CollectionConfig { episodes_per_iteration: cfg.episodes_per_iter, episode_length: cfg.episode_length };
    let uniform = TabularPolicy::uniform(ns, na);
    let mut out = MethodRun { records: Vec::new(), snapshots: Vec::new() };
    for k in 1..=cfg.iterations() {
        let behavior = match collector {
            Collector::Learner => learner.behavior(),
            Collector::Uniform => uniform.clone(),
        };
        for _ in 0..collection.episodes_per_iteration {
            buffer.push_episode(&sim.rollout(&behavior, collection.episode_length, &mut rng))?;
        }
        let objective = learner.update(&buffer, &mut rng)?;
        // Measurement: the only place the true model enters.
        let target = learner.target(&buffer)?;
        let policy_entropy = stationary_distribution(mdp, &target)?.state_entropy();
        let data_entropy = state_entropy(&buffer.d_s()?)?;
        out.records.push(MetricRecord {
            method: label.to_string(),
            seed,
            iteration: k,
            episodes: k * collection.episodes_per_iteration,
            policy_entropy,
            normalized_policy_entropy: normalized_entropy(policy_entropy, reference.h_uniform, reference.h_star).0,
            data_entropy,
            normalized_data_entropy: normalized_entropy(data_entropy, reference.h_uniform, reference.h_star).0,
            objective,
        });
        if cfg.snapshots {
            if let Some(snap) = learner.snapshot() {
                out.snapshots.push((k, snap));
            }
        }
    }
    Ok(out)
}

/// A labelled learner configuration; ablations vary the SEMDICE config per cell.
#[derive(Clone, Debug)]
pub struct Arm {
    pub label: String,
    pub method: Method,
    pub semdice: SemdiceConfig,
}

type SeedSetup = (Arc<FiniteMdp>, Reference);

/// Runs every arm on every seed. Per seed the MDP and its reference entropies are
/// built once; (seed, arm) pairs run on the worker pool.
pub fn run_arms(cfg: &ExperimentConfig, arms: &[Arm], collector: Collector) -> Result<RunSummary> {
    cfg.validate()?;
    for arm in arms {
        arm.semdice.validate()?;
    }
    let per_seed: Vec<(u64, Result<SeedSetup>)> = super::pool()?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let built = cfg.mdp.build(seed, cfg.gamma).and_then(|mdp| {
                    let reference = reference_entropies(&mdp, cfg)?;
                    Ok((Arc::new(mdp), reference))
                });
                (seed, built)
            })
            .collect()
    });
    let mut summary = RunSummary::default();
    let mut jobs = Vec::new();
    for (seed, built) in per_seed {
        match built {
            Ok((mdp, reference)) => {
                summary.references.insert(seed, reference);
                for i in 0..arms.len() {
                    jobs.push((i, seed, mdp.clone(), reference));
                }
            }
            Err(e) => {
                // A seed whose MDP or oracle fails takes all its arms with it.
                for arm in arms {
                    summary.failures.push(RunFailure {
                        method: arm.label.clone(),
                        seed,
                        error: e.to_string(),
                        numerical: e.is_numerical(),
                    });
                }
            }
        }
    }
    let results: Vec<(usize, u64, Result<MethodRun>)> = super::pool()?.install(|| {
        jobs.into_par_iter()
            .map(|(i, seed, mdp, reference)| {
                let arm = &arms[i];
                (i, seed, run_method(&arm.label, arm.method, &arm.semdice, seed, &mdp, &reference, cfg, collector))
            })
            .collect()
    });
    let mut ordered: Vec<_> = results.into_iter().collect();
    ordered.sort_by_key(|(i, seed, _)| (*i, *seed));
    for (i, seed, res) in ordered {
        let label = arms[i].label.clone();
        match res {
            Ok(run) => {
                summary.records.extend(run.records);
                if !run.snapshots.is_empty() {
                    summary.snapshots.insert((label, seed), run.snapshots);
                }
            }
            Err(e) => summary.failures.push(RunFailure { method: label, seed, error: e.to_string(), numerical: e.is_numerical() }),
        }
    }
    summary.failures.sort_by(|a, b| (&a.method, a.seed).cmp(&(&b.method, b.seed)));
    Ok(summary)
}

fn default_arms(cfg: &ExperimentConfig) -> Result<Vec<Arm>> {
    let semdice = cfg.semdice_config();
    Ok(cfg
        .parsed_methods()?
        .into_iter()
        .map(|method| Arm { label: method.key(), method, semdice: semdice.clone() })
        .collect())
}

/// Online protocol: every method collects with its own behavior policy.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    run_arms(cfg, &default_arms(cfg)?, Collector::Learner)
}

/// Offline protocol: data come from a frozen uniform policy; SEMDICE reports
/// its exact extraction from the learned ratios.
pub fn run_random_data_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let cfg = ExperimentConfig { extraction: Extraction::Exact, ..cfg.clone() };
    run_arms(&cfg, &default_arms(&cfg)?, Collector::Uniform)
}

pub const ABLATION_ALPHAS: [f64; 4] = [0.005, 0.05, 0.5, 5.0];

/// Label of an ablation cell, e.g. `semdice_alpha0.05_soft_chi2`.
pub fn ablation_label(alpha: f64, fdiv: crate::fdiv::FDivergence) -> String {
    format!("semdice_alpha{alpha}_{}", fdiv.key())
}

/// SEMDICE over the α × f grid. Unstable cells appear as failures.
pub fn run_ablation(cfg: &ExperimentConfig, alphas: &[f64], fdivs: &[crate::fdiv::FDivergence]) -> Result<RunSummary> {
    let base = cfg.semdice_config();
    let arms: Vec<Arm> = alphas
        .iter()
        .flat_map(|&alpha| {
            let base = base.clone();
            fdivs.iter().map(move |&fdiv| Arm {
                label: ablation_label(alpha, fdiv),
                method: Method::Semdice,
                semdice: SemdiceConfig { alpha, fdiv, ..base.clone() },
            })
        })
        .collect();
    run_arms(cfg, &arms, Collector::Learner)
}

/// Writes `raw.csv`, `aggregate.csv`, `references.json`, `failures.json` and
/// per-run snapshots under `dir`.
pub fn write_outputs(summary: &RunSummary, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let raw = dir.join("raw.csv");
    super::write_records(&raw, &summary.records)?;
    super::aggregate(&[raw.as_path()], &dir.join("aggregate.csv"), super::BOOTSTRAP_SEED)?;
    std::fs::write(dir.join("references.json"), serde_json::to_string_pretty(&summary.references)?)?;
    std::fs::write(dir.join("failures.json"), serde_json::to_string_pretty(&summary.failures)?)?;
    if !summary.snapshots.is_empty() {
        let snap_dir = dir.join("snapshots");
        std::fs::create_dir_all(&snap_dir)?;
        for ((method, seed), snaps) in &summary.snapshots {
            let keyed: BTreeMap<usize, &serde_json::Value> = snaps.iter().map(|(k, v)| (*k, v)).collect();
            std::fs::write(snap_dir.join(format!("{method}_seed{seed}.json")), serde_json::to_string(&keyed)?)?;
        }
    }
    Ok(())
}
