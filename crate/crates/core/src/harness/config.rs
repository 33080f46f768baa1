use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{PgConfig, QConfig, RewardKind, TargetMode};
use crate::dice::{Estimator, SemdiceConfig};
use crate::error::{Error, Result};
use crate::mdp::{example_three_state, random_mdp, FiniteMdp, DEFAULT_GAMMA};
use crate::optim::OptimizerKind;
use crate::oracle::FrankWolfeOptions;

/// A learner identifier as it appears in configs and CSV `method` columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Semdice,
    Pg(RewardKind),
    Uniform,
    MaxEnt,
    Q(TargetMode, RewardKind),
}

impl Method {
    /// The policy-gradient comparison set.
    pub const FIGURE: [Method; 5] = [
        Method::Semdice,
        Method::Pg(RewardKind::CbSa),
        Method::Pg(RewardKind::CbS),
        Method::Pg(RewardKind::PbS),
        Method::Uniform,
    ];

    pub fn key(&self) -> String {
        match self {
            Method::Semdice => "semdice".into(),
            Method::Pg(r) => r.key().into(),
            Method::Uniform => "uniform".into(),
            Method::MaxEnt => "maxent".into(),
            Method::Q(TargetMode::Greedy, r) => format!("q_greedy_{r}"),
            Method::Q(TargetMode::Softmax, r) => format!("q_softmax_{r}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semdice" => return Ok(Method::Semdice),
            "uniform" => return Ok(Method::Uniform),
            "maxent" => return Ok(Method::MaxEnt),
            _ => {}
        }
        if let Ok(r) = s.parse::<RewardKind>() {
            return Ok(Method::Pg(r));
        }
        if let Some(r) = s.strip_prefix("q_greedy_") {
            return Ok(Method::Q(TargetMode::Greedy, r.parse()?));
        }
        if let Some(r) = s.strip_prefix("q_softmax_") {
            return Ok(Method::Q(TargetMode::Softmax, r.parse()?));
        }
        Err(Error::Config(format!("unknown method '{s}'")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.key())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MdpSpec {
    /// Dirichlet(`concentration`) rows, generated from each run seed.
    Random { states: usize, actions: usize, concentration: f64 },
    ThreeState,
    /// JSON MDP document shared by all seeds.
    Fixture { path: PathBuf },
}

impl Default for MdpSpec {
    fn default() -> Self {
        MdpSpec::Random { states: 20, actions: 4, concentration: 1.0 }
    }
}

impl MdpSpec {
    pub fn build(&self, seed: u64, gamma: f64) -> Result<FiniteMdp> {
        match self {
            MdpSpec::Random { states, actions, concentration } => {
                if *states == 0 || *actions == 0 || !(*concentration > 0.0) {
                    return Err(Error::Config(format!("random MDP {states}x{actions}, concentration {concentration}")));
                }
                random_mdp(seed, *states, *actions, *concentration).with_gamma(gamma)
            }
            MdpSpec::ThreeState => example_three_state().with_gamma(gamma),
            MdpSpec::Fixture { path } => FiniteMdp::from_json(&std::fs::read_to_string(path)?)?.with_gamma(gamma),
        }
    }
}

/// Which policy the SEMDICE learner reports for measurement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extraction {
    /// The executable softmax policy trained by the policy update.
    Softmax,
    /// `π ∝ w ⊙ d^D` from the regressed advantages.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgSettings {
    pub learning_rate: f64,
}

impl Default for PgSettings {
    fn default() -> Self {
        Self { learning_rate: PgConfig::default().learning_rate }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QSettings {
    pub learning_rate: f64,
}

impl Default for QSettings {
    fn default() -> Self {
        Self { learning_rate: QConfig::default().learning_rate }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<String>,
    pub mdp: MdpSpec,
    pub gamma: f64,
    pub seeds: Vec<u64>,
    pub episodes_per_iter: usize,
    pub episode_length: usize,
    pub max_episodes: usize,
    /// Keys given here override [`online_semdice_defaults`] individually.
    #[serde(deserialize_with = "overlay_online_defaults")]
    pub semdice: SemdiceConfig,
    pub extraction: Extraction,
    pub pg: PgSettings,
    pub q: QSettings,
    pub oracle: FrankWolfeOptions,
    /// Write per-iteration JSON snapshots of the SEMDICE learner.
    pub snapshots: bool,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: Method::FIGURE.iter().map(Method::key).collect(),
            mdp: MdpSpec::default(),
            gamma: DEFAULT_GAMMA,
            seeds: (0..20).collect(),
            episodes_per_iter: 10,
            episode_length: 100,
            max_episodes: 1000,
            semdice: online_semdice_defaults(),
            extraction: Extraction::Exact,
            pg: PgSettings::default(),
            q: QSettings::default(),
            oracle: FrankWolfeOptions::default(),
            snapshots: false,
            output: None,
        }
    }
}

/// Tuned defaults for the online tabular learner.
pub fn online_semdice_defaults() -> SemdiceConfig {
    SemdiceConfig {
        alpha: 0.05,
        gamma: DEFAULT_GAMMA,
        learning_rate: 5e-2,
        optimizer: OptimizerKind::Adam,
        updates_per_iteration: 200,
        estimator: Estimator::Tabular,
        ..SemdiceConfig::default()
    }
}

/// α for a frozen uniform collector. The data never approaches the optimum, so
/// the pull toward `d^D` must stay small against the narrow entropy span.
pub const FROZEN_COLLECTOR_ALPHA: f64 = 0.005;

fn overlay_online_defaults<'de, D: serde::Deserializer<'de>>(de: D) -> std::result::Result<SemdiceConfig, D::Error> {
    use serde::de::Error as _;
    let overlay = serde_json::Value::deserialize(de)?;
    let serde_json::Value::Object(keys) = overlay else {
        return Err(D::Error::custom("semdice must be a table"));
    };
    let mut base = serde_json::to_value(online_semdice_defaults()).map_err(D::Error::custom)?;
    let table = base.as_object_mut().expect("struct serializes to an object");
    for (k, v) in keys {
        // The alias is resolved here so that it replaces the default, not duplicates it.
        let k = if k == "fdiv_key" { "fdiv".to_string() } else { k };
        table.insert(k, v);
    }
    serde_json::from_value(base).map_err(D::Error::custom)
}

impl ExperimentConfig {
    /// Defaults of the frozen-collector protocol.
    pub fn random_data_default() -> Self {
        let mut cfg = Self::default();
        cfg.semdice.alpha = FROZEN_COLLECTOR_ALPHA;
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Seeds `0..count`.
    pub fn with_seed_count(mut self, count: usize) -> Self {
        self.seeds = (0..count as u64).collect();
        self
    }

    pub fn parsed_methods(&self) -> Result<Vec<Method>> {
        self.methods.iter().map(|m| m.parse()).collect()
    }

    pub fn iterations(&self) -> usize {
        self.max_episodes / self.episodes_per_iter.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes_per_iter == 0 || self.episode_length == 0 || self.max_episodes < self.episodes_per_iter {
            return Err(Error::Config("episode counts must be positive and max_episodes ≥ episodes_per_iter".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("experiments need gamma in (0, 1), got {}", self.gamma)));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods".into()));
        }
        self.parsed_methods()?;
        self.semdice_config().validate()?;
        if self.semdice.optimizer == OptimizerKind::Lbfgs || self.semdice.policy_optimizer == OptimizerKind::Lbfgs {
            return Err(Error::Config("the online learner needs a stepwise optimizer".into()));
        }
        if !(self.pg.learning_rate > 0.0) || !(self.q.learning_rate > 0.0 && self.q.learning_rate < 1.0) {
            return Err(Error::Config("pg rate must be positive and q rate in (0, 1)".into()));
        }
        Ok(())
    }

    /// The learner config with the experiment's discount.
    pub fn semdice_config(&self) -> SemdiceConfig {
        SemdiceConfig { gamma: self.gamma, ..self.semdice.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_keys_round_trip() {
        for key in ["semdice", "cb_sa", "cb_s", "pb_s", "uniform", "maxent", "q_greedy_pb_s", "q_softmax_cb_sa"] {
            assert_eq!(key.parse::<Method>().unwrap().key(), key);
        }
        assert!("q_greedy_nope".parse::<Method>().is_err());
    }

    #[test]
    fn toml_overrides_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "methods = [\"semdice\"]\nseeds = [3, 4]\n[mdp]\nkind = \"random\"\nstates = 5\nactions = 2\nconcentration = 1.0\n[semdice]\nalpha = 0.5\nfdiv = \"kl\"\n",
        )
        .unwrap();
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.semdice.alpha, 0.5);
        assert_eq!(cfg.episodes_per_iter, 10);
        assert!(cfg.validate().is_ok());
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        let dup = ExperimentConfig { seeds: vec![1, 1], ..Default::default() };
        assert!(dup.validate().is_err());
    }
}
