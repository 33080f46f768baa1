//! `semlab`: runs the tabular state-entropy experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semlab_core::harness::{
    self, run_ablation, run_experiment, run_random_data_experiment, write_outputs, ExperimentConfig, MdpSpec,
    RunSummary, ABLATION_ALPHAS,
};
use semlab_core::{Error, FDivergence};

#[derive(Parser)]
#[command(name = "semlab", version, about = "Tabular state-entropy maximization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Uniform-policy and optimal state entropies per seed.
    Oracle(Common),
    /// One method (default semdice) on every configured seed.
    Train(Common),
    /// Every configured method with online data collection.
    Experiment(Common),
    /// Every configured method on data from a frozen uniform policy.
    RandomData(Common),
    /// SEMDICE over the alpha x f-divergence grid.
    Ablate(Common),
    /// Bootstrap aggregation of raw CSVs.
    Aggregate {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "aggregate.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = harness::BOOTSTRAP_SEED)]
        bootstrap_seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use seeds 0..N.
    #[arg(long)]
    seed_count: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Method identifier (repeatable).
    #[arg(long)]
    method: Vec<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    fdiv: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    actions: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        self.load_over(ExperimentConfig::default())
    }

    /// `base` applies only when no config file is given.
    fn load_over(&self, base: ExperimentConfig) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_path(path)?,
            None => base,
        };
        if let Some(n) = self.seed_count {
            cfg = cfg.with_seed_count(n);
        }
        if !self.method.is_empty() {
            cfg.methods = self.method.clone();
        }
        if let Some(a) = self.alpha {
            cfg.semdice.alpha = a;
        }
        if let Some(f) = &self.fdiv {
            cfg.semdice.fdiv = f.parse().map_err(|_| Error::Config(format!("unknown f-divergence '{f}'")))?;
        }
        if let Some(g) = self.gamma {
            cfg.gamma = g;
        }
        if self.states.is_some() || self.actions.is_some() {
            let (s0, a0, c0) = match cfg.mdp {
                MdpSpec::Random { states, actions, concentration } => (states, actions, concentration),
                _ => (20, 4, 1.0),
            };
            cfg.mdp = MdpSpec::Random {
                states: self.states.unwrap_or(s0),
                actions: self.actions.unwrap_or(a0),
                concentration: c0,
            };
        }
        if let Some(out) = &self.out {
            cfg.output = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Prints final means and writes outputs; true if any run failed numerically.
fn report(summary: &RunSummary, cfg: &ExperimentConfig) -> Result<bool, Error> {
    let mut methods: Vec<&str> = Vec::new();
    for r in &summary.records {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    for m in methods {
        println!(
            "{m:<34} policy {:>7.4}  data {:>7.4}  (normalized, final mean over {} seeds)",
            summary.final_mean(m, |r| r.normalized_policy_entropy),
            summary.final_mean(m, |r| r.normalized_data_entropy),
            summary.final_records(m).len()
        );
    }
    for f in &summary.failures {
        eprintln!("failed: {} seed {}: {}", f.method, f.seed, f.error);
    }
    if let Some(dir) = &cfg.output {
        write_outputs(summary, dir)?;
        println!("wrote {}", dir.display());
    }
    Ok(summary.failures.iter().any(|f| f.numerical))
}

/// True when some run failed numerically.
fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Oracle(common) => {
            let cfg = common.load()?;
            let mut refs = std::collections::BTreeMap::new();
            for &seed in &cfg.seeds {
                let mdp = cfg.mdp.build(seed, cfg.gamma)?;
                let r = harness::reference_entropies(&mdp, &cfg)?;
                println!("seed {seed:>4}  H_uniform {:.6}  H* {:.6}  gap {:.2e}", r.h_uniform, r.h_star, r.oracle_gap);
                refs.insert(seed, r);
            }
            if let Some(dir) = &cfg.output {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("references.json"), serde_json::to_string_pretty(&refs)?)?;
            }
            Ok(false)
        }
        Command::Train(common) => {
            let mut cfg = common.load()?;
            if common.method.is_empty() {
                cfg.methods = vec!["semdice".into()];
            }
            cfg.snapshots = true;
            let summary = run_experiment(&cfg)?;
            report(&summary, &cfg)
        }
        Command::Experiment(common) => {
            let cfg = common.load()?;
            report(&run_experiment(&cfg)?, &cfg)
        }
        Command::RandomData(common) => {
            let cfg = common.load_over(ExperimentConfig::random_data_default())?;
            report(&run_random_data_experiment(&cfg)?, &cfg)
        }
        Command::Ablate(common) => {
            let cfg = common.load()?;
            report(&run_ablation(&cfg, &ABLATION_ALPHAS, &FDivergence::ALL)?, &cfg)
        }
        Command::Aggregate { inputs, out, bootstrap_seed } => {
            let paths: Vec<&std::path::Path> = inputs.iter().map(PathBuf::as_path).collect();
            harness::aggregate(&paths, &out, bootstrap_seed)?;
            Ok(false)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Schema(_) => 2,
        e if e.is_numerical() => 3,
        _ => 1,
    }
}
