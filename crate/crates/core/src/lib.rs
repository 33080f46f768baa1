//! Tabular state-entropy maximization through stationary distribution correction.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`]: finite MDPs, policies, exact stationary distributions, simulation;
//! * [`fdiv`]: f-divergence generators and their conjugates;
//! * [`dice`]: the dual objectives, their solvers and the online learner;
//! * [`oracle`]: planning-based ground truth (value iteration, Frank-Wolfe);
//! * [`baselines`]: count- and density-based intrinsic-reward explorers;
//! * [`stats`]: entropy metrics computed from data or from exact distributions;
//! * [`harness`]: experiment configs, multi-seed runs and CSV aggregation.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod dataset;
pub mod dice;
pub mod error;
pub mod fdiv;
pub mod harness;
mod linalg;
pub mod mdp;
pub mod optim;
pub mod oracle;
pub mod stats;

pub use dataset::TransitionDataset;
pub use dice::{CorrectionRatios, DualVars, Estimator, SemdiceConfig};
pub use error::{Error, Result};
pub use fdiv::FDivergence;
pub use mdp::{FiniteMdp, Occupancy, Simulator, TabularPolicy};
