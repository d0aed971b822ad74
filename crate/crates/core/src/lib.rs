//! Adaptive importance sampling of rare events in diffusion processes.
//!
//! The free energy `F(x) = -log E[exp(-W)]` of a path functional `W` is the
//! value function of a stochastic control problem, and its optimal feedback
//! control yields a zero-variance change of measure. This crate computes that
//! control by solving the associated forward-backward SDE, either with
//! least-squares Monte Carlo regression ([`lsmc`]) or with a shooting method
//! over small neural networks ([`shooting`]), and evaluates the resulting
//! importance-sampling and control-variate estimators ([`estimators`]).
//!
//! [`reference`] holds analytic and brute-force oracles for the committor,
//! Ornstein-Uhlenbeck and double-well examples; [`problems`] assembles those
//! examples into models, stopping rules and cost functionals.

pub mod approx;
pub mod error;
pub mod estimators;
pub mod functionals;
pub mod linalg;
pub mod lsmc;
pub mod optim;
pub mod problems;
pub mod reference;
pub mod rng;
pub mod sde;
pub mod shooting;

pub use approx::{BasisKind, BasisSet, FeatureMap, LinearValueApprox, Mlp, MlpApprox, Placement};
pub use error::{Error, Result};
pub use estimators::{EstimateReport, EstimatorKind};
pub use functionals::{CostSpec, TerminalCost};
pub use lsmc::{LsmcConfig, LsmcSolution, TimeoutPolicy, ZMode};
pub use sde::{
    InitialCondition, PathStatus, Policy, SdeModel, SimulationSpec, StopRule, TrajectoryBatch,
    ZeroPolicy,
};
pub use shooting::{ShootingConfig, ShootingState, ZParametrisation};
