//! Risk-managed steady-state analysis of power grids.
//!
//! The pipeline solves the AC power flow of a case, differentiates critical
//! bus-voltage metrics with respect to the injections of stochastic
//! ("essential") generators and loads, turns a metric spread into closed-form
//! statistical worst-case bounds and most-probable parameter corners, and
//! counts limit violations. A seeded Monte Carlo power-flow driver serves as
//! the reference for accuracy and runtime comparisons.

pub mod grid;
pub mod linalg;
pub mod montecarlo;
pub mod params;
pub mod powerflow;
pub mod sensitivity;
pub mod stats;
pub mod timing;
pub mod worstcase;

pub use grid::{parse_case, tag_essential, validate_case, CaseFormat, GridCase, Selector};
pub use montecarlo::{mae_compare, run_monte_carlo, sample_parameters, McOptions, McReport};
pub use params::{Axes, Spread, StochasticParameterSet};
pub use powerflow::{
    evaluate_metrics, solve_power_flow, MetricSpec, PowerFlowSolution, SolveOptions,
};
pub use sensitivity::{adjoint_sensitivities, hybrid_sensitivities, SensitivityMatrix};
pub use worstcase::{run_rmss, RmssOptions, RmssReport, SigmaC, SweepGrid};

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
