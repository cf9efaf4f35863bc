//! Failure classes and their exit codes.

use std::fmt;

use rmss_core::grid::CaseError;
use rmss_core::montecarlo::McError;
use rmss_core::params::ParamError;
use rmss_core::powerflow::PowerFlowError;
use rmss_core::sensitivity::SensitivityError;
use rmss_core::worstcase::WorstCaseError;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or inconsistent inputs.
    Config(String),
    /// A power flow that should have solved did not.
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solver(_) => 2,
            CliError::Config(_) => 3,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config(message.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
        }
    }
}

impl From<PowerFlowError> for CliError {
    fn from(e: PowerFlowError) -> Self {
        match &e {
            PowerFlowError::NonConvergence { best } => {
                let history: Vec<String> = best
                    .mismatch_history
                    .iter()
                    .map(|m| format!("{m:.3e}"))
                    .collect();
                CliError::Solver(format!("{e}\nmismatch history (pu): {}", history.join(" ")))
            }
            PowerFlowError::JacobianSingular { .. } | PowerFlowError::NotConverged => {
                CliError::Solver(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<CaseError> for CliError {
    fn from(e: CaseError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ParamError> for CliError {
    fn from(e: ParamError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SensitivityError> for CliError {
    fn from(e: SensitivityError) -> Self {
        match e {
            SensitivityError::PowerFlow(p) => p.into(),
            SensitivityError::Params(p) => p.into(),
            SensitivityError::NotConverged
            | SensitivityError::VanishingVoltage(_)
            | SensitivityError::ModelEvaluation { .. } => CliError::Solver(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<WorstCaseError> for CliError {
    fn from(e: WorstCaseError) -> Self {
        match e {
            WorstCaseError::PowerFlow(p) => p.into(),
            WorstCaseError::Sensitivity(s) => s.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            McError::PowerFlow(p) => p.into(),
            McError::Params(p) => p.into(),
            McError::AllSamplesFailed(_) | McError::Unrepresentative { .. } => {
                CliError::Solver(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}
