//! Shared flags and their translation into library inputs.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use rmss_core::grid::{parse_case, tag_essential, CaseFormat, GridCase, Selector};
use rmss_core::params::{Axes, Spread, StochasticParameterSet};
use rmss_core::powerflow::MetricSpec;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AxesArg {
    /// Active power only.
    P,
    /// Active and reactive power.
    Pq,
}

/// Inputs common to every command that analyses a case.
#[derive(Debug, Clone, Args, Serialize)]
pub struct CaseArgs {
    /// MATPOWER case file.
    #[arg(long)]
    pub case: PathBuf,
    /// Stochastic components: all, solar, wind, renewable, or a comma-separated id list.
    #[arg(long, default_value = "all")]
    pub essential: String,
    /// Injection axes treated as random.
    #[arg(long, value_enum, default_value = "p")]
    pub axes: AxesArg,
    /// Metric buses: `auto` (PQ buses with nonzero injection) or a comma-separated bus list.
    #[arg(long, default_value = "auto")]
    pub metrics: String,
    /// Parameter standard deviation: `2%` of each mean, or a value in pu.
    #[arg(long = "sigma-p", default_value = "2%")]
    pub sigma_p: String,
    /// CSV file with the parameter correlation matrix (one row per line).
    #[arg(long)]
    pub correlation: Option<PathBuf>,
}

/// The case with its stochastic selection, the parameter set and the metrics.
pub struct Problem {
    pub case: GridCase,
    pub params: StochasticParameterSet,
    pub spec: MetricSpec,
}

impl CaseArgs {
    pub fn load(&self) -> Result<Problem, CliError> {
        let raw = parse_case(&self.case, CaseFormat::MatpowerM)?;
        let selector: Selector = self
            .essential
            .parse()
            .map_err(|e| CliError::config(format!("--essential: {e}")))?;
        let case = tag_essential(&raw, &selector)?;
        let spread: Spread = self
            .sigma_p
            .parse()
            .map_err(|e| CliError::config(format!("--sigma-p: {e}")))?;
        let axes = match self.axes {
            AxesArg::P => Axes::P,
            AxesArg::Pq => Axes::PQ,
        };
        let mut params = StochasticParameterSet::from_case(&case, axes, spread)?;
        if let Some(path) = &self.correlation {
            let matrix = read_matrix(path)?;
            params = params
                .with_correlation(&matrix)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        }
        let spec = self.metric_spec(&case)?;
        if spec.is_empty() {
            return Err(CliError::config("no metric buses selected"));
        }
        Ok(Problem { case, params, spec })
    }

    fn metric_spec(&self, case: &GridCase) -> Result<MetricSpec, CliError> {
        if self.metrics.trim().eq_ignore_ascii_case("auto") {
            return Ok(MetricSpec::nonzero_injection_pq(case));
        }
        let buses = self
            .metrics
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| {
                let id: u32 = t.parse().map_err(|_| {
                    CliError::config(format!("--metrics: `{t}` is not a bus number"))
                })?;
                case.bus(id).map(|_| id).ok_or_else(|| {
                    CliError::config(format!("--metrics: bus {id} is not in the case"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MetricSpec::voltages(buses))
    }
}

/// Square matrix from a CSV file; blank lines and `#` comments are skipped.
fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    CliError::config(format!(
                        "{}:{}: `{t}` is not a number",
                        path.display(),
                        n + 1
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.iter().any(|r| r.len() != rows.len()) {
        return Err(CliError::config(format!(
            "{}: matrix is not square",
            path.display()
        )));
    }
    Ok(rows)
}

/// `2%` → 0.02, `0.02` → 0.02.
pub fn parse_fraction(flag: &str, text: &str) -> Result<f64, CliError> {
    let t = text.trim();
    let (num, scale) = match t.strip_suffix('%') {
        Some(n) => (n.trim(), 0.01),
        None => (t, 1.0),
    };
    let v: f64 = num
        .parse()
        .map_err(|_| CliError::config(format!("{flag}: `{text}` is not a number")))?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(CliError::config(format!(
            "{flag}: `{text}` must be non-negative"
        )));
    }
    Ok(v * scale)
}
