//! Essential-component parameters treated as jointly normal random variables.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{BusId, GridCase};
use crate::linalg::{psd_cholesky, DenseMatrix};
use crate::powerflow::PowerFlowModel;

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("no essential components are tagged")]
    NoEssential,
    #[error("standard deviation must be finite and non-negative, got {0}")]
    BadSigma(f64),
    #[error("covariance is {got}x{got}, expected {expected}x{expected}")]
    Dimension { expected: usize, got: usize },
    #[error("covariance is not symmetric")]
    NotSymmetric,
    #[error("covariance is not positive semidefinite (column {0})")]
    NotPsd(usize),
    #[error("covariance diagonal entry {index} is {got}, expected sigma² = {expected}")]
    DiagonalMismatch {
        index: usize,
        got: f64,
        expected: f64,
    },
    #[error("correlation entry ({0}, {1}) outside [-1, 1] or diagonal not 1")]
    BadCorrelation(usize, usize),
    #[error("parameter {0} refers to a bus missing from the network")]
    UnknownBus(BusId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    P,
    Q,
}

/// Which injection axes become random variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Axes {
    /// Active power only.
    #[default]
    P,
    /// Active then reactive power of each component.
    PQ,
}

/// Standard deviation of each parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Spread {
    /// Fraction of the absolute mean.
    Relative(f64),
    /// Fixed value in pu.
    Absolute(f64),
}

impl Spread {
    pub fn resolve(&self, reference: f64) -> f64 {
        match *self {
            Spread::Relative(f) => f * reference.abs(),
            Spread::Absolute(s) => s,
        }
    }
}

/// Parses `"2%"` as a relative spread and a bare number as pu.
impl std::str::FromStr for Spread {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (text, relative) = match s.strip_suffix('%') {
            Some(t) => (t.trim(), true),
            None => (s, false),
        };
        let v: f64 = text.parse().map_err(|_| format!("`{s}` is not a number"))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(format!("`{s}` must be finite and non-negative"));
        }
        Ok(if relative {
            Spread::Relative(v / 100.0)
        } else {
            Spread::Absolute(v)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEntry {
    pub component: String,
    pub bus: BusId,
    pub axis: Axis,
    pub mean: f64,
    pub sigma: f64,
}

impl ParameterEntry {
    pub fn label(&self) -> String {
        format!("{}:{:?}", self.component, self.axis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Distribution {
    #[default]
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticParameterSet {
    pub entries: Vec<ParameterEntry>,
    covariance: Vec<Vec<f64>>,
    pub distribution: Distribution,
}

impl StochasticParameterSet {
    /// One entry per tagged essential component and axis, diagonal covariance.
    pub fn from_case(case: &GridCase, axes: Axes, spread: Spread) -> Result<Self, ParamError> {
        let mut entries = Vec::new();
        for c in case.essential_components() {
            let mut push = |axis: Axis, mean: f64| -> Result<(), ParamError> {
                let sigma = spread.resolve(mean);
                if !(sigma.is_finite() && sigma >= 0.0) {
                    return Err(ParamError::BadSigma(sigma));
                }
                entries.push(ParameterEntry {
                    component: c.id.clone(),
                    bus: c.bus,
                    axis,
                    mean,
                    sigma,
                });
                Ok(())
            };
            push(Axis::P, c.p)?;
            if axes == Axes::PQ {
                push(Axis::Q, c.q)?;
            }
        }
        if entries.is_empty() {
            return Err(ParamError::NoEssential);
        }
        Self::independent(entries)
    }

    pub fn independent(entries: Vec<ParameterEntry>) -> Result<Self, ParamError> {
        for e in &entries {
            if !(e.sigma.is_finite() && e.sigma >= 0.0) {
                return Err(ParamError::BadSigma(e.sigma));
            }
        }
        let d = entries.len();
        let mut covariance = vec![vec![0.0; d]; d];
        for (i, e) in entries.iter().enumerate() {
            covariance[i][i] = e.sigma * e.sigma;
        }
        Ok(Self {
            entries,
            covariance,
            distribution: Distribution::Normal,
        })
    }

    /// Full covariance; must be symmetric PSD with `Σ_ii = σ_i²`.
    pub fn with_covariance(
        entries: Vec<ParameterEntry>,
        covariance: Vec<Vec<f64>>,
    ) -> Result<Self, ParamError> {
        let d = entries.len();
        if covariance.len() != d || covariance.iter().any(|r| r.len() != d) {
            return Err(ParamError::Dimension {
                expected: d,
                got: covariance.len(),
            });
        }
        let m = DenseMatrix::from_rows(&covariance);
        if !m.is_symmetric(1e-12) {
            return Err(ParamError::NotSymmetric);
        }
        for (i, e) in entries.iter().enumerate() {
            let expected = e.sigma * e.sigma;
            if (m[(i, i)] - expected).abs() > 1e-12 * (1.0 + expected) {
                return Err(ParamError::DiagonalMismatch {
                    index: i,
                    got: m[(i, i)],
                    expected,
                });
            }
        }
        psd_cholesky(&m, 1e-12).map_err(ParamError::NotPsd)?;
        Ok(Self {
            entries,
            covariance,
            distribution: Distribution::Normal,
        })
    }

    /// Replaces the covariance with `D C D`, `D = diag(σ)`.
    pub fn with_correlation(self, correlation: &[Vec<f64>]) -> Result<Self, ParamError> {
        let d = self.dim();
        if correlation.len() != d || correlation.iter().any(|r| r.len() != d) {
            return Err(ParamError::Dimension {
                expected: d,
                got: correlation.len(),
            });
        }
        for i in 0..d {
            for j in 0..d {
                let c = correlation[i][j];
                if !(-1.0..=1.0).contains(&c) || (i == j && c != 1.0) {
                    return Err(ParamError::BadCorrelation(i, j));
                }
            }
        }
        let s = self.sigmas();
        let cov = (0..d)
            .map(|i| (0..d).map(|j| s[i] * correlation[i][j] * s[j]).collect())
            .collect();
        Self::with_covariance(self.entries, cov)
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn means(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.mean).collect()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.sigma).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.entries.iter().map(ParameterEntry::label).collect()
    }

    pub fn covariance(&self) -> DenseMatrix {
        DenseMatrix::from_rows(&self.covariance)
    }

    pub fn covariance_rows(&self) -> &[Vec<f64>] {
        &self.covariance
    }

    /// Same means and correlation with every variance multiplied by `s²`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| ParameterEntry {
                    sigma: e.sigma * s.abs(),
                    ..e.clone()
                })
                .collect(),
            covariance: self
                .covariance
                .iter()
                .map(|r| r.iter().map(|v| v * s * s).collect())
                .collect(),
            distribution: self.distribution,
        }
    }
}

/// Maps parameter values onto bus injections of a prepared network.
#[derive(Debug, Clone)]
pub struct InjectionMap {
    targets: Vec<(usize, Axis)>,
    means: Vec<f64>,
}

impl InjectionMap {
    pub fn new(
        model: &PowerFlowModel,
        params: &StochasticParameterSet,
    ) -> Result<Self, ParamError> {
        let targets = params
            .entries
            .iter()
            .map(|e| {
                model
                    .bus_index(e.bus)
                    .map(|i| (i, e.axis))
                    .ok_or(ParamError::UnknownBus(e.bus))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            targets,
            means: params.means(),
        })
    }

    pub fn targets(&self) -> &[(usize, Axis)] {
        &self.targets
    }

    /// Injections with each parameter moved from its mean to `values[j]`.
    pub fn apply(&self, base: &[Complex64], values: &[f64]) -> Vec<Complex64> {
        let mut s = base.to_vec();
        for ((&(bus, axis), &mean), &x) in self.targets.iter().zip(&self.means).zip(values) {
            match axis {
                Axis::P => s[bus].re += x - mean,
                Axis::Q => s[bus].im += x - mean,
            }
        }
        s
    }

    /// Injections with parameter `j` shifted by `delta`.
    pub fn shift(&self, base: &[Complex64], j: usize, delta: f64) -> Vec<Complex64> {
        let mut s = base.to_vec();
        let (bus, axis) = self.targets[j];
        match axis {
            Axis::P => s[bus].re += delta,
            Axis::Q => s[bus].im += delta,
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{fixtures::mixed_fleet, tag_essential, Selector};

    fn solar_params(axes: Axes) -> StochasticParameterSet {
        let case = tag_essential(&mixed_fleet(), &Selector::AllSolar).unwrap();
        StochasticParameterSet::from_case(&case, axes, Spread::Relative(0.02)).unwrap()
    }

    #[test]
    fn relative_spread_is_two_percent_of_mean() {
        let p = solar_params(Axes::P);
        assert_eq!(p.labels(), vec!["g2:P", "g3:P", "g4:P"]);
        assert!((p.sigmas()[0] - 0.004).abs() < 1e-15);
        let cov = p.covariance();
        assert_eq!(cov[(1, 1)], p.sigmas()[1].powi(2));
        assert_eq!(cov[(0, 1)], 0.0);
    }

    #[test]
    fn pq_axes_interleave_per_component() {
        let p = solar_params(Axes::PQ);
        assert_eq!(p.labels()[..2], ["g2:P".to_string(), "g2:Q".to_string()]);
        assert_eq!(p.dim(), 6);
    }

    #[test]
    fn correlation_scales_by_sigmas_and_checks_psd() {
        let p = solar_params(Axes::P);
        let ok = p
            .clone()
            .with_correlation(&[
                vec![1.0, 0.5, 0.0],
                vec![0.5, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ])
            .unwrap();
        let s = ok.sigmas();
        assert!((ok.covariance()[(0, 1)] - 0.5 * s[0] * s[1]).abs() < 1e-18);
        let bad = p.with_correlation(&[
            vec![1.0, 0.9, -0.9],
            vec![0.9, 1.0, 0.9],
            vec![-0.9, 0.9, 1.0],
        ]);
        assert!(matches!(bad, Err(ParamError::NotPsd(_))));
    }

    #[test]
    fn untagged_case_has_no_parameters() {
        assert_eq!(
            StochasticParameterSet::from_case(&mixed_fleet(), Axes::P, Spread::Relative(0.02)),
            Err(ParamError::NoEssential)
        );
    }

    #[test]
    fn spread_parses_percent_and_pu() {
        assert_eq!("2%".parse::<Spread>(), Ok(Spread::Relative(0.02)));
        assert_eq!(" 0.01 ".parse::<Spread>(), Ok(Spread::Absolute(0.01)));
        assert!("-1%".parse::<Spread>().is_err());
        assert!("x".parse::<Spread>().is_err());
        assert_eq!(Spread::Relative(0.1).resolve(-2.0), 0.2);
    }
}
