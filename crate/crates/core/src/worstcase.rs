//! Worst-case construction and violation analysis.
//!
//! For a metric with nominal value `c_nom`, spread `σ_c` and confidence
//! `ρ`, the bounds are `c_nom ± Φ⁻¹(ρ)·σ_c`. Under the first-order model
//! `c ≈ c_nom + λᵀ(E − η)`, the most probable parameter vector achieving a
//! bound `c_wc` minimizes `(E − η)ᵀ Σ⁻¹ (E − η)` subject to
//! `λᵀ(E − η) = c_wc − c_nom`, which has the closed form
//!
//! ```text
//! E_wc = η + (c_wc − c_nom) / (λᵀΣλ) · Σλ
//! ```

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{BusId, GridCase, Remodel};
use crate::linalg::{dot, DenseMatrix};
use crate::params::{InjectionMap, StochasticParameterSet};
use crate::powerflow::{
    evaluate_metrics, Metric, MetricSpec, PowerFlowError, PowerFlowModel, SolveOptions,
};
use crate::sensitivity::{
    hybrid_with_model, HybridOptions, RowCheck, SensitivityError, SensitivityMatrix,
};
use crate::stats::normal_quantile;
use crate::timing::Stopwatch;

/// `λᵀΣλ` below this is treated as a metric insensitive to all parameters.
pub const DEGENERATE_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum WorstCaseError {
    #[error("probability must lie strictly between 0 and 1, got {0}")]
    InvalidProbability(f64),
    #[error("metric spread must be finite and non-negative, got {0}")]
    InvalidSpread(f64),
    #[error("λᵀΣλ = {0:e}: the metric is insensitive to every varying parameter")]
    DegenerateDirection(f64),
    #[error("expected {expected} values, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("bus {0} has no usable voltage limits")]
    MissingLimits(BusId),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Upper,
    Lower,
}

/// `c_nom ± Φ⁻¹(ρ)·σ_c`, `+` for the upper bound.
pub fn worst_case_metric(
    c_nom: f64,
    sigma_c: f64,
    rho: f64,
    direction: Direction,
) -> Result<f64, WorstCaseError> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(WorstCaseError::InvalidProbability(rho));
    }
    if !(sigma_c.is_finite() && sigma_c >= 0.0) {
        return Err(WorstCaseError::InvalidSpread(sigma_c));
    }
    let z = normal_quantile(rho);
    Ok(match direction {
        Direction::Upper => c_nom + z * sigma_c,
        Direction::Lower => c_nom - z * sigma_c,
    })
}

/// The minimum-Mahalanobis deviation `δ / (λᵀΣλ) · Σλ` on the hyperplane
/// `λᵀ(E − η) = δ`.
pub fn corner_deviation(
    covariance: &DenseMatrix,
    lambda: &[f64],
    delta: f64,
) -> Result<Vec<f64>, WorstCaseError> {
    if lambda.len() != covariance.dim() {
        return Err(WorstCaseError::Dimension {
            expected: covariance.dim(),
            got: lambda.len(),
        });
    }
    let sl = covariance.mul_vec(lambda);
    let q = dot(lambda, &sl);
    if !(q >= DEGENERATE_TOLERANCE) {
        return Err(WorstCaseError::DegenerateDirection(q));
    }
    Ok(sl.into_iter().map(|v| delta / q * v).collect())
}

/// Most probable parameter vector whose linearized metric equals `c_wc`.
pub fn worst_case_parameters(
    params: &StochasticParameterSet,
    lambda: &[f64],
    c_wc: f64,
    c_nom: f64,
) -> Result<Vec<f64>, WorstCaseError> {
    let dev = corner_deviation(&params.covariance(), lambda, c_wc - c_nom)?;
    Ok(params.means().iter().zip(dev).map(|(m, d)| m + d).collect())
}

/// Linearly propagated metric spread `sqrt(λᵀΣλ)`.
pub fn propagated_sigma(params: &StochasticParameterSet, lambda: &[f64]) -> f64 {
    params.covariance().quad_form(lambda).max(0.0).sqrt()
}

// ---------------------------------------------------------------------------
// metric spread

/// How a σ_c value is applied to each metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaScale {
    /// Fraction of the metric's nominal value.
    #[default]
    Relative,
    /// Value in pu.
    Absolute,
}

impl SigmaScale {
    fn apply(self, value: f64, c_nom: f64) -> f64 {
        match self {
            SigmaScale::Relative => value * c_nom.abs(),
            SigmaScale::Absolute => value,
        }
    }
}

/// Strictly increasing positive σ_c values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    values: Vec<f64>,
    scale: SigmaScale,
}

impl SweepGrid {
    pub fn new(values: Vec<f64>, scale: SigmaScale) -> Result<Self, WorstCaseError> {
        if values.is_empty() {
            return Err(WorstCaseError::InvalidSweep("no values".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(WorstCaseError::InvalidSweep(
                "values must be positive".into(),
            ));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(WorstCaseError::InvalidSweep(
                "values must be strictly increasing".into(),
            ));
        }
        Ok(Self { values, scale })
    }

    /// `count` logarithmically spaced values from `lo` to `hi` inclusive.
    pub fn log(lo: f64, hi: f64, count: usize, scale: SigmaScale) -> Result<Self, WorstCaseError> {
        if !(lo > 0.0 && hi >= lo) || count == 0 || (count > 1 && hi == lo) {
            return Err(WorstCaseError::InvalidSweep(format!(
                "need 0 < lo < hi and count >= 1 (got {lo}, {hi}, {count})"
            )));
        }
        if count == 1 {
            return Self::new(vec![lo], scale);
        }
        let (a, b) = (lo.ln(), hi.ln());
        let mut values: Vec<f64> = (0..count)
            .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
            .collect();
        values[0] = lo;
        values[count - 1] = hi;
        Self::new(values, scale)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scale(&self) -> SigmaScale {
        self.scale
    }
}

impl Default for SweepGrid {
    /// 20 log-spaced points from 0.1% to 5% of each nominal metric value.
    fn default() -> Self {
        Self::log(0.001, 0.05, 20, SigmaScale::Relative).expect("valid default sweep")
    }
}

/// Parses `lo:hi:count` with optional `%` suffixes on both endpoints, e.g.
/// `0.1%:5%:20`. Percentages sweep relative spreads; bare numbers are pu.
impl FromStr for SweepGrid {
    type Err = WorstCaseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |m: &str| WorstCaseError::InvalidSweep(format!("`{s}`: {m}"));
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let [lo, hi, count] = parts[..] else {
            return Err(bad("expected lo:hi:count"));
        };
        let parse = |t: &str| -> Result<(f64, bool), WorstCaseError> {
            let (num, pct) = match t.strip_suffix('%') {
                Some(n) => (n, true),
                None => (t, false),
            };
            let v: f64 = num
                .trim()
                .parse()
                .map_err(|_| bad("endpoint is not a number"))?;
            Ok(if pct { (v / 100.0, true) } else { (v, false) })
        };
        let (lo, lo_pct) = parse(lo)?;
        let (hi, hi_pct) = parse(hi)?;
        if lo_pct != hi_pct {
            return Err(bad("endpoints must both be percentages or both pu"));
        }
        let count: usize = count.parse().map_err(|_| bad("count is not an integer"))?;
        let scale = if lo_pct {
            SigmaScale::Relative
        } else {
            SigmaScale::Absolute
        };
        Self::log(lo, hi, count, scale)
    }
}

/// Source of the metric standard deviation σ_c.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaC {
    Known {
        value: f64,
        scale: SigmaScale,
    },
    Sweep(SweepGrid),
    /// `sqrt(λᵀΣλ)` per metric, the first-order propagation of the
    /// parameter covariance.
    Propagated,
}

impl Default for SigmaC {
    fn default() -> Self {
        SigmaC::Sweep(SweepGrid::default())
    }
}

// ---------------------------------------------------------------------------
// per-metric results and violations

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseResult {
    pub metric: Metric,
    pub c_nom: f64,
    /// Absolute σ_c applied to this metric (pu).
    pub sigma_c: f64,
    pub rho: f64,
    pub c_ub: f64,
    pub c_lb: f64,
    /// Worst-case parameter vectors; absent for a degenerate direction.
    pub e_ub: Option<Vec<f64>>,
    pub e_lb: Option<Vec<f64>>,
    /// Whether every component of `e_ub`/`e_lb` lies in `η ± Φ⁻¹(ρ)σ`.
    pub e_ub_within_ci: Option<bool>,
    pub e_lb_within_ci: Option<bool>,
    /// Metric re-simulated at `e_ub`/`e_lb` when requested.
    pub resim_ub: Option<f64>,
    pub resim_lb: Option<f64>,
}

/// Bounds and corners for one metric.
pub fn worst_case_result(
    metric: Metric,
    c_nom: f64,
    sigma_c: f64,
    rho: f64,
    params: &StochasticParameterSet,
    lambda: &[f64],
) -> Result<WorstCaseResult, WorstCaseError> {
    let c_ub = worst_case_metric(c_nom, sigma_c, rho, Direction::Upper)?;
    let c_lb = worst_case_metric(c_nom, sigma_c, rho, Direction::Lower)?;
    let (e_ub, e_lb) = match corner_deviation(&params.covariance(), lambda, c_ub - c_nom) {
        Ok(dev) => {
            let eta = params.means();
            // the lower corner is the exact negation of the upper deviation
            let ub: Vec<f64> = eta.iter().zip(&dev).map(|(m, d)| m + d).collect();
            let lb: Vec<f64> = eta.iter().zip(&dev).map(|(m, d)| m - d).collect();
            (Some(ub), Some(lb))
        }
        Err(WorstCaseError::DegenerateDirection(_)) => (None, None),
        Err(e) => return Err(e),
    };
    let z = normal_quantile(rho);
    let within = |e: &Vec<f64>| {
        params
            .entries
            .iter()
            .zip(e)
            .all(|(p, x)| (x - p.mean).abs() <= z * p.sigma * (1.0 + 1e-12) + 1e-15)
    };
    Ok(WorstCaseResult {
        metric,
        c_nom,
        sigma_c,
        rho,
        c_ub,
        c_lb,
        e_ub_within_ci: e_ub.as_ref().map(within),
        e_lb_within_ci: e_lb.as_ref().map(within),
        e_ub,
        e_lb,
        resim_ub: None,
        resim_lb: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub bus: BusId,
    pub bound: Bound,
    pub value: f64,
    pub limit: f64,
    /// Distance beyond the limit (pu, positive).
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusTally {
    pub bus: BusId,
    pub ub: usize,
    pub lb: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub ub_total: usize,
    pub lb_total: usize,
    /// Buses with at least one violation, ascending id.
    pub per_bus: Vec<BusTally>,
    pub violations: Vec<Violation>,
    /// Bus with the most violations, ties to the lowest id.
    pub worst_violator: Option<BusId>,
}

impl ViolationReport {
    pub fn total(&self) -> usize {
        self.ub_total + self.lb_total
    }
}

/// UB violation iff `c_ub > v_max`, LB violation iff `c_lb < v_min`.
pub fn count_violations(
    bounds: &[WorstCaseResult],
    case: &GridCase,
) -> Result<ViolationReport, WorstCaseError> {
    let mut tallies: BTreeMap<BusId, BusTally> = BTreeMap::new();
    let mut violations = Vec::new();
    for r in bounds {
        let bus = case
            .bus(r.metric.bus)
            .ok_or(PowerFlowError::UnknownBus(r.metric.bus))?;
        if !(bus.v_max.is_finite() && bus.v_min.is_finite() && bus.v_min < bus.v_max) {
            return Err(WorstCaseError::MissingLimits(bus.id));
        }
        let mut record = |bound: Bound, value: f64, limit: f64| {
            let t = tallies.entry(bus.id).or_insert(BusTally {
                bus: bus.id,
                ub: 0,
                lb: 0,
            });
            match bound {
                Bound::Upper => t.ub += 1,
                Bound::Lower => t.lb += 1,
            }
            violations.push(Violation {
                bus: bus.id,
                bound,
                value,
                limit,
                margin: (value - limit).abs(),
            });
        };
        if r.c_ub > bus.v_max {
            record(Bound::Upper, r.c_ub, bus.v_max);
        }
        if r.c_lb < bus.v_min {
            record(Bound::Lower, r.c_lb, bus.v_min);
        }
    }
    let per_bus: Vec<BusTally> = tallies.into_values().collect();
    let worst_violator = per_bus
        .iter()
        .fold(None::<&BusTally>, |best, t| match best {
            Some(b) if b.ub + b.lb >= t.ub + t.lb => Some(b),
            _ => Some(t),
        })
        .map(|t| t.bus);
    Ok(ViolationReport {
        ub_total: per_bus.iter().map(|t| t.ub).sum(),
        lb_total: per_bus.iter().map(|t| t.lb).sum(),
        per_bus,
        violations,
        worst_violator,
    })
}

/// Copy of `case` whose bus limits are `setpoint·(1 ± band)`.
pub fn apply_setpoint_band(case: &GridCase, band: f64) -> GridCase {
    let mut out = case.clone();
    for b in &mut out.buses {
        b.v_max = b.v_setpoint * (1.0 + band);
        b.v_min = b.v_setpoint * (1.0 - band);
    }
    out
}

// ---------------------------------------------------------------------------
// the full procedure

/// Voltage limits used for violation counting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Limits {
    /// `v_max`/`v_min` from the case file.
    #[default]
    Case,
    /// `setpoint·(1 ± band)` for every bus.
    SetpointBand(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmssOptions {
    /// Per-side confidence of the worst-case bounds.
    pub rho: f64,
    pub sigma_c: SigmaC,
    pub limits: Limits,
    pub hybrid: HybridOptions,
    pub solve: SolveOptions,
    /// Re-solve the power flow at every worst-case parameter vector.
    pub resimulate: bool,
}

impl Default for RmssOptions {
    fn default() -> Self {
        Self {
            rho: 0.975,
            sigma_c: SigmaC::default(),
            limits: Limits::default(),
            hybrid: HybridOptions::default(),
            solve: SolveOptions::default(),
            resimulate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// σ_c as given (fraction or pu, per `scale`); `None` when propagated.
    pub sigma_c: Option<f64>,
    pub scale: Option<SigmaScale>,
    pub results: Vec<WorstCaseResult>,
    pub violations: ViolationReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RmssTiming {
    pub total_seconds: f64,
    pub powerflow_seconds: f64,
    pub sensitivity_seconds: f64,
    pub construction_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmssReport {
    pub case: String,
    pub metrics: Vec<Metric>,
    pub parameters: Vec<String>,
    pub means: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub rho: f64,
    pub nominal: Vec<f64>,
    pub nominal_iterations: usize,
    pub sensitivity: SensitivityMatrix,
    pub row_checks: Vec<RowCheck>,
    /// Metrics whose corners could not be built (`λᵀΣλ` below tolerance).
    pub degenerate: Vec<BusId>,
    pub remodeled: Vec<Remodel>,
    pub sweep: Vec<SweepPoint>,
    /// Bus with the most violations over the whole sweep, ties to the lowest id.
    pub worst_violator: Option<BusId>,
    pub timing: RmssTiming,
}

/// Nominal solve, hybrid sensitivities, bounds and corners for every σ_c,
/// and violation counting.
pub fn run_rmss(
    case: &GridCase,
    params: &StochasticParameterSet,
    spec: &MetricSpec,
    opts: &RmssOptions,
) -> Result<RmssReport, WorstCaseError> {
    let total = Stopwatch::start();
    if !(opts.rho > 0.0 && opts.rho < 1.0) {
        return Err(WorstCaseError::InvalidProbability(opts.rho));
    }
    let limited = match opts.limits {
        Limits::Case => None,
        Limits::SetpointBand(band) => Some(apply_setpoint_band(case, band)),
    };
    let limit_case = limited.as_ref().unwrap_or(case);

    let clock = Stopwatch::start();
    let model = PowerFlowModel::new(case)?;
    let sol = model.solve(&opts.solve)?;
    let nominal = evaluate_metrics(&sol, spec)?;
    let powerflow_seconds = clock.seconds();

    let clock = Stopwatch::start();
    let (sensitivity, row_checks) = hybrid_with_model(
        &model,
        model.base_injection(),
        &sol,
        params,
        spec,
        &opts.hybrid,
    )?;
    let sensitivity_seconds = clock.seconds();

    let clock = Stopwatch::start();
    let cov = params.covariance();
    let degenerate: Vec<BusId> = spec
        .iter()
        .zip(&sensitivity.values)
        .filter(|(_, l)| !(cov.quad_form(l) >= DEGENERATE_TOLERANCE))
        .map(|(m, _)| m.bus)
        .collect();

    let levels: Vec<(Option<f64>, Option<SigmaScale>)> = match &opts.sigma_c {
        SigmaC::Known { value, scale } => vec![(Some(*value), Some(*scale))],
        SigmaC::Sweep(grid) => grid
            .values()
            .iter()
            .map(|v| (Some(*v), Some(grid.scale())))
            .collect(),
        SigmaC::Propagated => vec![(None, None)],
    };
    let map = InjectionMap::new(&model, params).map_err(SensitivityError::from)?;
    let mut sweep = Vec::with_capacity(levels.len());
    for (value, scale) in levels {
        let mut results = Vec::with_capacity(spec.len());
        for ((m, &c_nom), lambda) in spec.iter().zip(&nominal).zip(&sensitivity.values) {
            let sigma = match (value, scale) {
                (Some(v), Some(s)) => s.apply(v, c_nom),
                _ => propagated_sigma(params, lambda),
            };
            let mut r = worst_case_result(*m, c_nom, sigma, opts.rho, params, lambda)?;
            if opts.resimulate {
                let metric = MetricSpec(vec![*m]);
                let resim = |e: &Option<Vec<f64>>| -> Result<Option<f64>, WorstCaseError> {
                    let Some(e) = e else { return Ok(None) };
                    let s = map.apply(model.base_injection(), e);
                    let v = model.solve_with(&s, &sol.v, &opts.solve)?;
                    Ok(Some(evaluate_metrics(&v, &metric)?[0]))
                };
                r.resim_ub = resim(&r.e_ub)?;
                r.resim_lb = resim(&r.e_lb)?;
            }
            results.push(r);
        }
        let violations = count_violations(&results, limit_case)?;
        sweep.push(SweepPoint {
            sigma_c: value,
            scale,
            results,
            violations,
        });
    }

    let mut overall: BTreeMap<BusId, usize> = BTreeMap::new();
    for p in &sweep {
        for t in &p.violations.per_bus {
            *overall.entry(t.bus).or_default() += t.ub + t.lb;
        }
    }
    let worst_violator = overall
        .iter()
        .fold(None::<(BusId, usize)>, |best, (&bus, &n)| match best {
            Some((_, m)) if m >= n => best,
            _ => Some((bus, n)),
        })
        .map(|(bus, _)| bus);
    let construction_seconds = clock.seconds();

    Ok(RmssReport {
        case: case.name.clone(),
        metrics: spec.0.clone(),
        parameters: params.labels(),
        means: params.means(),
        sigmas: params.sigmas(),
        rho: opts.rho,
        nominal,
        nominal_iterations: sol.iterations,
        sensitivity,
        row_checks,
        degenerate,
        remodeled: case.remodeled.clone(),
        sweep,
        worst_violator,
        timing: RmssTiming {
            total_seconds: total.seconds(),
            powerflow_seconds,
            sensitivity_seconds,
            construction_seconds,
        },
    })
}

impl RmssReport {
    /// Violation histogram: one row per σ_c.
    pub fn violations_csv(&self) -> String {
        let mut out = String::from("sigma_c,scale,ub_violations,lb_violations,total\n");
        for p in &self.sweep {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_sigma(p.sigma_c),
                fmt_scale(p.scale),
                p.violations.ub_total,
                p.violations.lb_total,
                p.violations.total()
            ));
        }
        out
    }

    /// Bounds of the overall worst violator at each σ_c. Header only when
    /// nothing is violated.
    pub fn worst_violator_csv(&self, case: &GridCase) -> String {
        let mut out = String::from("sigma_c,scale,bus,c_nom,c_ub,c_lb,v_max,v_min\n");
        let Some(bus) = self.worst_violator else {
            return out;
        };
        let (v_max, v_min) = case
            .bus(bus)
            .map_or((f64::NAN, f64::NAN), |b| (b.v_max, b.v_min));
        for p in &self.sweep {
            if let Some(r) = p.results.iter().find(|r| r.metric.bus == bus) {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    fmt_sigma(p.sigma_c),
                    fmt_scale(p.scale),
                    bus,
                    r.c_nom,
                    r.c_ub,
                    r.c_lb,
                    v_max,
                    v_min
                ));
            }
        }
        out
    }
}

fn fmt_sigma(v: Option<f64>) -> String {
    v.map_or_else(|| "propagated".to_string(), |v| format!("{v}"))
}

fn fmt_scale(s: Option<SigmaScale>) -> &'static str {
    match s {
        Some(SigmaScale::Relative) => "relative",
        Some(SigmaScale::Absolute) => "absolute",
        None => "pu",
    }
}
