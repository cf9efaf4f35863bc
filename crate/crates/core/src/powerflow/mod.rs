//! Steady-state AC power flow.
//!
//! Newton iteration on current-injection equations in rectangular voltage
//! coordinates. Each non-slack bus contributes two real unknowns `(e, f)`
//! with `V = e + jf`. PQ buses contribute the real and imaginary parts of the
//! current mismatch
//!
//! ```text
//! ΔI_k = conj(S_k) / conj(V_k) − (Y V)_k
//! ```
//!
//! and PV buses contribute an active-power mismatch plus `Vset² − |V|²`.
//! At every iterate the update solves a linearized network system, and the
//! Jacobian at the converged point is the one the adjoint pass reuses.

mod admittance;

use std::collections::HashMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use admittance::{build_admittance, AdmittanceMatrix};

use crate::grid::{BusId, BusKind, GridCase};
use crate::linalg::{DenseMatrix, LuFactor};

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("power flow did not converge in {iterations} iterations (mismatch {max_mismatch:.3e} pu)", iterations = .best.iterations, max_mismatch = .best.max_mismatch)]
    NonConvergence { best: Box<PowerFlowSolution> },
    #[error("Jacobian is singular at bus {bus}")]
    JacobianSingular { bus: BusId },
    #[error("bus {0} has no incident admittance")]
    FloatingBus(BusId),
    #[error("case has no slack bus")]
    NoSlack,
    #[error("solution is not converged")]
    NotConverged,
    #[error("unknown bus {0}")]
    UnknownBus(BusId),
    #[error("expected {expected} values, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Convergence threshold on the largest power mismatch, pu.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Start from `1.0∠0` (setpoint magnitude at voltage-controlled buses)
    /// instead of the voltages stored in the case.
    pub flat_start: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iter: 50,
            flat_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub bus_ids: Vec<BusId>,
    /// Complex bus voltages in case bus order, pu.
    pub v: Vec<Complex64>,
    pub iterations: usize,
    /// Largest |ΔP| (all non-slack buses) or |ΔQ| (PQ buses), pu.
    pub max_mismatch: f64,
    pub converged: bool,
    /// Mismatch before the first update and after each iteration.
    pub mismatch_history: Vec<f64>,
}

impl PowerFlowSolution {
    pub fn voltage(&self, bus: BusId) -> Option<Complex64> {
        self.bus_ids
            .iter()
            .position(|&b| b == bus)
            .map(|i| self.v[i])
    }
}

/// Network prepared for repeated solves with different injections.
///
/// Immutable after construction; shared freely across threads.
#[derive(Debug, Clone)]
pub struct PowerFlowModel {
    bus_ids: Vec<BusId>,
    index: HashMap<BusId, usize>,
    kinds: Vec<BusKind>,
    v_set: Vec<f64>,
    angle_set: Vec<f64>,
    slack: usize,
    /// Position of each bus among the unknowns, `None` for the slack.
    var: Vec<Option<usize>>,
    var_bus: Vec<usize>,
    y: AdmittanceMatrix,
    base_injection: Vec<Complex64>,
}

impl PowerFlowModel {
    pub fn new(case: &GridCase) -> Result<Self, PowerFlowError> {
        let y = build_admittance(case);
        if let Some(&b) = y.floating_buses.first() {
            return Err(PowerFlowError::FloatingBus(b));
        }
        let slack = case
            .buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .ok_or(PowerFlowError::NoSlack)?;
        let mut var = vec![None; case.buses.len()];
        let mut var_bus = Vec::new();
        for (i, v) in var.iter_mut().enumerate() {
            if i != slack {
                *v = Some(var_bus.len());
                var_bus.push(i);
            }
        }
        Ok(Self {
            bus_ids: case.buses.iter().map(|b| b.id).collect(),
            index: case
                .buses
                .iter()
                .enumerate()
                .map(|(i, b)| (b.id, i))
                .collect(),
            kinds: case.buses.iter().map(|b| b.kind).collect(),
            v_set: case.buses.iter().map(|b| b.v_setpoint).collect(),
            angle_set: case.buses.iter().map(|b| b.angle_setpoint).collect(),
            slack,
            var,
            var_bus,
            y,
            base_injection: case
                .net_injections()
                .into_iter()
                .map(|(p, q)| Complex64::new(p, q))
                .collect(),
        })
    }

    pub fn n_buses(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn n_unknowns(&self) -> usize {
        2 * self.var_bus.len()
    }

    pub fn bus_ids(&self) -> &[BusId] {
        &self.bus_ids
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn kind(&self, bus_index: usize) -> BusKind {
        self.kinds[bus_index]
    }

    /// Column of the real part of bus `bus_index` among the unknowns.
    pub fn unknown_of(&self, bus_index: usize) -> Option<usize> {
        self.var[bus_index].map(|k| 2 * k)
    }

    pub fn admittance(&self) -> &AdmittanceMatrix {
        &self.y
    }

    /// Net specified injection per bus from the case data.
    pub fn base_injection(&self) -> &[Complex64] {
        &self.base_injection
    }

    pub fn flat_start(&self) -> Vec<Complex64> {
        (0..self.n_buses())
            .map(|i| match self.kinds[i] {
                BusKind::Slack => Complex64::from_polar(self.v_set[i], self.angle_set[i]),
                BusKind::PV => Complex64::new(self.v_set[i], 0.0),
                BusKind::PQ => Complex64::new(1.0, 0.0),
            })
            .collect()
    }

    pub fn case_start(&self) -> Vec<Complex64> {
        (0..self.n_buses())
            .map(|i| Complex64::from_polar(self.v_set[i], self.angle_set[i]))
            .collect()
    }

    /// Power mismatch `S_spec − V∘conj(YV)` restricted to the specified
    /// quantities: P at all non-slack buses, Q at PQ buses.
    pub fn max_power_mismatch(&self, v: &[Complex64], s_spec: &[Complex64]) -> f64 {
        let i = self.y.mul_vec(v);
        let mut worst = 0.0_f64;
        for k in 0..self.n_buses() {
            if k == self.slack {
                continue;
            }
            let ds = s_spec[k] - v[k] * i[k].conj();
            let m = match self.kinds[k] {
                BusKind::PQ => ds.re.abs().max(ds.im.abs()),
                _ => ds.re.abs(),
            };
            if m.is_nan() {
                return f64::INFINITY;
            }
            worst = worst.max(m);
        }
        worst
    }

    fn voltage_residual(&self, v: &[Complex64]) -> f64 {
        (0..self.n_buses())
            .filter(|&k| self.kinds[k] == BusKind::PV)
            .map(|k| (v[k].norm() - self.v_set[k]).abs())
            .fold(0.0, f64::max)
    }

    /// Newton residual `F(x)` in unknown order.
    pub fn residual(&self, v: &[Complex64], s_spec: &[Complex64]) -> Vec<f64> {
        let i = self.y.mul_vec(v);
        let mut f = vec![0.0; self.n_unknowns()];
        for (m, &k) in self.var_bus.iter().enumerate() {
            match self.kinds[k] {
                BusKind::PQ => {
                    let d = (s_spec[k] / v[k]).conj() - i[k];
                    f[2 * m] = d.re;
                    f[2 * m + 1] = d.im;
                }
                _ => {
                    f[2 * m] = s_spec[k].re - (v[k] * i[k].conj()).re;
                    f[2 * m + 1] = self.v_set[k] * self.v_set[k] - v[k].norm_sqr();
                }
            }
        }
        f
    }

    /// `∂F/∂x` at `v`.
    pub fn jacobian(&self, v: &[Complex64], s_spec: &[Complex64]) -> DenseMatrix {
        let n = self.n_unknowns();
        let mut jac = DenseMatrix::zeros(n);
        let i = self.y.mul_vec(v);
        for (m, &k) in self.var_bus.iter().enumerate() {
            let (r0, r1) = (2 * m, 2 * m + 1);
            match self.kinds[k] {
                BusKind::PQ => {
                    for &(l, y) in self.y.row(k) {
                        if let Some(c) = self.var[l] {
                            let (c0, c1) = (2 * c, 2 * c + 1);
                            jac[(r0, c0)] -= y.re;
                            jac[(r1, c0)] -= y.im;
                            jac[(r0, c1)] += y.im;
                            jac[(r1, c1)] -= y.re;
                        }
                    }
                    let vc = v[k].conj();
                    let d = -s_spec[k].conj() / (vc * vc);
                    let c0 = 2 * m;
                    jac[(r0, c0)] += d.re;
                    jac[(r1, c0)] += d.im;
                    jac[(r0, c0 + 1)] += d.im;
                    jac[(r1, c0 + 1)] -= d.re;
                }
                _ => {
                    let (e, f) = (v[k].re, v[k].im);
                    for &(l, y) in self.y.row(k) {
                        if let Some(c) = self.var[l] {
                            let (g, b) = (y.re, y.im);
                            jac[(r0, 2 * c)] -= e * g + f * b;
                            jac[(r0, 2 * c + 1)] -= f * g - e * b;
                        }
                    }
                    let c0 = 2 * m;
                    jac[(r0, c0)] -= i[k].re;
                    jac[(r0, c0 + 1)] -= i[k].im;
                    jac[(r1, c0)] = -2.0 * e;
                    jac[(r1, c0 + 1)] = -2.0 * f;
                }
            }
        }
        jac
    }

    /// Factorizes the Jacobian, naming the bus of a failing pivot.
    pub fn factor_jacobian(
        &self,
        v: &[Complex64],
        s_spec: &[Complex64],
    ) -> Result<LuFactor, PowerFlowError> {
        LuFactor::new(&self.jacobian(v, s_spec)).map_err(|p| PowerFlowError::JacobianSingular {
            bus: self.bus_ids[self.var_bus[p.column / 2]],
        })
    }

    /// Solves with injections from the case and the start chosen by `opts`.
    pub fn solve(&self, opts: &SolveOptions) -> Result<PowerFlowSolution, PowerFlowError> {
        let v0 = if opts.flat_start {
            self.flat_start()
        } else {
            self.case_start()
        };
        self.solve_with(&self.base_injection, &v0, opts)
    }

    /// Solves for arbitrary specified injections from the initial point `v0`.
    /// Slack voltage and PV magnitudes are reset to their setpoints first.
    pub fn solve_with(
        &self,
        s_spec: &[Complex64],
        v0: &[Complex64],
        opts: &SolveOptions,
    ) -> Result<PowerFlowSolution, PowerFlowError> {
        let n = self.n_buses();
        for len in [s_spec.len(), v0.len()] {
            if len != n {
                return Err(PowerFlowError::Dimension {
                    expected: n,
                    got: len,
                });
            }
        }
        let mut v = v0.to_vec();
        v[self.slack] = Complex64::from_polar(self.v_set[self.slack], self.angle_set[self.slack]);
        for k in 0..n {
            if self.kinds[k] == BusKind::PV && v[k].norm() > 0.0 {
                let scale = self.v_set[k] / v[k].norm();
                v[k] *= scale;
            }
        }

        let done = |v: &[Complex64], mis: f64| {
            mis <= opts.tolerance && self.voltage_residual(v) <= opts.tolerance
        };
        let mut mismatch = self.max_power_mismatch(&v, s_spec);
        let mut history = vec![mismatch];
        let mut best = (mismatch, v.clone(), 0);
        let mut iterations = 0;
        let mut converged = done(&v, mismatch);

        while !converged && iterations < opts.max_iter {
            let lu = self.factor_jacobian(&v, s_spec)?;
            let f = self.residual(&v, s_spec);
            let neg: Vec<f64> = f.iter().map(|x| -x).collect();
            let dx = lu.solve(&neg);
            for (m, &k) in self.var_bus.iter().enumerate() {
                v[k] += Complex64::new(dx[2 * m], dx[2 * m + 1]);
            }
            iterations += 1;
            mismatch = self.max_power_mismatch(&v, s_spec);
            history.push(mismatch);
            if !mismatch.is_finite() {
                break;
            }
            if mismatch < best.0 {
                best = (mismatch, v.clone(), iterations);
            }
            converged = done(&v, mismatch);
        }

        if converged {
            Ok(PowerFlowSolution {
                bus_ids: self.bus_ids.clone(),
                v,
                iterations,
                max_mismatch: mismatch,
                converged: true,
                mismatch_history: history,
            })
        } else {
            Err(PowerFlowError::NonConvergence {
                best: Box::new(PowerFlowSolution {
                    bus_ids: self.bus_ids.clone(),
                    v: best.1,
                    iterations,
                    max_mismatch: best.0,
                    converged: false,
                    mismatch_history: history,
                }),
            })
        }
    }
}

pub fn solve_power_flow(
    case: &GridCase,
    opts: &SolveOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    PowerFlowModel::new(case)?.solve(opts)
}

// ---------------------------------------------------------------------------
// metrics

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    BusVoltageMagnitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metric {
    pub kind: MetricKind,
    pub bus: BusId,
}

impl Metric {
    pub fn voltage(bus: BusId) -> Self {
        Self {
            kind: MetricKind::BusVoltageMagnitude,
            bus,
        }
    }

    pub fn label(&self) -> String {
        format!("vm{}", self.bus)
    }
}

/// Ordered list of critical performance metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec(pub Vec<Metric>);

impl MetricSpec {
    pub fn voltages(buses: impl IntoIterator<Item = BusId>) -> Self {
        Self(buses.into_iter().map(Metric::voltage).collect())
    }

    /// Voltage magnitude at every PQ bus with a nonzero injection.
    pub fn nonzero_injection_pq(case: &GridCase) -> Self {
        Self::voltages(case.nonzero_injection_pq_buses())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Metric> {
        self.0.iter()
    }
}

pub type MetricVector = Vec<f64>;

/// `|V|` at each metric bus, in spec order.
pub fn evaluate_metrics(
    sol: &PowerFlowSolution,
    spec: &MetricSpec,
) -> Result<MetricVector, PowerFlowError> {
    if !sol.converged {
        return Err(PowerFlowError::NotConverged);
    }
    spec.iter()
        .map(|m| match m.kind {
            MetricKind::BusVoltageMagnitude => sol
                .voltage(m.bus)
                .map(|v| v.norm())
                .ok_or(PowerFlowError::UnknownBus(m.bus)),
        })
        .collect()
}
