//! First-order sensitivities of critical metrics with respect to essential
//! component injections.
//!
//! The primary route is the adjoint method: at a converged operating point
//! `F(x, p) = 0`, the gradient of a metric `c(x)` is
//! `dc/dp = −wᵀ ∂F/∂p` with `Jᵀ w = ∂c/∂x`, one transposed solve per metric
//! against the final Newton Jacobian. The network matrix does not depend on
//! injection parameters, so only the excitation term `∂F/∂p` contributes.
//! Central finite differences and Sobol indices back it up.

mod hybrid;
mod sobol;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hybrid::{hybrid_sensitivities, hybrid_with_model, refine_rows, HybridOptions, RowCheck};
pub use sobol::{
    sobol_first_order, sobol_first_order_inputs, InputDistribution, SobolIndices, SobolSequence,
};

use crate::grid::{BusId, BusKind, GridCase};
use crate::params::{Axis, InjectionMap, ParamError, StochasticParameterSet};
use crate::powerflow::{
    evaluate_metrics, Metric, MetricKind, MetricSpec, PowerFlowError, PowerFlowModel,
    PowerFlowSolution, SolveOptions,
};

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("base solution is not converged")]
    NotConverged,
    #[error("parameter {component} is on bus {bus}, which is not a PQ bus")]
    ParameterNotOnPq { component: String, bus: BusId },
    #[error("voltage at bus {0} is too close to zero to differentiate |V|")]
    VanishingVoltage(BusId),
    #[error("finite-difference step must be positive")]
    ZeroStep,
    #[error("model evaluation failed at sample {sample}: {message}")]
    ModelEvaluation { sample: usize, message: String },
    #[error("Sobol analysis needs n_base >= 64, got {0}")]
    TooFewSamples(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Adjoint,
    FiniteDifference,
    SobolRescaled,
}

/// `∂c_i/∂p_j`, one row per metric and one column per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMatrix {
    pub metrics: Vec<Metric>,
    pub parameters: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub methods: Vec<Method>,
    /// Linear solves spent producing the matrix.
    pub linear_solves: usize,
}

impl SensitivityMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn n_metrics(&self) -> usize {
        self.values.len()
    }

    pub fn n_params(&self) -> usize {
        self.parameters.len()
    }

    /// Comma-separated dump: header of parameter ids, one row per metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,method");
        for p in &self.parameters {
            out.push(',');
            out.push_str(p);
        }
        out.push('\n');
        for ((m, row), method) in self.metrics.iter().zip(&self.values).zip(&self.methods) {
            out.push_str(&m.label());
            out.push(',');
            out.push_str(match method {
                Method::Adjoint => "adjoint",
                Method::FiniteDifference => "finite-difference",
                Method::SobolRescaled => "sobol-rescaled",
            });
            for v in row {
                out.push_str(&format!(",{v:e}"));
            }
            out.push('\n');
        }
        out
    }
}

fn check_on_pq(
    model: &PowerFlowModel,
    params: &StochasticParameterSet,
) -> Result<(), SensitivityError> {
    for e in &params.entries {
        let idx = model
            .bus_index(e.bus)
            .ok_or(PowerFlowError::UnknownBus(e.bus))?;
        if model.kind(idx) != BusKind::PQ {
            return Err(SensitivityError::ParameterNotOnPq {
                component: e.component.clone(),
                bus: e.bus,
            });
        }
    }
    Ok(())
}

/// Adjoint sensitivities for a case and its converged nominal solution.
pub fn adjoint_sensitivities(
    case: &GridCase,
    sol: &PowerFlowSolution,
    params: &StochasticParameterSet,
    spec: &MetricSpec,
) -> Result<SensitivityMatrix, SensitivityError> {
    let model = PowerFlowModel::new(case)?;
    adjoint_with_model(&model, model.base_injection(), sol, params, spec)
}

/// Adjoint sensitivities on a prepared model at the solution of `s_spec`.
pub fn adjoint_with_model(
    model: &PowerFlowModel,
    s_spec: &[Complex64],
    sol: &PowerFlowSolution,
    params: &StochasticParameterSet,
    spec: &MetricSpec,
) -> Result<SensitivityMatrix, SensitivityError> {
    if !sol.converged {
        return Err(SensitivityError::NotConverged);
    }
    check_on_pq(model, params)?;
    let map = InjectionMap::new(model, params)?;
    let v = &sol.v;
    let n = model.n_unknowns();
    let lu = model.factor_jacobian(v, s_spec)?;

    // ∂F/∂p_j: the only dependence on an injection is conj(S_k)/conj(V_k) at its bus
    let excitation: Vec<(usize, Complex64)> = map
        .targets()
        .iter()
        .map(|&(bus, axis)| {
            let col = model.unknown_of(bus).expect("parameters sit on PQ buses");
            let d = match axis {
                Axis::P => Complex64::new(1.0, 0.0) / v[bus].conj(),
                Axis::Q => Complex64::new(0.0, -1.0) / v[bus].conj(),
            };
            (col, d)
        })
        .collect();

    let mut values = Vec::with_capacity(spec.len());
    for m in spec.iter() {
        let MetricKind::BusVoltageMagnitude = m.kind;
        let bus = model
            .bus_index(m.bus)
            .ok_or(PowerFlowError::UnknownBus(m.bus))?;
        let mut grad = vec![0.0; n];
        if let Some(col) = model.unknown_of(bus) {
            let mag = v[bus].norm();
            if mag <= 1e-9 {
                return Err(SensitivityError::VanishingVoltage(m.bus));
            }
            grad[col] = v[bus].re / mag;
            grad[col + 1] = v[bus].im / mag;
        }
        let w = lu.solve_transpose(&grad);
        values.push(
            excitation
                .iter()
                .map(|&(col, d)| -(w[col] * d.re + w[col + 1] * d.im))
                .collect(),
        );
    }

    Ok(SensitivityMatrix {
        metrics: spec.0.clone(),
        parameters: params.labels(),
        values,
        methods: vec![Method::Adjoint; spec.len()],
        linear_solves: lu.solve_count(),
    })
}

/// Central differences of a vector-valued function, one column per entry of
/// `steps`. Returns `out[i][j] = ∂f_i/∂x_j`.
pub fn central_difference<F, E>(mut f: F, x0: &[f64], steps: &[f64]) -> Result<Vec<Vec<f64>>, E>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, E>,
{
    let mut cols = Vec::with_capacity(x0.len());
    for (j, &h) in steps.iter().enumerate() {
        let mut x = x0.to_vec();
        x[j] = x0[j] + h;
        let up = f(&x)?;
        x[j] = x0[j] - h;
        let down = f(&x)?;
        cols.push(
            up.iter()
                .zip(&down)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect::<Vec<_>>(),
        );
    }
    let rows = cols.first().map_or(0, Vec::len);
    Ok((0..rows)
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect())
}

/// Central-difference sensitivities: two warm-started solves per parameter.
pub fn finite_difference_sensitivities(
    case: &GridCase,
    sol: &PowerFlowSolution,
    params: &StochasticParameterSet,
    spec: &MetricSpec,
    step: f64,
) -> Result<SensitivityMatrix, SensitivityError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(SensitivityError::ZeroStep);
    }
    let model = PowerFlowModel::new(case)?;
    let all: Vec<usize> = (0..params.dim()).collect();
    let steps = vec![step; params.dim()];
    let values = fd_columns(
        &model,
        model.base_injection(),
        sol,
        params,
        spec,
        &all,
        &steps,
        &fd_solve_options(),
    )?;
    Ok(SensitivityMatrix {
        metrics: spec.0.clone(),
        parameters: params.labels(),
        values,
        methods: vec![Method::FiniteDifference; spec.len()],
        linear_solves: 0,
    })
}

/// Perturbed solves are converged well past the default tolerance: their
/// residual error is divided by the step in the difference quotient.
pub(crate) fn fd_solve_options() -> SolveOptions {
    SolveOptions {
        tolerance: 1e-12,
        ..SolveOptions::default()
    }
}

/// Central differences for the parameter subset `columns`, returning a
/// `metrics × columns.len()` block.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fd_columns(
    model: &PowerFlowModel,
    s_spec: &[Complex64],
    sol: &PowerFlowSolution,
    params: &StochasticParameterSet,
    spec: &MetricSpec,
    columns: &[usize],
    steps: &[f64],
    opts: &SolveOptions,
) -> Result<Vec<Vec<f64>>, SensitivityError> {
    if !sol.converged {
        return Err(SensitivityError::NotConverged);
    }
    if steps.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(SensitivityError::ZeroStep);
    }
    let map = InjectionMap::new(model, params)?;
    let x0 = vec![0.0; columns.len()];
    central_difference(
        |dx: &[f64]| -> Result<Vec<f64>, SensitivityError> {
            let mut s = s_spec.to_vec();
            for (&j, &d) in columns.iter().zip(dx) {
                if d != 0.0 {
                    s = map.shift(&s, j, d);
                }
            }
            let perturbed = model.solve_with(&s, &sol.v, opts)?;
            Ok(evaluate_metrics(&perturbed, spec)?)
        },
        &x0,
        steps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fixtures::*;
    use crate::grid::{tag_essential, Selector};
    use crate::params::{Axes, Spread};
    use crate::powerflow::solve_power_flow;

    fn two_bus_setup() -> (GridCase, PowerFlowSolution, StochasticParameterSet) {
        let case = tag_essential(&two_bus(0.1, 1.0, 0.0), &Selector::All).unwrap();
        let sol = solve_power_flow(&case, &SolveOptions::default()).unwrap();
        let params =
            StochasticParameterSet::from_case(&case, Axes::PQ, Spread::Absolute(0.02)).unwrap();
        (case, sol, params)
    }

    #[test]
    fn slack_metric_row_is_zero() {
        let (case, sol, params) = two_bus_setup();
        let s = adjoint_sensitivities(&case, &sol, &params, &MetricSpec::voltages([1])).unwrap();
        assert!(s.row(0).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn two_bus_adjoint_matches_finite_difference() {
        let (case, sol, params) = two_bus_setup();
        let spec = MetricSpec::voltages([2]);
        let adj = adjoint_sensitivities(&case, &sol, &params, &spec).unwrap();
        let fd = finite_difference_sensitivities(&case, &sol, &params, &spec, 1e-6).unwrap();
        for j in 0..2 {
            let (a, f) = (adj.values[0][j], fd.values[0][j]);
            assert!((a - f).abs() <= 1e-6 * f.abs(), "param {j}: {a} vs {f}");
        }
        // more load (more negative injection) lowers the voltage
        assert!(adj.values[0][0] > 0.0);
        assert_eq!(adj.linear_solves, 1);
    }

    #[test]
    fn two_bus_adjoint_matches_implicit_derivative() {
        // lossless two-bus with Q = 0: |V2| = cos θ and P_load = sin 2θ / (2X),
        // so d|V2|/dP_load = −X sin θ / cos 2θ
        let (case, sol, params) = two_bus_setup();
        let adj = adjoint_sensitivities(&case, &sol, &params, &MetricSpec::voltages([2])).unwrap();
        let theta = (0.2_f64).asin() / 2.0;
        let dv_dpload = -0.1 * theta.sin() / (2.0 * theta).cos();
        // parameter is the injection, the negated load
        assert!((adj.values[0][0] + dv_dpload).abs() < 1e-9);
    }

    #[test]
    fn zero_step_rejected() {
        let (case, sol, params) = two_bus_setup();
        let err =
            finite_difference_sensitivities(&case, &sol, &params, &MetricSpec::voltages([2]), 0.0);
        assert!(matches!(err, Err(SensitivityError::ZeroStep)));
    }

    #[test]
    fn linear_model_difference_is_step_independent() {
        let f = |x: &[f64]| -> Result<Vec<f64>, ()> { Ok(vec![3.0 * x[0] - 2.0 * x[1] + 1.0]) };
        let a = central_difference(f, &[0.3, -0.2], &[1e-3, 1e-3]).unwrap();
        let b = central_difference(f, &[0.3, -0.2], &[0.5, 0.25]).unwrap();
        assert!((a[0][0] - 3.0).abs() < 1e-12 && (b[0][0] - 3.0).abs() < 1e-15);
        assert!((a[0][1] + 2.0).abs() < 1e-12 && (b[0][1] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn pv_parameter_is_rejected() {
        let (case, sol, _) = two_bus_setup();
        let params = StochasticParameterSet::independent(vec![crate::params::ParameterEntry {
            component: "g1".into(),
            bus: 1,
            axis: Axis::P,
            mean: 0.0,
            sigma: 0.1,
        }])
        .unwrap();
        let err = adjoint_sensitivities(&case, &sol, &params, &MetricSpec::voltages([2]));
        assert!(matches!(
            err,
            Err(SensitivityError::ParameterNotOnPq { .. })
        ));
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let (case, sol, params) = two_bus_setup();
        let s = adjoint_sensitivities(&case, &sol, &params, &MetricSpec::voltages([1, 2])).unwrap();
        let csv = s.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "metric,method,l2:P,l2:Q");
        assert!(lines[2].starts_with("vm2,adjoint,"));
        assert_eq!(lines.len(), 3);
    }
}
