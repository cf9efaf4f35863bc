//! Hybrid sensitivities: adjoint rows by default, with a statistical
//! fallback for metrics whose behaviour is too nonlinear for a local
//! gradient to describe.
//!
//! Detection cross-checks the adjoint gradient against central differences
//! taken over the parameter spread (±`probe_sigmas`·σ) on the few parameters
//! with the largest sensitivities. A row whose relative disagreement exceeds
//! the threshold is re-estimated from Sobol-derived signed slopes.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    adjoint_with_model, fd_columns, fd_solve_options, sobol_first_order, Method, SensitivityError,
    SensitivityMatrix,
};
use crate::grid::GridCase;
use crate::params::{InjectionMap, StochasticParameterSet};
use crate::powerflow::{
    evaluate_metrics, MetricSpec, PowerFlowModel, PowerFlowSolution, SolveOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridOptions {
    /// Relative adjoint/difference disagreement above which a row is redone.
    pub threshold: f64,
    /// Number of parameters probed by finite differences.
    pub probe_params: usize,
    /// Probe half-step in units of each parameter's standard deviation.
    pub probe_sigmas: f64,
    pub sobol_n_base: usize,
    pub seed: u64,
    /// Denominator floor for the relative disagreement.
    pub floor: f64,
}

impl Default for HybridOptions {
    fn default() -> Self {
        Self {
            threshold: 0.02,
            probe_params: 4,
            probe_sigmas: 1.0,
            sobol_n_base: 64,
            seed: 0,
            floor: 1e-8,
        }
    }
}

/// Outcome of the nonlinearity check for one metric row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCheck {
    pub metric: usize,
    pub disagreement: f64,
    pub nonlinear: bool,
}

/// Compares `matrix` against difference estimates `probe_values` (one row
/// per metric, one entry per column of `probe_cols`) and replaces rows that
/// disagree by more than `threshold` with the output of `fallback`, which
/// receives the flagged row indices and returns one row per index.
pub fn refine_rows<E>(
    matrix: &mut SensitivityMatrix,
    probe_cols: &[usize],
    probe_values: &[Vec<f64>],
    threshold: f64,
    floor: f64,
    fallback: impl FnOnce(&[usize]) -> Result<Vec<Vec<f64>>, E>,
) -> Result<Vec<RowCheck>, E> {
    let checks: Vec<RowCheck> = probe_values
        .iter()
        .enumerate()
        .map(|(i, fd)| {
            let scale = fd.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(floor);
            let diff = probe_cols
                .iter()
                .zip(fd)
                .fold(0.0_f64, |m, (&j, f)| m.max((matrix.values[i][j] - f).abs()));
            let disagreement = diff / scale;
            RowCheck {
                metric: i,
                disagreement,
                nonlinear: disagreement > threshold,
            }
        })
        .collect();
    let flagged: Vec<usize> = checks
        .iter()
        .filter(|c| c.nonlinear)
        .map(|c| c.metric)
        .collect();
    if !flagged.is_empty() {
        let rows = fallback(&flagged)?;
        for (&i, row) in flagged.iter().zip(rows) {
            matrix.values[i] = row;
            matrix.methods[i] = Method::SobolRescaled;
        }
    }
    Ok(checks)
}

/// Columns with the largest adjoint sensitivities, ties to the lower index.
fn probe_columns(matrix: &SensitivityMatrix, count: usize) -> Vec<usize> {
    let mut cols: Vec<(usize, f64)> = (0..matrix.n_params())
        .map(|j| {
            let m = matrix.values.iter().fold(0.0_f64, |m, r| m.max(r[j].abs()));
            (j, m)
        })
        .collect();
    cols.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<usize> = cols.into_iter().take(count).map(|(j, _)| j).collect();
    out.sort_unstable();
    out
}

pub fn hybrid_with_model(
    model: &PowerFlowModel,
    s_spec: &[Complex64],
    sol: &PowerFlowSolution,
    params: &StochasticParameterSet,
    spec: &MetricSpec,
    opts: &HybridOptions,
) -> Result<(SensitivityMatrix, Vec<RowCheck>), SensitivityError> {
    let mut matrix = adjoint_with_model(model, s_spec, sol, params, spec)?;
    let cols = probe_columns(&matrix, opts.probe_params);
    if cols.is_empty() || spec.is_empty() {
        return Ok((matrix, Vec::new()));
    }
    let sigmas = params.sigmas();
    let steps: Vec<f64> = cols
        .iter()
        .map(|&j| (opts.probe_sigmas * sigmas[j]).max(1e-6))
        .collect();
    let fd = fd_columns(
        model,
        s_spec,
        sol,
        params,
        spec,
        &cols,
        &steps,
        &fd_solve_options(),
    )?;

    let checks = refine_rows(
        &mut matrix,
        &cols,
        &fd,
        opts.threshold,
        opts.floor,
        |rows| {
            let map = InjectionMap::new(model, params)?;
            let sub = MetricSpec(rows.iter().map(|&i| spec.0[i]).collect());
            let solve = SolveOptions::default();
            let evaluate = |x: &[f64]| -> Result<Vec<f64>, String> {
                let s = map.apply(s_spec, x);
                let perturbed = model
                    .solve_with(&s, &sol.v, &solve)
                    .map_err(|e| e.to_string())?;
                evaluate_metrics(&perturbed, &sub).map_err(|e| e.to_string())
            };
            let indices = sobol_first_order(evaluate, params, opts.sobol_n_base, opts.seed)?;
            Ok::<_, SensitivityError>(indices.slopes)
        },
    )?;
    Ok((matrix, checks))
}

/// Adjoint sensitivities with the statistical fallback for nonlinear rows.
pub fn hybrid_sensitivities(
    case: &GridCase,
    sol: &PowerFlowSolution,
    params: &StochasticParameterSet,
    spec: &MetricSpec,
    opts: &HybridOptions,
) -> Result<SensitivityMatrix, SensitivityError> {
    let model = PowerFlowModel::new(case)?;
    hybrid_with_model(&model, model.base_injection(), sol, params, spec, opts).map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fixtures::*;
    use crate::grid::{tag_essential, Selector};
    use crate::params::{Axes, Spread};
    use crate::powerflow::solve_power_flow;

    fn matrix(values: Vec<Vec<f64>>) -> SensitivityMatrix {
        let n = values.len();
        SensitivityMatrix {
            metrics: (0..n as u32)
                .map(|b| crate::powerflow::Metric::voltage(b + 1))
                .collect(),
            parameters: (0..values[0].len()).map(|j| format!("p{j}")).collect(),
            methods: vec![Method::Adjoint; n],
            values,
            linear_solves: n,
        }
    }

    #[test]
    fn disagreeing_row_is_retagged() {
        let mut m = matrix(vec![vec![1.0, 0.5], vec![2.0, -1.0]]);
        // row 1 disagrees by 10%, row 0 by 1%
        let fd = vec![vec![1.01, 0.5], vec![2.2, -1.0]];
        let checks = refine_rows(&mut m, &[0, 1], &fd, 0.02, 1e-8, |rows| {
            assert_eq!(rows, &[1]);
            Ok::<_, ()>(vec![vec![2.1, -0.9]])
        })
        .unwrap();
        assert!(!checks[0].nonlinear && checks[1].nonlinear);
        assert!((checks[1].disagreement - 0.2 / 2.2).abs() < 1e-12);
        assert_eq!(m.methods, vec![Method::Adjoint, Method::SobolRescaled]);
        assert_eq!(m.values[1], vec![2.1, -0.9]);
        assert_eq!((m.n_metrics(), m.n_params()), (2, 2));
    }

    #[test]
    fn agreeing_rows_skip_fallback() {
        let mut m = matrix(vec![vec![1.0, 0.5]]);
        let checks = refine_rows(
            &mut m,
            &[1],
            &[vec![0.5]],
            0.02,
            1e-8,
            |_| -> Result<Vec<Vec<f64>>, ()> { panic!("fallback must not run") },
        )
        .unwrap();
        assert!(!checks[0].nonlinear);
    }

    #[test]
    fn smooth_case_stays_adjoint() {
        let case = tag_essential(&mixed_fleet(), &Selector::AllSolar).unwrap();
        let sol = solve_power_flow(&case, &SolveOptions::default()).unwrap();
        let params =
            StochasticParameterSet::from_case(&case, Axes::P, Spread::Relative(0.02)).unwrap();
        let spec = MetricSpec::nonzero_injection_pq(&case);
        let h =
            hybrid_sensitivities(&case, &sol, &params, &spec, &HybridOptions::default()).unwrap();
        assert!(h.methods.iter().all(|m| *m == Method::Adjoint));
        assert_eq!(h.n_metrics(), spec.len());
        assert_eq!(h.n_params(), params.dim());
    }

    #[test]
    fn forced_fallback_keeps_shape_and_sign() {
        let case = tag_essential(&two_bus(0.1, 1.0, 0.0), &Selector::All).unwrap();
        let sol = solve_power_flow(&case, &SolveOptions::default()).unwrap();
        let params =
            StochasticParameterSet::from_case(&case, Axes::PQ, Spread::Relative(0.05)).unwrap();
        let spec = MetricSpec::voltages([2]);
        let model = PowerFlowModel::new(&case).unwrap();
        let opts = HybridOptions {
            threshold: -1.0,
            sobol_n_base: 256,
            ..HybridOptions::default()
        };
        let (h, checks) =
            hybrid_with_model(&model, model.base_injection(), &sol, &params, &spec, &opts).unwrap();
        assert!(checks[0].nonlinear);
        assert_eq!(h.methods, vec![Method::SobolRescaled]);
        let adj = adjoint_sensitivities_2bus(&case, &sol, &params, &spec);
        // the regression slope recovers the adjoint value; Q has no spread
        assert!(
            (h.values[0][0] - adj[0]).abs() < 0.05 * adj[0].abs(),
            "{:?} vs {adj:?}",
            h.values
        );
        assert_eq!(h.values[0][1], 0.0);
    }

    fn adjoint_sensitivities_2bus(
        case: &GridCase,
        sol: &PowerFlowSolution,
        params: &StochasticParameterSet,
        spec: &MetricSpec,
    ) -> Vec<f64> {
        super::super::adjoint_sensitivities(case, sol, params, spec)
            .unwrap()
            .values[0]
            .clone()
    }
}
