//! Browser bindings for the demo page in `www/`.
//!
//! Every export takes MATPOWER case text and returns a JSON string, so the
//! page needs nothing beyond `JSON.parse`. The same functions are callable
//! natively through the `*_json` variants, which is how they are tested.

use serde::Serialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use rmss_core::grid::{parse_matpower, tag_essential, BusId, GridCase, Selector};
use rmss_core::montecarlo::{mae_compare, run_monte_carlo, McOptions};
use rmss_core::params::{Axes, Spread, StochasticParameterSet};
use rmss_core::powerflow::{MetricSpec, PowerFlowModel, SolveOptions};
use rmss_core::worstcase::{apply_setpoint_band, run_rmss, Limits, RmssOptions, SigmaC};

const CASES: [(&str, &str); 3] = [
    ("case2", include_str!("../../core/cases/case2.m")),
    (
        "case14_solar",
        include_str!("../../core/cases/case14_solar.m"),
    ),
    ("synth118", include_str!("../../core/cases/synth118.m")),
];

/// Text of a bundled case, or an empty string for an unknown name.
#[wasm_bindgen]
pub fn bundled_case(name: &str) -> String {
    CASES
        .iter()
        .find(|(n, _)| *n == name)
        .map_or_else(String::new, |(_, t)| (*t).to_string())
}

/// Names of the bundled cases as a JSON array.
#[wasm_bindgen]
pub fn bundled_cases() -> String {
    serde_json::to_string(&CASES.iter().map(|(n, _)| *n).collect::<Vec<_>>()).unwrap_or_default()
}

/// Nominal power flow: per-bus magnitude, angle and limits.
#[wasm_bindgen]
pub fn solve(case_text: &str) -> Result<String, JsError> {
    to_js(solve_json(case_text))
}

/// Worst-case bounds and violation counts over the default σ_c sweep.
#[wasm_bindgen]
pub fn sweep(
    case_text: &str,
    essential: &str,
    sigma_p: &str,
    band: f64,
) -> Result<String, JsError> {
    to_js(sweep_json(case_text, essential, sigma_p, band))
}

/// RMSS with propagated σ_c against a seeded Monte Carlo run.
#[wasm_bindgen]
pub fn validate(
    case_text: &str,
    essential: &str,
    sigma_p: &str,
    samples: usize,
    seed: u64,
) -> Result<String, JsError> {
    to_js(validate_json(case_text, essential, sigma_p, samples, seed))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn load(case_text: &str, essential: &str) -> Result<GridCase, String> {
    let case = parse_matpower(case_text, "case").map_err(err)?;
    let selector: Selector = essential.parse()?;
    tag_essential(&case, &selector).map_err(err)
}

fn problem(
    case_text: &str,
    essential: &str,
    sigma_p: &str,
) -> Result<(GridCase, StochasticParameterSet, MetricSpec), String> {
    let case = load(case_text, essential)?;
    let spread: Spread = sigma_p.parse()?;
    let params = StochasticParameterSet::from_case(&case, Axes::P, spread).map_err(err)?;
    let spec = MetricSpec::nonzero_injection_pq(&case);
    if spec.is_empty() {
        return Err("the case has no loaded PQ buses to monitor".into());
    }
    Ok((case, params, spec))
}

#[derive(Serialize)]
struct BusVoltage {
    bus: BusId,
    vm: f64,
    va_deg: f64,
    v_max: f64,
    v_min: f64,
}

pub fn solve_json(case_text: &str) -> Result<Value, String> {
    let case = parse_matpower(case_text, "case").map_err(err)?;
    let model = PowerFlowModel::new(&case).map_err(err)?;
    let sol = model.solve(&SolveOptions::default()).map_err(err)?;
    let buses: Vec<BusVoltage> = case
        .buses
        .iter()
        .zip(&sol.v)
        .map(|(b, v)| BusVoltage {
            bus: b.id,
            vm: v.norm(),
            va_deg: v.arg().to_degrees(),
            v_max: b.v_max,
            v_min: b.v_min,
        })
        .collect();
    Ok(json!({
        "iterations": sol.iterations,
        "mismatch_history": sol.mismatch_history,
        "buses": buses,
    }))
}

pub fn sweep_json(
    case_text: &str,
    essential: &str,
    sigma_p: &str,
    band: f64,
) -> Result<Value, String> {
    let (case, params, spec) = problem(case_text, essential, sigma_p)?;
    let opts = RmssOptions {
        limits: Limits::SetpointBand(band),
        ..RmssOptions::default()
    };
    let report = run_rmss(&case, &params, &spec, &opts).map_err(err)?;
    let limited = apply_setpoint_band(&case, band);
    let points: Vec<Value> = report
        .sweep
        .iter()
        .map(|p| {
            json!({
                "sigma_c": p.sigma_c,
                "ub": p.violations.ub_total,
                "lb": p.violations.lb_total,
                "total": p.violations.total(),
            })
        })
        .collect();
    let worst = report.worst_violator.map(|bus| {
        let i = report
            .metrics
            .iter()
            .position(|m| m.bus == bus)
            .unwrap_or(0);
        let b = limited.bus(bus);
        json!({
            "bus": bus,
            "c_nom": report.nominal[i],
            "v_max": b.map(|b| b.v_max),
            "v_min": b.map(|b| b.v_min),
            "c_ub": report.sweep.iter().map(|p| p.results[i].c_ub).collect::<Vec<_>>(),
            "c_lb": report.sweep.iter().map(|p| p.results[i].c_lb).collect::<Vec<_>>(),
        })
    });
    Ok(json!({
        "metrics": report.metrics.len(),
        "parameters": report.parameters,
        "sweep": points,
        "worst_violator": worst,
    }))
}

pub fn validate_json(
    case_text: &str,
    essential: &str,
    sigma_p: &str,
    samples: usize,
    seed: u64,
) -> Result<Value, String> {
    let (case, params, spec) = problem(case_text, essential, sigma_p)?;
    let opts = RmssOptions {
        sigma_c: SigmaC::Propagated,
        ..RmssOptions::default()
    };
    let rmss = run_rmss(&case, &params, &spec, &opts).map_err(err)?;
    let mc_opts = McOptions {
        samples,
        seed,
        keep_samples: true,
        ..McOptions::default()
    };
    let mc = run_monte_carlo(&case, &params, &spec, &mc_opts).map_err(err)?;
    let cmp = mae_compare(&rmss, &mc).map_err(err)?;
    // the metric with the widest Monte Carlo interval is the one plotted
    let k = mc
        .statistics
        .metrics
        .iter()
        .enumerate()
        .max_by(|a, b| (a.1.ci_ub - a.1.ci_lb).total_cmp(&(b.1.ci_ub - b.1.ci_lb)))
        .map_or(0, |(k, _)| k);
    let values: Vec<f64> = mc
        .sample_metrics
        .as_ref()
        .map_or_else(Vec::new, |rows| rows.iter().map(|r| r[k]).collect());
    let bounds = &rmss.sweep[0].results[k];
    Ok(json!({
        "comparison": cmp,
        "metric": mc.statistics.metrics[k].metric.label(),
        "samples": values,
        "mc_lb": mc.statistics.metrics[k].ci_lb,
        "mc_ub": mc.statistics.metrics[k].ci_ub,
        "rmss_lb": bounds.c_lb,
        "rmss_ub": bounds.c_ub,
        "failed": mc.statistics.failed,
    }))
}
