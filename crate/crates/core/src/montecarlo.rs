//! Seeded Monte Carlo power flow, the reference for RMSS accuracy and
//! runtime.
//!
//! Samples are drawn in fixed-size chunks, each from its own ChaCha8
//! stream keyed by `(seed, chunk index)`, so a batch is a pure function of
//! `(seed, n, params)` no matter how chunks are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::GridCase;
use crate::linalg::{psd_cholesky, DenseMatrix};
use crate::params::{InjectionMap, ParamError, StochasticParameterSet};
use crate::powerflow::{
    evaluate_metrics, Metric, MetricSpec, PowerFlowError, PowerFlowModel, SolveOptions,
};
use crate::stats::{mean, normal_quantile, percentile_sorted, variance};
use crate::timing::Stopwatch;
use crate::worstcase::RmssReport;

/// Samples per random stream.
pub const CHUNK: usize = 256;
pub const GENERATOR: &str = "chacha8-stream-per-256-samples";

#[derive(Debug, Error)]
pub enum McError {
    #[error("covariance is not positive semidefinite (column {0})")]
    NotPsd(usize),
    #[error("all {0} samples failed to converge")]
    AllSamplesFailed(usize),
    #[error("need at least one sample")]
    NoSamples,
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("{what} mismatch: RMSS has {rmss}, Monte Carlo has {mc}")]
    DimensionMismatch {
        what: &'static str,
        rmss: String,
        mc: String,
    },
    #[error(
        "{failed} of {total} samples failed, above the 1% needed for a representative comparison"
    )]
    Unrepresentative { failed: usize, total: usize },
    #[error("RMSS report has no sweep points")]
    EmptyReport,
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Params(#[from] ParamError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub seed: u64,
    pub generator: String,
    /// `rows[s][j]`: value of parameter `j` in sample `s`.
    pub rows: Vec<Vec<f64>>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

struct Sampler {
    eta: Vec<f64>,
    factor: DenseMatrix,
    seed: u64,
    n: usize,
}

impl Sampler {
    fn new(params: &StochasticParameterSet, n: usize, seed: u64) -> Result<Self, McError> {
        let factor = psd_cholesky(&params.covariance(), 1e-12).map_err(McError::NotPsd)?;
        Ok(Self {
            eta: params.means(),
            factor,
            seed,
            n,
        })
    }

    fn chunks(&self) -> usize {
        self.n.div_ceil(CHUNK)
    }

    /// Draws of chunk `c`: `η + L z` with `z` standard normal.
    fn chunk(&self, c: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(c as u64);
        let d = self.eta.len();
        let count = CHUNK.min(self.n - c * CHUNK);
        (0..count)
            .map(|_| {
                let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let lz = self.factor.mul_vec(&z);
                self.eta.iter().zip(lz).map(|(m, v)| m + v).collect()
            })
            .collect()
    }
}

/// `n` i.i.d. draws from `N(η, Σ)` using a PSD-tolerant Cholesky factor.
pub fn sample_parameters(
    params: &StochasticParameterSet,
    n: usize,
    seed: u64,
) -> Result<SampleBatch, McError> {
    let sampler = Sampler::new(params, n, seed)?;
    let rows = (0..sampler.chunks())
        .flat_map(|c| sampler.chunk(c))
        .collect();
    Ok(SampleBatch {
        seed,
        generator: GENERATOR.into(),
        rows,
    })
}

/// How the metric interval is formed from the converged samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiMethod {
    /// 2.5% and 97.5% empirical percentiles of the metric distribution.
    #[default]
    Percentile,
    /// `mean ± Φ⁻¹(0.975)·sd/√n`, the confidence interval of the mean.
    MeanCi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub samples: usize,
    pub seed: u64,
    pub workers: usize,
    pub ci: CiMethod,
    pub solve: SolveOptions,
    /// Keep every converged sample's metric vector in the report.
    pub keep_samples: bool,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            samples: 10_000,
            seed: 0,
            workers: 1,
            ci: CiMethod::default(),
            solve: SolveOptions::default(),
            keep_samples: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub metric: Metric,
    pub nominal: f64,
    pub mean: f64,
    pub std: f64,
    pub ci_lb: f64,
    pub ci_ub: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterStats {
    pub parameter: String,
    pub mean: f64,
    pub sigma: f64,
    /// `η ± Φ⁻¹(0.975)σ` from the input distribution.
    pub ci_lb: f64,
    pub ci_ub: f64,
}

/// Everything that depends only on `(seed, n, params, case, spec)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McStatistics {
    pub case: String,
    pub seed: u64,
    pub generator: String,
    pub samples: usize,
    pub converged: usize,
    pub failed: usize,
    /// Indices of samples whose power flow failed.
    pub failed_samples: Vec<usize>,
    pub ci_method: CiMethod,
    pub metrics: Vec<MetricStats>,
    pub parameters: Vec<ParameterStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McTiming {
    pub workers: usize,
    pub total_seconds: f64,
    pub mean_solve_seconds: f64,
    pub min_solve_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub statistics: McStatistics,
    pub timing: McTiming,
    /// Per-sample metric vectors (converged samples only, in sample order).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_metrics: Option<Vec<Vec<f64>>>,
}

impl McReport {
    pub fn failure_rate(&self) -> f64 {
        self.statistics.failed as f64 / self.statistics.samples.max(1) as f64
    }

    /// Per-sample metric CSV; empty unless samples were kept.
    pub fn samples_csv(&self) -> String {
        let Some(rows) = &self.sample_metrics else {
            return String::new();
        };
        let header: Vec<String> = self
            .statistics
            .metrics
            .iter()
            .map(|m| m.metric.label())
            .collect();
        let mut out = header.join(",");
        out.push('\n');
        for r in rows {
            let line: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

type SampleOutcome = (Option<Vec<f64>>, f64);

fn run_chunks<F>(chunks: usize, workers: usize, job: F) -> Result<Vec<Vec<SampleOutcome>>, McError>
where
    F: Fn(usize) -> Vec<SampleOutcome> + Sync + Send,
{
    if workers == 0 {
        return Err(McError::NoWorkers);
    }
    #[cfg(feature = "parallel")]
    if workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| McError::Pool(e.to_string()))?;
        return Ok(pool.install(|| (0..chunks).into_par_iter().map(&job).collect()));
    }
    Ok((0..chunks).map(job).collect())
}

/// One warm-started power flow per sample with that sample's injections.
pub fn run_monte_carlo(
    case: &GridCase,
    params: &StochasticParameterSet,
    spec: &MetricSpec,
    opts: &McOptions,
) -> Result<McReport, McError> {
    let clock = Stopwatch::start();
    if opts.samples == 0 {
        return Err(McError::NoSamples);
    }
    let model = PowerFlowModel::new(case)?;
    let nominal_sol = model.solve(&opts.solve)?;
    let nominal = evaluate_metrics(&nominal_sol, spec)?;
    let map = InjectionMap::new(&model, params)?;
    let sampler = Sampler::new(params, opts.samples, opts.seed)?;

    let outcomes = run_chunks(sampler.chunks(), opts.workers, |c| {
        sampler
            .chunk(c)
            .iter()
            .map(|x| {
                let t = Stopwatch::start();
                let s = map.apply(model.base_injection(), x);
                let m = model
                    .solve_with(&s, &nominal_sol.v, &opts.solve)
                    .ok()
                    .and_then(|sol| evaluate_metrics(&sol, spec).ok());
                (m, t.seconds())
            })
            .collect()
    })?;

    let mut values: Vec<Vec<f64>> = Vec::with_capacity(opts.samples);
    let mut failed_samples = Vec::new();
    let mut solve_times = Vec::with_capacity(opts.samples);
    for (i, (m, t)) in outcomes.into_iter().flatten().enumerate() {
        solve_times.push(t);
        match m {
            Some(v) => values.push(v),
            None => failed_samples.push(i),
        }
    }
    if values.is_empty() {
        return Err(McError::AllSamplesFailed(opts.samples));
    }

    let z = normal_quantile(0.975);
    let metrics = spec
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let mut col: Vec<f64> = values.iter().map(|v| v[k]).collect();
            let mu = mean(&col);
            let sd = variance(&col, 1).sqrt();
            let (ci_lb, ci_ub) = match opts.ci {
                CiMethod::Percentile => {
                    col.sort_by(f64::total_cmp);
                    (
                        percentile_sorted(&col, 0.025),
                        percentile_sorted(&col, 0.975),
                    )
                }
                CiMethod::MeanCi => {
                    let h = z * sd / (col.len() as f64).sqrt();
                    (mu - h, mu + h)
                }
            };
            MetricStats {
                metric: *m,
                nominal: nominal[k],
                mean: mu,
                std: sd,
                ci_lb,
                ci_ub,
            }
        })
        .collect();
    let parameters = params
        .entries
        .iter()
        .map(|e| ParameterStats {
            parameter: e.label(),
            mean: e.mean,
            sigma: e.sigma,
            ci_lb: e.mean - z * e.sigma,
            ci_ub: e.mean + z * e.sigma,
        })
        .collect();

    let statistics = McStatistics {
        case: case.name.clone(),
        seed: opts.seed,
        generator: GENERATOR.into(),
        samples: opts.samples,
        converged: values.len(),
        failed: failed_samples.len(),
        failed_samples,
        ci_method: opts.ci,
        metrics,
        parameters,
    };
    let timing = McTiming {
        workers: opts.workers,
        total_seconds: clock.seconds(),
        mean_solve_seconds: mean(&solve_times),
        min_solve_seconds: solve_times.iter().copied().fold(f64::INFINITY, f64::min),
    };
    Ok(McReport {
        statistics,
        timing,
        sample_metrics: opts.keep_samples.then_some(values),
    })
}

// ---------------------------------------------------------------------------
// comparison

/// Mean absolute error of one bound family, as a fraction of the Monte
/// Carlo value and in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mae {
    pub fraction: f64,
    pub percent: f64,
    pub count: usize,
}

impl Mae {
    fn of(pairs: &[(f64, f64)]) -> Self {
        let fraction = if pairs.is_empty() {
            0.0
        } else {
            pairs
                .iter()
                .map(|(r, m)| (r - m).abs() / m.abs().max(1e-12))
                .sum::<f64>()
                / pairs.len() as f64
        };
        Self {
            fraction,
            percent: 100.0 * fraction,
            count: pairs.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub case: String,
    /// σ_c of the sweep point compared (its index and value).
    pub sweep_index: usize,
    pub sigma_c: Option<f64>,
    pub c_ub: Mae,
    pub c_lb: Mae,
    /// Parameter bounds: per parameter, the largest (smallest) value over
    /// all worst-case vectors against the input interval end `η ± zσ`.
    pub e_ub: Mae,
    pub e_lb: Mae,
    /// Every worst-case vector entry against the interval end on the side
    /// it moves towards.
    pub e_ub_corners: Mae,
    pub e_lb_corners: Mae,
    pub rmss_seconds: f64,
    pub mc_seconds: f64,
    pub speedup: f64,
}

/// MAE between RMSS bounds and Monte Carlo intervals.
///
/// Metric bounds compare `c_ub`/`c_lb` with the Monte Carlo interval ends.
/// Parameter bounds compare the range spanned by all worst-case vectors
/// with the input intervals `η ± Φ⁻¹(0.975)σ`. The entrywise comparison of
/// every corner with the interval end it moves towards (`sign λ_j` for the
/// upper corner, the opposite side for the lower one, the mean when
/// `λ_j = 0`) is reported alongside. With several sweep points the one with
/// the smallest metric MAE is used.
pub fn mae_compare(rmss: &RmssReport, mc: &McReport) -> Result<ComparisonReport, McError> {
    let stats = &mc.statistics;
    let mc_metrics: Vec<Metric> = stats.metrics.iter().map(|m| m.metric).collect();
    if rmss.metrics != mc_metrics {
        return Err(McError::DimensionMismatch {
            what: "metric",
            rmss: labels(rmss.metrics.iter().map(Metric::label)),
            mc: labels(mc_metrics.iter().map(Metric::label)),
        });
    }
    let mc_params: Vec<String> = stats
        .parameters
        .iter()
        .map(|p| p.parameter.clone())
        .collect();
    if rmss.parameters != mc_params {
        return Err(McError::DimensionMismatch {
            what: "parameter",
            rmss: labels(rmss.parameters.iter().cloned()),
            mc: labels(mc_params.into_iter()),
        });
    }
    if stats.failed * 100 > stats.samples {
        return Err(McError::Unrepresentative {
            failed: stats.failed,
            total: stats.samples,
        });
    }
    if rmss.sweep.is_empty() {
        return Err(McError::EmptyReport);
    }

    let metric_pairs = |idx: usize| {
        let res = &rmss.sweep[idx].results;
        let ub: Vec<(f64, f64)> = res
            .iter()
            .zip(&stats.metrics)
            .map(|(r, m)| (r.c_ub, m.ci_ub))
            .collect();
        let lb: Vec<(f64, f64)> = res
            .iter()
            .zip(&stats.metrics)
            .map(|(r, m)| (r.c_lb, m.ci_lb))
            .collect();
        (Mae::of(&ub), Mae::of(&lb))
    };
    let sweep_index = (0..rmss.sweep.len())
        .map(|i| {
            let (u, l) = metric_pairs(i);
            (i, u.fraction + l.fraction)
        })
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
        .0;
    let (c_ub, c_lb) = metric_pairs(sweep_index);

    let results = &rmss.sweep[sweep_index].results;
    let d = stats.parameters.len();
    let mut upper = vec![f64::NEG_INFINITY; d];
    let mut lower = vec![f64::INFINITY; d];
    let mut corner_ub = Vec::new();
    let mut corner_lb = Vec::new();
    for (r, lambda) in results.iter().zip(&rmss.sensitivity.values) {
        let (Some(ub), Some(lb)) = (&r.e_ub, &r.e_lb) else {
            continue;
        };
        for (j, p) in stats.parameters.iter().enumerate() {
            upper[j] = upper[j].max(ub[j]).max(lb[j]);
            lower[j] = lower[j].min(ub[j]).min(lb[j]);
            let side = |s: f64| {
                if s > 0.0 {
                    p.ci_ub
                } else if s < 0.0 {
                    p.ci_lb
                } else {
                    p.mean
                }
            };
            corner_ub.push((ub[j], side(lambda[j])));
            corner_lb.push((lb[j], side(-lambda[j])));
        }
    }
    let envelope = |ends: &[f64], ci: fn(&ParameterStats) -> f64| -> Vec<(f64, f64)> {
        ends.iter()
            .zip(&stats.parameters)
            .filter(|(e, _)| e.is_finite())
            .map(|(e, p)| (*e, ci(p)))
            .collect()
    };
    let e_ub = envelope(&upper, |p| p.ci_ub);
    let e_lb = envelope(&lower, |p| p.ci_lb);

    let rmss_seconds = rmss.timing.total_seconds;
    let mc_seconds = mc.timing.total_seconds;
    Ok(ComparisonReport {
        case: rmss.case.clone(),
        sweep_index,
        sigma_c: rmss.sweep[sweep_index].sigma_c,
        c_ub,
        c_lb,
        e_ub: Mae::of(&e_ub),
        e_lb: Mae::of(&e_lb),
        e_ub_corners: Mae::of(&corner_ub),
        e_lb_corners: Mae::of(&corner_lb),
        rmss_seconds,
        mc_seconds,
        speedup: if rmss_seconds > 0.0 {
            mc_seconds / rmss_seconds
        } else {
            f64::INFINITY
        },
    })
}

fn labels(it: impl Iterator<Item = String>) -> String {
    let v: Vec<String> = it.collect();
    format!("[{}]", v.join(", "))
}
