//! First-order Sobol indices with the Saltelli sampling scheme.
//!
//! Two independent base matrices `A` and `B` (n × d) are drawn, and for each
//! input `i` a matrix `A_B⁽ⁱ⁾` equal to `A` with column `i` taken from `B`.
//! With `y_A`, `y_B`, `y_ABi` the model outputs,
//!
//! ```text
//! S_i = mean(y_B · (y_ABi − y_A)) / Var([y_A; y_B])
//! ```
//!
//! for a total of `n·(d + 2)` model evaluations.
//!
//! As in Saltelli's original scheme, the rows of `[A | B]` are points of a
//! 2d-dimensional low-discrepancy (Owen-scrambled Sobol') sequence mapped
//! through the inverse marginal CDFs; the seed selects the scrambling. When
//! the sequence cannot cover the request (more than 2¹⁶ base samples or
//! more than 128 inputs) the rows are pseudorandom draws instead, and
//! [`SobolIndices::sequence`] records which generator was used.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SensitivityError;
use crate::params::StochasticParameterSet;
use crate::stats::{covariance, mean, normal_quantile, variance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InputDistribution {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl InputDistribution {
    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            InputDistribution::Normal { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
            InputDistribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    /// Maps `u` in the open unit interval through the inverse CDF.
    fn quantile(&self, u: f64) -> f64 {
        match *self {
            InputDistribution::Normal { mean, sd } => mean + sd * normal_quantile(u),
            InputDistribution::Uniform { lo, hi } => lo + (hi - lo) * u,
        }
    }
}

/// Generator behind the base matrices `A` and `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SobolSequence {
    /// Owen-scrambled Sobol' points, scrambling keyed by the seed.
    ScrambledSobol,
    /// ChaCha8 pseudorandom draws seeded by the seed.
    Pseudorandom,
}

const MAX_SEQUENCE_SAMPLES: usize = 1 << 16;

fn base_matrices(
    inputs: &[InputDistribution],
    n_base: usize,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, SobolSequence) {
    let d = inputs.len();
    if n_base <= MAX_SEQUENCE_SAMPLES && 2 * d <= sobol_burley::NUM_DIMENSIONS as usize {
        let key = (seed ^ (seed >> 32)) as u32;
        // f32 points sit on a 2⁻²⁴ grid starting at 0; shift by half a cell
        // so the inverse CDF never sees 0
        let point = |r: usize, dim: usize| {
            sobol_burley::sample(r as u32, dim as u32, key) as f64 + 0.5 / (1u64 << 24) as f64
        };
        let half = |offset: usize| -> Vec<Vec<f64>> {
            (0..n_base)
                .map(|r| {
                    inputs
                        .iter()
                        .enumerate()
                        .map(|(i, x)| x.quantile(point(r, offset + i)))
                        .collect()
                })
                .collect()
        };
        return (half(0), half(d), SobolSequence::ScrambledSobol);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Vec::with_capacity(n_base);
    let mut b = Vec::with_capacity(n_base);
    for _ in 0..n_base {
        let row: Vec<f64> = inputs.iter().map(|x| x.draw(&mut rng)).collect();
        a.push(row);
        let row: Vec<f64> = inputs.iter().map(|x| x.draw(&mut rng)).collect();
        b.push(row);
    }
    (a, b, SobolSequence::Pseudorandom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolIndices {
    /// `first_order[k][i]`: index of input `i` for output `k`.
    pub first_order: Vec<Vec<f64>>,
    /// 95% normal-approximation half-widths of the estimates.
    pub half_width: Vec<Vec<f64>>,
    /// Least-squares slopes `cov(x_i, y) / Var x_i` of each output on each
    /// input over the independent base samples `A` and `B`.
    pub slopes: Vec<Vec<f64>>,
    pub output_variance: Vec<f64>,
    pub n_base: usize,
    pub evaluations: usize,
    pub sequence: SobolSequence,
}

/// Sobol indices of a model over the marginals of a parameter set.
///
/// Inputs are sampled independently from each parameter's normal marginal;
/// off-diagonal covariance is ignored because the variance decomposition
/// assumes independent inputs.
pub fn sobol_first_order<F>(
    model: F,
    params: &StochasticParameterSet,
    n_base: usize,
    seed: u64,
) -> Result<SobolIndices, SensitivityError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, String> + Sync,
{
    let inputs: Vec<InputDistribution> = params
        .entries
        .iter()
        .map(|e| InputDistribution::Normal {
            mean: e.mean,
            sd: e.sigma,
        })
        .collect();
    sobol_first_order_inputs(model, &inputs, n_base, seed)
}

pub fn sobol_first_order_inputs<F>(
    model: F,
    inputs: &[InputDistribution],
    n_base: usize,
    seed: u64,
) -> Result<SobolIndices, SensitivityError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, String> + Sync,
{
    if n_base < 64 {
        return Err(SensitivityError::TooFewSamples(n_base));
    }
    let d = inputs.len();
    let (a, b, sequence) = base_matrices(inputs, n_base, seed);

    // evaluation order: A rows, B rows, then A_B(i) rows for i = 0..d
    let points: Vec<Vec<f64>> = a
        .iter()
        .cloned()
        .chain(b.iter().cloned())
        .chain((0..d).flat_map(|i| {
            a.iter().zip(&b).map(move |(ra, rb)| {
                let mut r = ra.clone();
                r[i] = rb[i];
                r
            })
        }))
        .collect();
    let outputs = evaluate_all(&model, &points)?;
    let n_out = outputs.first().map_or(0, Vec::len);

    let mut first_order = vec![vec![0.0; d]; n_out];
    let mut half_width = vec![vec![0.0; d]; n_out];
    let mut slopes = vec![vec![0.0; d]; n_out];
    let mut output_variance = vec![0.0; n_out];
    let n = n_base;
    let xs: Vec<Vec<f64>> = (0..d)
        .map(|i| a.iter().chain(&b).map(|r| r[i]).collect())
        .collect();

    for k in 0..n_out {
        let y_a: Vec<f64> = outputs[..n].iter().map(|o| o[k]).collect();
        let y_b: Vec<f64> = outputs[n..2 * n].iter().map(|o| o[k]).collect();
        let y_all: Vec<f64> = y_a.iter().chain(&y_b).copied().collect();
        let var_y = variance(&y_all, 0);
        output_variance[k] = var_y;
        for i in 0..d {
            let y_abi = &outputs[(2 + i) * n..(3 + i) * n];
            let terms: Vec<f64> = (0..n).map(|r| y_b[r] * (y_abi[r][k] - y_a[r])).collect();
            if var_y > 0.0 {
                first_order[k][i] = mean(&terms) / var_y;
                half_width[k][i] = 1.96 * (variance(&terms, 1) / n as f64).sqrt() / var_y;
            }
            let var_x = variance(&xs[i], 0);
            if var_x > 0.0 {
                slopes[k][i] = covariance(&xs[i], &y_all) / var_x;
            }
        }
    }

    Ok(SobolIndices {
        first_order,
        half_width,
        slopes,
        output_variance,
        n_base,
        evaluations: points.len(),
        sequence,
    })
}

#[cfg(feature = "parallel")]
fn evaluate_all<F>(model: &F, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, SensitivityError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, String> + Sync,
{
    use rayon::prelude::*;
    points
        .par_iter()
        .enumerate()
        .map(|(sample, p)| {
            model(p).map_err(|message| SensitivityError::ModelEvaluation { sample, message })
        })
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn evaluate_all<F>(model: &F, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, SensitivityError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, String> + Sync,
{
    points
        .iter()
        .enumerate()
        .map(|(sample, p)| {
            model(p).map_err(|message| SensitivityError::ModelEvaluation { sample, message })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn std_normal(d: usize) -> Vec<InputDistribution> {
        vec![InputDistribution::Normal { mean: 0.0, sd: 1.0 }; d]
    }

    #[test]
    fn additive_model_splits_evenly() {
        let s =
            sobol_first_order_inputs(|x| Ok(vec![x[0] + x[1]]), &std_normal(2), 1024, 11).unwrap();
        assert!(
            (s.first_order[0][0] - 0.5).abs() < 0.05,
            "{:?}",
            s.first_order
        );
        assert!((s.first_order[0][1] - 0.5).abs() < 0.05);
        assert_eq!(s.evaluations, 1024 * 4);
        assert_eq!(s.sequence, SobolSequence::ScrambledSobol);
    }

    #[test]
    fn wide_inputs_fall_back_to_pseudorandom() {
        let s = sobol_first_order_inputs(|x| Ok(vec![x.iter().sum()]), &std_normal(129), 64, 4)
            .unwrap();
        assert_eq!(s.sequence, SobolSequence::Pseudorandom);
        let total: f64 = s.first_order[0].iter().sum();
        assert!(total.is_finite());
    }

    #[test]
    fn seeds_change_the_scrambling() {
        let f = |x: &[f64]| Ok(vec![x[0]]);
        let a = sobol_first_order_inputs(f, &std_normal(1), 64, 1).unwrap();
        let b = sobol_first_order_inputs(f, &std_normal(1), 64, 2).unwrap();
        assert_ne!(a.output_variance, b.output_variance);
    }

    #[test]
    fn ignored_input_has_null_index() {
        let s = sobol_first_order_inputs(|x| Ok(vec![2.0 * x[0] - x[1]]), &std_normal(3), 1024, 5)
            .unwrap();
        assert!(s.first_order[0][2].abs() < 0.05);
    }

    #[test]
    fn slopes_recover_linear_coefficients() {
        let inputs = [
            InputDistribution::Normal { mean: 1.0, sd: 0.1 },
            InputDistribution::Normal {
                mean: -2.0,
                sd: 0.3,
            },
        ];
        let s = sobol_first_order_inputs(|x| Ok(vec![3.0 * x[0] - 0.5 * x[1]]), &inputs, 4096, 3)
            .unwrap();
        assert!((s.slopes[0][0] - 3.0).abs() < 0.05, "{:?}", s.slopes);
        assert!((s.slopes[0][1] + 0.5).abs() < 0.01);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let f = |x: &[f64]| Ok(vec![x[0] * x[1] + x[0]]);
        let a = sobol_first_order_inputs(f, &std_normal(2), 128, 9).unwrap();
        let b = sobol_first_order_inputs(f, &std_normal(2), 128, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn evaluation_failure_names_sample() {
        let f = |x: &[f64]| {
            if x[0] > 2.5 {
                Err("diverged".to_string())
            } else {
                Ok(vec![x[0]])
            }
        };
        let err = sobol_first_order_inputs(f, &std_normal(1), 4096, 1).unwrap_err();
        assert!(matches!(err, SensitivityError::ModelEvaluation { .. }));
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            sobol_first_order_inputs(|x| Ok(x.to_vec()), &std_normal(1), 32, 0),
            Err(SensitivityError::TooFewSamples(32))
        ));
    }

    #[test]
    fn uniform_inputs_stay_in_range() {
        let u = [InputDistribution::Uniform { lo: -PI, hi: PI }];
        let s = sobol_first_order_inputs(|x| Ok(vec![x[0].sin()]), &u, 256, 2).unwrap();
        assert!((s.first_order[0][0] - 1.0).abs() < 0.1);
    }
}
