//! Renewal-process likelihoods: the exponential inter-arrival model of a
//! homogeneous Poisson process and the two-parameter Weibull model.
//!
//! Inter-arrival times are whole days but are treated as continuous values.
//! Log-likelihood sums are correctly rounded (see [`ExactSum`]) so any
//! segment of a sequence scores identically whichever way it is summed.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::numeric::ExactSum;

/// Lower end of the shape search bracket.
pub const SHAPE_MIN: f64 = 0.01;
/// Upper end of the shape search bracket.
pub const SHAPE_MAX: f64 = 50.0;
const SHAPE_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenewalError {
    #[error("interval {index} is {value}; inter-arrival times must be positive and finite")]
    NonPositiveInterval { index: usize, value: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("cannot fit an empty sample")]
    EmptySample,
    #[error("need at least 2 intervals for a Weibull fit, got {0}")]
    InsufficientData(usize),
    #[error("all {0} intervals are equal; the Weibull shape diverges")]
    DegenerateSample(usize),
    #[error("shape root lies outside [{SHAPE_MIN}, {SHAPE_MAX}] (score {score_low} at low end, {score_high} at high end)")]
    ShapeOutOfBracket { score_low: f64, score_high: f64 },
    #[error("shape iteration did not converge after {iterations} steps (last shape {last_shape})")]
    NoConvergence { last_shape: f64, iterations: usize },
}

/// Rate of the homogeneous Poisson (sporadic prescribing) model, per day.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpParams {
    rate: f64,
}

impl ExpParams {
    pub fn new(rate: f64) -> Result<Self, RenewalError> {
        if rate.is_finite() && rate > 0.0 {
            Ok(ExpParams { rate })
        } else {
            Err(RenewalError::InvalidParams(format!("rate {rate}")))
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// Weibull inter-arrival model. `shape` is the regularity index (1 is
/// memoryless, above 1 regular refills, below 1 bursty); `scale` is in days.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    shape: f64,
    scale: f64,
}

impl WeibullParams {
    pub fn new(shape: f64, scale: f64) -> Result<Self, RenewalError> {
        if shape.is_finite() && shape > 0.0 && scale.is_finite() && scale > 0.0 {
            Ok(WeibullParams { shape, scale })
        } else {
            Err(RenewalError::InvalidParams(format!("shape {shape}, scale {scale}")))
        }
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Expected inter-arrival time, `scale * Γ(1 + 1/shape)`.
    pub fn mean_interval(&self) -> f64 {
        self.scale * gamma(1.0 + 1.0 / self.shape)
    }
}

/// `log(rate) - rate * tau`.
#[inline]
pub fn exp_log_density(tau: f64, p: &ExpParams) -> f64 {
    p.rate.ln() - p.rate * tau
}

/// Log of `k/λ (τ/λ)^(k-1) exp(-(τ/λ)^k)`.
#[inline]
pub fn weibull_log_density(tau: f64, p: &WeibullParams) -> f64 {
    let ln_scale = p.scale.ln();
    p.shape.ln() - ln_scale + (p.shape - 1.0) * (tau.ln() - ln_scale) - (tau / p.scale).powf(p.shape)
}

fn check_taus(taus: &[f64]) -> Result<(), RenewalError> {
    match taus.iter().position(|t| !(t.is_finite() && *t > 0.0)) {
        Some(index) => Err(RenewalError::NonPositiveInterval {
            index,
            value: taus[index],
        }),
        None => Ok(()),
    }
}

/// Log-likelihood of the intervals under the exponential model. Empty input
/// scores 0.
pub fn exp_loglik(taus: &[f64], p: &ExpParams) -> Result<f64, RenewalError> {
    check_taus(taus)?;
    Ok(taus
        .iter()
        .map(|&t| exp_log_density(t, p))
        .collect::<ExactSum>()
        .value())
}

/// Log-likelihood of the intervals under the Weibull model. Empty input
/// scores 0.
pub fn weibull_loglik(taus: &[f64], p: &WeibullParams) -> Result<f64, RenewalError> {
    check_taus(taus)?;
    Ok(taus
        .iter()
        .map(|&t| weibull_log_density(t, p))
        .collect::<ExactSum>()
        .value())
}

/// Closed-form maximum-likelihood rate, `n / Σ τ`.
pub fn fit_exponential(taus: &[f64]) -> Result<ExpParams, RenewalError> {
    if taus.is_empty() {
        return Err(RenewalError::EmptySample);
    }
    check_taus(taus)?;
    let total: f64 = taus.iter().sum();
    ExpParams::new(taus.len() as f64 / total)
}

/// Weibull estimate with solver diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeibullFit {
    pub params: WeibullParams,
    pub iterations: usize,
}

/// Profile score `d/dk` of the Weibull log-likelihood with the scale
/// profiled out, divided by n, together with its derivative.
///
/// `xs` are log-intervals shifted so the largest is 0, which keeps
/// `exp(k * x)` in range for every shape in the bracket.
fn profile_score(xs: &[f64], mean_x: f64, k: f64) -> (f64, f64, f64) {
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for &x in xs {
        let w = (k * x).exp();
        s0 += w;
        s1 += w * x;
        s2 += w * x * x;
    }
    let m1 = s1 / s0;
    let score = 1.0 / k + mean_x - m1;
    let deriv = -1.0 / (k * k) - (s2 / s0 - m1 * m1);
    (score, deriv, s0)
}

/// Maximum-likelihood Weibull fit.
///
/// Solves the profile score equation for the shape with Newton steps,
/// falling back to bisection whenever a step leaves the current bracket,
/// then sets `scale = (Σ τ^k / n)^(1/k)`.
pub fn fit_weibull_with_diagnostics(taus: &[f64]) -> Result<WeibullFit, RenewalError> {
    if taus.len() < 2 {
        return Err(RenewalError::InsufficientData(taus.len()));
    }
    check_taus(taus)?;
    let logs: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
    let max_log = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_log = logs.iter().copied().fold(f64::INFINITY, f64::min);
    if max_log == min_log {
        return Err(RenewalError::DegenerateSample(taus.len()));
    }
    let n = taus.len() as f64;
    let xs: Vec<f64> = logs.iter().map(|l| l - max_log).collect();
    let mean_x = xs.iter().sum::<f64>() / n;

    let (score_low, _, _) = profile_score(&xs, mean_x, SHAPE_MIN);
    let (score_high, _, _) = profile_score(&xs, mean_x, SHAPE_MAX);
    if !(score_low > 0.0 && score_high < 0.0) {
        return Err(RenewalError::ShapeOutOfBracket {
            score_low,
            score_high,
        });
    }

    // Moment-style starting point from the spread of log-intervals.
    let var_x = xs.iter().map(|x| (x - mean_x).powi(2)).sum::<f64>() / n;
    let mut k = (std::f64::consts::PI / (6.0 * var_x).sqrt()).clamp(SHAPE_MIN, SHAPE_MAX);
    let (mut lo, mut hi) = (SHAPE_MIN, SHAPE_MAX);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let (score, deriv, _) = profile_score(&xs, mean_x, k);
        if score == 0.0 {
            converged = true;
            break;
        }
        if score > 0.0 {
            lo = k;
        } else {
            hi = k;
        }
        let mut next = k - score / deriv;
        if !(next.is_finite() && next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - k).abs();
        k = next;
        if step < SHAPE_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(RenewalError::NoConvergence {
            last_shape: k,
            iterations,
        });
    }
    let (_, _, s0) = profile_score(&xs, mean_x, k);
    let scale = (max_log + (s0 / n).ln() / k).exp();
    Ok(WeibullFit {
        params: WeibullParams::new(k, scale)?,
        iterations,
    })
}

/// Maximum-likelihood Weibull parameters; see [`fit_weibull_with_diagnostics`].
pub fn fit_weibull(taus: &[f64]) -> Result<WeibullParams, RenewalError> {
    fit_weibull_with_diagnostics(taus).map(|f| f.params)
}
