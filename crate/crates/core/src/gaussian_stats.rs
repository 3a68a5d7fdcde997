//! Gaussian sampling and evaluators for the tail, singular value and truncated-norm bounds.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{normal_vector, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckReport {
    pub trials: u64,
    pub violations: u64,
    pub bound: f64,
    pub empirical_rate: f64,
}

impl BoundCheckReport {
    pub fn new(trials: u64, violations: u64, bound: f64) -> Self {
        let empirical_rate = if trials == 0 { 0.0 } else { violations as f64 / trials as f64 };
        Self { trials, violations, bound, empirical_rate }
    }

    /// Empirical rate within `bound + 3·sqrt(bound/trials)`.
    pub fn within_slack(&self) -> bool {
        let b = self.bound.min(1.0);
        self.empirical_rate <= b + 3.0 * (b / self.trials as f64).sqrt()
    }
}

pub fn sample_gaussian_vector(dim: usize, rng: &RngStream) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    Ok(normal_vector(&mut rng.generator(), dim))
}

/// Upper bound `exp(-τ²/2) / (sqrt(2π) τ)` on `P{γ ≥ τ}`.
pub fn gaussian_tail_bound(tau: f64) -> Result<f64> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    Ok((-tau * tau / 2.0).exp() / ((2.0 * std::f64::consts::PI).sqrt() * tau))
}

/// Exact standard normal survival function `P{γ ≥ τ}`.
pub fn normal_tail(tau: f64) -> f64 {
    0.5 * libm::erfc(tau / std::f64::consts::SQRT_2)
}

/// Extreme singular values `(s_min, s_max)` of a tall matrix given row-major.
pub fn extreme_singular_values(rows: usize, cols: usize, data: &[f64]) -> (f64, f64) {
    let m = DMatrix::from_row_slice(rows, cols, data);
    let sv = m.singular_values();
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sv.iter().cloned().fold(0.0, f64::max);
    (lo, hi)
}

/// Samples `trials` standard `n×m` Gaussian matrices and counts those whose extreme singular
/// values leave `[√n − √m − t, √n + √m + t]`.
pub fn check_singular_value_interval(
    n: usize,
    m: usize,
    t: f64,
    trials: u64,
    rng: &RngStream,
) -> Result<BoundCheckReport> {
    if m == 0 || n < m {
        return Err(Error::InvalidArgument(format!("need n >= m >= 1, got n={n}, m={m}")));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument("t must be nonnegative".into()));
    }
    let lo = (n as f64).sqrt() - (m as f64).sqrt() - t;
    let hi = (n as f64).sqrt() + (m as f64).sqrt() + t;
    let violations: u64 = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let data = normal_vector(&mut rng.derive(trial).generator(), n * m);
            let (smin, smax) = extreme_singular_values(n, m, &data);
            u64::from(smin < lo || smax > hi)
        })
        .sum();
    Ok(BoundCheckReport::new(trials, violations, 2.0 * (-t * t / 2.0).exp()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormBound {
    pub threshold: f64,
    pub failure_prob: f64,
    /// Set when `e ≤ r ≤ sqrt(ln q)` fails; the values are still the formula, with no guarantee.
    pub hypothesis_violated: bool,
}

/// Threshold `4 sqrt(q) exp(-r²/8)` exceeded by `‖(γ_i − r)_+‖` with probability at most
/// `exp(-2 sqrt(q))`.
pub fn truncated_norm_bound(q: u64, r: f64) -> Result<TruncatedNormBound> {
    if q == 0 {
        return Err(Error::InvalidArgument("q must be at least 1".into()));
    }
    let qf = q as f64;
    let hypothesis_violated = !(r >= std::f64::consts::E && r <= qf.ln().sqrt());
    Ok(TruncatedNormBound {
        threshold: 4.0 * qf.sqrt() * (-r * r / 8.0).exp(),
        failure_prob: (-2.0 * qf.sqrt()).exp(),
        hypothesis_violated,
    })
}

/// Norm of `(max(0, γ_i − r))_{i ≤ q}` for fresh standard normals.
pub fn sample_truncated_norm(q: u64, r: f64, rng: &RngStream) -> Result<f64> {
    if q == 0 {
        return Err(Error::InvalidArgument("q must be at least 1".into()));
    }
    let mut g = rng.generator();
    let sq: f64 = (0..q)
        .map(|_| {
            let x = (g.sample::<f64, _>(StandardNormal) - r).max(0.0);
            x * x
        })
        .sum();
    Ok(sq.sqrt())
}
