use crate::error::{Error, Result};
use crate::linalg::{combine, constrained_min_quadratic, gram, norm};
use crate::scalar::Real;

/// Condition cap on the Gram matrix of the input vectors.
pub const LEMMA_MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct AffineUnit<T> {
    /// Unit vector in `span{X_i}` orthogonal to the affine hull `E` of `{X_i / |b_i|}`.
    pub u: Vec<T>,
    /// `dist(0, E)`; equals `<u, X_i> / |b_i|` for every `i`.
    pub dist: T,
    pub condition: f64,
    /// `m <= d/2`, the regime where `dist` concentrates around `sqrt(d)`. Advisory only.
    pub well_posed: bool,
}

/// Unit vector `u` with `<u, X_i> = dist · |b_i|` for all `i`, where `dist` is the distance from
/// the origin to the affine hull of `{X_i / |b_i|}`.
///
/// The minimiser of `‖Σ λ_i X_i/|b_i|‖` over `Σ λ_i = 1` is found in the rescaled variables
/// `θ_i = λ_i / |b_i|`, i.e. `min θᵀGθ` subject to `Σ |b_i| θ_i = 1` with `G` the Gram matrix of
/// the `X_i`. In that form a zero target is just the constraint `<u, X_i> = 0`.
pub fn min_norm_affine_unit<T: Real, V: AsRef<[T]>>(x: &[V], b: &[T]) -> Result<AffineUnit<T>> {
    let m = x.len();
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one vector".into()));
    }
    if b.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: b.len() });
    }
    let d = x[0].as_ref().len();
    if let Some(bad) = x.iter().find(|v| v.as_ref().len() != d) {
        return Err(Error::DimensionMismatch { expected: d, found: bad.as_ref().len() });
    }
    let beta: Vec<T> = b.iter().map(|v| v.abs()).collect();
    if beta.iter().all(|&v| v == T::zero()) || beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("targets must be finite and not all zero".into()));
    }
    let g = gram(x);
    let sol = constrained_min_quadratic(&g, &beta, false, LEMMA_MAX_CONDITION)?;
    let p = combine(x, &sol.coeffs, d);
    let dist = norm(&p);
    if !(dist > T::zero()) {
        return Err(Error::RankDeficient { condition: f64::INFINITY });
    }
    let u = p.into_iter().map(|v| v / dist).collect();
    Ok(AffineUnit { u, dist, condition: sol.condition, well_posed: 2 * m <= d })
}
