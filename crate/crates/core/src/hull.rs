//! Origin-in-convex-hull membership with certificates, via Wolfe's minimum-norm-point method.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, constrained_min_quadratic, dot, norm};
use crate::scalar::Real;

/// Cholesky pivot-ratio cap for the corral solve; beyond it the corral is treated as degenerate.
const CORRAL_MAX_CONDITION: f64 = 1e15;

#[derive(Debug, Clone, PartialEq)]
pub struct MinNormPoint<T> {
    pub point: Vec<T>,
    /// Convex weights over the input points realising `point`.
    pub weights: Vec<T>,
    pub optimal: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum HullCertificate<T> {
    /// The origin is the convex combination of the points with these weights.
    Inside { weights: Vec<T> },
    /// `<direction, p> >= margin > 0` for every point.
    Outside { direction: Vec<T>, margin: T },
    /// The minimum norm lies in `(tol, 2 tol]`; neither certificate is issued.
    Ambiguous { distance: T },
}

impl<T: Real> HullCertificate<T> {
    pub fn is_inside(&self) -> bool {
        matches!(self, HullCertificate::Inside { .. })
    }

    pub fn is_outside(&self) -> bool {
        matches!(self, HullCertificate::Outside { .. })
    }

    /// Re-checks the certificate against the raw points.
    pub fn verify<V: AsRef<[T]>>(&self, points: &[V], tol: T) -> bool {
        match self {
            HullCertificate::Inside { weights } => {
                if weights.len() != points.len() || weights.iter().any(|&w| w < T::zero()) {
                    return false;
                }
                let total: T = weights.iter().copied().sum();
                if (total - T::one()).abs() > T::lit(1e-10).max(T::epsilon() * T::lit(64.0)) {
                    return false;
                }
                let dim = points[0].as_ref().len();
                let mut s = vec![T::zero(); dim];
                for (p, &w) in points.iter().zip(weights) {
                    axpy(w, p.as_ref(), &mut s);
                }
                norm(&s) <= tol
            }
            HullCertificate::Outside { direction, margin } => {
                *margin > T::zero()
                    && points.iter().all(|p| dot(direction, p.as_ref()) >= *margin)
            }
            HullCertificate::Ambiguous { .. } => true,
        }
    }
}

/// `1e-9 · (1 + max ‖p‖)`.
pub fn default_tolerance<T: Real, V: AsRef<[T]>>(points: &[V]) -> T {
    let max = points
        .iter()
        .map(|p| norm(p.as_ref()))
        .fold(T::zero(), |a, b| a.max(b));
    T::lit(1e-9) * (T::one() + max)
}

fn validate<T: Real, V: AsRef<[T]>>(points: &[V]) -> Result<usize> {
    let first = points
        .first()
        .ok_or_else(|| Error::InvalidArgument("point set is empty".into()))?;
    let dim = first.as_ref().len();
    if dim == 0 {
        return Err(Error::InvalidArgument("points must have positive dimension".into()));
    }
    for p in points {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coordinate".into()));
        }
    }
    Ok(dim)
}

/// Corral: active point indices with their convex weights and cached Gram submatrix.
struct Corral<T> {
    idx: Vec<usize>,
    lam: Vec<T>,
    gram: Vec<Vec<T>>,
}

impl<T: Real> Corral<T> {
    fn push<V: AsRef<[T]>>(&mut self, points: &[V], j: usize) {
        let pj = points[j].as_ref();
        let row: Vec<T> = self.idx.iter().map(|&i| dot(points[i].as_ref(), pj)).collect();
        for (r, &v) in self.gram.iter_mut().zip(&row) {
            r.push(v);
        }
        let mut row = row;
        row.push(dot(pj, pj));
        self.gram.push(row);
        self.idx.push(j);
        self.lam.push(T::zero());
    }

    fn remove(&mut self, pos: usize) {
        self.idx.remove(pos);
        self.lam.remove(pos);
        self.gram.remove(pos);
        for r in &mut self.gram {
            r.remove(pos);
        }
    }

    fn point<V: AsRef<[T]>>(&self, points: &[V], coeffs: &[T], dim: usize) -> Vec<T> {
        let mut x = vec![T::zero(); dim];
        for (&i, &c) in self.idx.iter().zip(coeffs) {
            axpy(c, points[i].as_ref(), &mut x);
        }
        x
    }

    /// Affine weights of the minimum-norm point of the corral's affine hull.
    fn affine_minimizer(&self, scale: T) -> Option<Vec<T>> {
        let m = self.idx.len();
        let flat: Vec<T> = self.gram.iter().flatten().copied().collect();
        let beta = vec![scale; m];
        let sol = constrained_min_quadratic(&flat, &beta, true, CORRAL_MAX_CONDITION).ok()?;
        Some(sol.coeffs.into_iter().map(|c| c * scale).collect())
    }
}

/// Minimum-norm point of `conv(points)`.
///
/// Stops when `<p*, p_j> >= ‖p*‖² − tol‖p*‖ − 16 ε max‖p‖²` for all `j` or `‖p*‖ <= tol`. If the iteration cap
/// `50 (dim + #points)` is hit, the best iterate is returned with `optimal = false`.
pub fn min_norm_point<T: Real, V: AsRef<[T]>>(points: &[V], tol: T) -> Result<MinNormPoint<T>> {
    let dim = validate(points)?;
    if !(tol > T::zero()) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let m = points.len();
    let norms: Vec<T> = points.iter().map(|p| norm(p.as_ref())).collect();
    let scale = norms.iter().copied().fold(T::zero(), T::max).max(T::min_positive_value());
    let start = (0..m)
        .min_by(|&a, &b| norms[a].partial_cmp(&norms[b]).expect("finite norms"))
        .expect("nonempty");

    let mut corral = Corral { idx: Vec::new(), lam: Vec::new(), gram: Vec::new() };
    corral.push(points, start);
    corral.lam[0] = T::one();
    let mut x = points[start].as_ref().to_vec();

    // optimality slack: the tolerance plus the rounding floor of `<x, p_j>`, since `x` is formed
    // from points of norm up to `scale` and carries an absolute error of order `ε scale`
    let rounding = T::lit(16.0) * T::epsilon() * scale * scale;
    let slack = |xn: T| tol * xn + rounding;

    let cap = 50 * (dim + m);
    let mut optimal = false;
    let mut iterations = 0;
    'major: while iterations < cap {
        iterations += 1;
        let xx = dot(&x, &x);
        let xn = xx.sqrt();
        if xn <= tol {
            optimal = true;
            break;
        }
        let (j, best) = (0..m)
            .map(|j| (j, dot(&x, points[j].as_ref())))
            .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite"))
            .expect("nonempty");
        if best >= xx - slack(xn) {
            optimal = true;
            break;
        }
        if corral.idx.contains(&j) {
            break;
        }
        corral.push(points, j);

        loop {
            let Some(alpha) = corral.affine_minimizer(scale) else {
                // affinely dependent corral: numerically at the optimum of the current face
                let last = corral.idx.len() - 1;
                corral.remove(last);
                break 'major;
            };
            if alpha.iter().all(|&a| a > T::zero()) {
                corral.lam = alpha;
                x = corral.point(points, &corral.lam, dim);
                break;
            }
            let mut theta = T::one();
            let mut leaving = 0;
            for (pos, (&l, &a)) in corral.lam.iter().zip(&alpha).enumerate() {
                if a <= T::zero() {
                    let t = l / (l - a);
                    if t < theta {
                        theta = t;
                        leaving = pos;
                    }
                }
            }
            for (l, &a) in corral.lam.iter_mut().zip(&alpha) {
                *l = (T::one() - theta) * *l + theta * a;
            }
            corral.lam[leaving] = T::zero();
            let mut pos = corral.idx.len();
            while pos > 0 {
                pos -= 1;
                if corral.lam[pos] <= T::zero() {
                    corral.remove(pos);
                }
            }
            let total: T = corral.lam.iter().copied().sum();
            for l in &mut corral.lam {
                *l = *l / total;
            }
            x = corral.point(points, &corral.lam, dim);
            if corral.idx.len() == 1 {
                break;
            }
        }
    }

    if !optimal {
        // final check: a stalled iterate may still satisfy the optimality condition
        let xx = dot(&x, &x);
        let xn = xx.sqrt();
        optimal = xn <= tol
            || points.iter().all(|p| dot(&x, p.as_ref()) >= xx - slack(xn));
    }

    let mut weights = vec![T::zero(); m];
    for (&i, &l) in corral.idx.iter().zip(&corral.lam) {
        weights[i] = l;
    }
    Ok(MinNormPoint { point: x, weights, optimal, iterations })
}

/// Decides whether the origin lies in `conv(points)` and returns a checked certificate.
pub fn origin_membership<T: Real, V: AsRef<[T]>>(points: &[V], tol: T) -> Result<HullCertificate<T>> {
    let mnp = min_norm_point(points, tol)?;
    let dist = norm(&mnp.point);
    let cert = if dist <= tol {
        HullCertificate::Inside { weights: mnp.weights }
    } else if dist <= tol + tol {
        HullCertificate::Ambiguous { distance: dist }
    } else {
        let direction: Vec<T> = mnp.point.iter().map(|&v| v / dist).collect();
        let margin = points
            .iter()
            .map(|p| dot(&direction, p.as_ref()))
            .fold(T::infinity(), T::min);
        if !(margin > T::zero()) {
            return Err(if mnp.optimal {
                Error::CertificateInvalid(format!("separating margin {margin} is not positive"))
            } else {
                Error::IterationLimit(mnp.iterations)
            });
        }
        HullCertificate::Outside { direction, margin }
    };
    if !cert.verify(points, tol) {
        return Err(Error::CertificateInvalid(format!("{cert:?}")));
    }
    Ok(cert)
}

/// Brute-force planar membership: the origin is in the hull iff the largest circular gap between
/// point angles is at most π.
pub fn oracle_2d(points: &[[f64; 2]]) -> Result<bool> {
    if points.is_empty() {
        return Ok(false);
    }
    let mut angles = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        if p[0].hypot(p[1]) <= 1e-12 {
            return Err(Error::ZeroPoint(i));
        }
        angles.push(p[1].atan2(p[0]));
    }
    angles.sort_by(f64::total_cmp);
    let wrap = angles[0] + std::f64::consts::TAU - angles[angles.len() - 1];
    let max_gap = angles
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(wrap, f64::max);
    Ok(max_gap <= std::f64::consts::PI + 1e-12)
}
