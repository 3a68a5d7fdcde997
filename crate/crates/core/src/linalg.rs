//! Small dense kernels over slices. Matrices are row-major `Vec<T>`.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[inline]
pub fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

#[inline]
pub fn norm<T: Real>(x: &[T]) -> T {
    dot(x, x).sqrt()
}

/// y += a * x
#[inline]
pub fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

pub fn scale<T: Real>(a: T, x: &mut [T]) {
    for v in x {
        *v = *v * a;
    }
}

pub fn sub<T: Real>(x: &[T], y: &[T]) -> Vec<T> {
    x.iter().zip(y).map(|(&a, &b)| a - b).collect()
}

/// Normalises in place and returns the original norm. Zero vectors are left alone.
pub fn normalize<T: Real>(x: &mut [T]) -> T {
    let n = norm(x);
    if n > T::zero() {
        scale(T::one() / n, x);
    }
    n
}

/// Linear combination `sum_i coeffs[i] * vectors[i]`.
pub fn combine<T: Real, V: AsRef<[T]>>(vectors: &[V], coeffs: &[T], dim: usize) -> Vec<T> {
    let mut out = vec![T::zero(); dim];
    for (v, &c) in vectors.iter().zip(coeffs) {
        axpy(c, v.as_ref(), &mut out);
    }
    out
}

pub fn gram<T: Real, V: AsRef<[T]>>(vectors: &[V]) -> Vec<T> {
    let m = vectors.len();
    let mut g = vec![T::zero(); m * m];
    for i in 0..m {
        for j in 0..=i {
            let v = dot(vectors[i].as_ref(), vectors[j].as_ref());
            g[i * m + j] = v;
            g[j * m + i] = v;
        }
    }
    g
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    m: usize,
    l: Vec<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn factor(a: &[T], m: usize) -> Result<Self> {
        debug_assert_eq!(a.len(), m * m);
        let mut l = vec![T::zero(); m * m];
        for j in 0..m {
            let mut d = a[j * m + j];
            for p in 0..j {
                d = d - l[j * m + p] * l[j * m + p];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::RankDeficient { condition: f64::INFINITY });
            }
            let d = d.sqrt();
            l[j * m + j] = d;
            for i in j + 1..m {
                let mut s = a[i * m + j];
                for p in 0..j {
                    s = s - l[i * m + p] * l[j * m + p];
                }
                l[i * m + j] = s / d;
            }
        }
        Ok(Self { m, l })
    }

    /// Condition estimate of the factored matrix from the ratio of Cholesky pivots.
    pub fn condition_estimate(&self) -> f64 {
        let diag = (0..self.m).map(|i| self.l[i * self.m + i].to_f64_lossy());
        let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
        if self.m == 0 {
            1.0
        } else {
            (hi / lo).powi(2)
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let m = self.m;
        let mut y = b.to_vec();
        for i in 0..m {
            let mut s = y[i];
            for p in 0..i {
                s = s - self.l[i * m + p] * y[p];
            }
            y[i] = s / self.l[i * m + i];
        }
        for i in (0..m).rev() {
            let mut s = y[i];
            for p in i + 1..m {
                s = s - self.l[p * m + i] * y[p];
            }
            y[i] = s / self.l[i * m + i];
        }
        y
    }
}

/// Solution of `min θᵀGθ subject to βᵀθ = 1`.
#[derive(Debug, Clone)]
pub struct ConstrainedMin<T> {
    pub coeffs: Vec<T>,
    pub condition: f64,
}

/// Minimises the quadratic form of a Gram matrix over the hyperplane `βᵀθ = 1`.
///
/// With `lift` unset the Lagrange system is solved through `G⁻¹β`, which needs the generating
/// vectors linearly independent. With `lift` set the factored matrix is `G + ββᵀ`, the Gram matrix
/// of the vectors augmented by the coordinate `β_i`; it is definite as soon as those augmented
/// vectors are independent, which for `β = 1` means affinely independent points.
pub fn constrained_min_quadratic<T: Real>(
    gram: &[T],
    beta: &[T],
    lift: bool,
    max_condition: f64,
) -> Result<ConstrainedMin<T>> {
    let m = beta.len();
    debug_assert_eq!(gram.len(), m * m);
    let mut a = gram.to_vec();
    if lift {
        for i in 0..m {
            for j in 0..m {
                a[i * m + j] = a[i * m + j] + beta[i] * beta[j];
            }
        }
    }
    let chol = Cholesky::factor(&a, m)?;
    let condition = chol.condition_estimate();
    if !(condition <= max_condition) {
        return Err(Error::RankDeficient { condition });
    }
    let y = chol.solve(beta);
    let s = dot(beta, &y);
    if !(s > T::zero()) || !s.is_finite() {
        return Err(Error::RankDeficient { condition: f64::INFINITY });
    }
    let coeffs = y.into_iter().map(|v| v / s).collect();
    Ok(ConstrainedMin { coeffs, condition })
}
