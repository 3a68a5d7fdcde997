//! Brownian paths in high dimension, an origin-in-convex-hull oracle, a constructive separating
//! direction for the path on `[1, 2^N]`, and a Monte Carlo harness around them.
//!
//! The geometric kernels are generic over [`Real`] (`f32` or `f64`); the aliases below fix `f64`,
//! which the harness and the probability evaluators use throughout.

pub mod bm_path;
pub mod error;
pub mod gaussian_stats;
pub mod harness;
pub mod hull;
pub mod linalg;
pub mod rng;
pub mod scalar;
pub mod separator;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use scalar::Real;

pub type Path = bm_path::DyadicPath<f64>;
pub type PathF32 = bm_path::DyadicPath<f32>;
pub type Certificate = hull::HullCertificate<f64>;
pub type Schedule = separator::Schedule<f64>;
pub type SeparatorState = separator::SeparatorState<f64>;
pub type SeparatorResult = separator::SeparatorResult<f64>;
pub type AffineUnit = separator::AffineUnit<f64>;
