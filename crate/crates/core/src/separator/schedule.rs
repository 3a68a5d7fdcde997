use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bm_path::CoordinateBlock;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `2^{-1/4}`
fn r<T: Real>() -> T {
    T::lit(2.0).powf(T::lit(-0.25))
}

/// `Σ_{q=1}^{l} 2^{-q/4}`
fn tail_sum<T: Real>(l: usize) -> T {
    let r = r::<T>();
    r * (T::one() - r.powi(l as i32)) / (T::one() - r)
}

/// `Σ_{p=0}^{k-1} 2^{-p/4}`
fn head_sum<T: Real>(k: usize) -> T {
    let r = r::<T>();
    (T::one() - r.powi(k as i32)) / (T::one() - r)
}

/// `C_f / C_h = 2 (1 − 2^{-1/4})^{-2}`
pub(crate) fn cf_over_ch<T: Real>() -> T {
    let one_minus = T::one() - r::<T>();
    T::lit(2.0) / (one_minus * one_minus)
}

/// `f(1,0) / C_f`
fn f10_over_cf<T: Real>() -> T {
    let one_minus = T::one() - r::<T>();
    T::one() + T::one() / (one_minus * one_minus) - r::<T>() / one_minus
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsMode {
    /// `c` tied to the other constants by `8 c f(1,0)² = c_J c_L²`; counts derived from `n`.
    Paper,
    /// Independently tunable constants and counts for desk-scale experiments.
    Desk,
}

/// User-facing constants. `None` fields take the mode's default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub mode: ConstantsMode,
    pub c: Option<f64>,
    pub c_h: Option<f64>,
    pub c_j: f64,
    pub c_l: f64,
    pub n_blocks: Option<usize>,
    pub steps: Option<usize>,
    pub substeps: Option<usize>,
}

impl ScheduleParams {
    pub fn paper() -> Self {
        Self {
            mode: ConstantsMode::Paper,
            c: Some(0.01),
            c_h: None,
            c_j: 0.15,
            c_l: 0.1,
            n_blocks: None,
            steps: None,
            substeps: None,
        }
    }

    /// `N = 8`, `M = 3`, `M' = 2`, `C_h = 0.5`, `c_J = 0.15`, `c_L = 0.1`.
    pub fn desk() -> Self {
        Self {
            mode: ConstantsMode::Desk,
            c: None,
            c_h: Some(0.5),
            c_j: 0.15,
            c_l: 0.1,
            n_blocks: Some(8),
            steps: Some(3),
            substeps: Some(2),
        }
    }

    /// Applies a `KEY=VAL` override. Keys: `c`, `C_h`, `c_J`, `c_L`, `N`, `M`, `M_prime`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let real = || -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{key}: expected a number, got {value:?}")))
        };
        let count = || -> Result<usize> {
            value
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{key}: expected a count, got {value:?}")))
        };
        match key {
            "c" => self.c = Some(real()?),
            "C_h" | "c_h" => self.c_h = Some(real()?),
            "c_J" | "c_j" => self.c_j = real()?,
            "c_L" | "c_l" => self.c_l = real()?,
            "N" => self.n_blocks = Some(count()?),
            "M" => self.steps = Some(count()?),
            "M_prime" | "M'" | "m_prime" => self.substeps = Some(count()?),
            _ => return Err(Error::Config(format!("unknown constant {key:?}"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub mode: ConstantsMode,
    pub n: usize,
    pub c: f64,
    pub c_h: f64,
    pub c_f: f64,
    pub c_j: f64,
    pub c_l: f64,
    pub n_blocks: usize,
    pub steps: usize,
    pub substeps: usize,
    pub relation_residual: f64,
}

/// Every derived quantity of the construction for a fixed dimension.
#[derive(Debug, Clone)]
pub struct Schedule<T> {
    pub mode: ConstantsMode,
    pub n: usize,
    pub c: T,
    pub c_h: T,
    pub c_f: T,
    pub c_j: T,
    pub c_l: T,
    /// `N`: number of blocks `[a_i, a_{i+1}]`, horizon `2^N`.
    pub n_blocks: usize,
    /// `M`
    pub steps: usize,
    /// `M'`
    pub substeps: usize,
    blocks: BTreeMap<(usize, usize), CoordinateBlock>,
}

fn positive(name: &'static str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonPositiveConstant(name))
    }
}

impl<T: Real> Schedule<T> {
    pub fn new(n: usize, params: &ScheduleParams) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidArgument(format!("dimension must be at least 4, got {n}")));
        }
        let c_j = positive("c_J", params.c_j)?;
        let c_l = positive("c_L", params.c_l)?;
        let nf = n as f64;
        let log_log = nf.ln().log2();
        let default_steps = (log_log.ceil() as usize).max(1);
        let default_substeps = ((0.25 * log_log).ceil() as usize).max(1);

        let (c, c_h, n_blocks, steps, substeps) = match params.mode {
            ConstantsMode::Paper => {
                if params.c_h.is_some() {
                    return Err(Error::Config("C_h is derived from c in paper mode".into()));
                }
                if params.n_blocks.is_some() || params.steps.is_some() || params.substeps.is_some() {
                    return Err(Error::Config("N, M and M' are derived from n in paper mode".into()));
                }
                let c = positive("c", params.c.unwrap_or(0.01))?;
                // 8 c f(1,0)^2 = c_J c_L^2
                let f10 = (c_j * c_l * c_l / (8.0 * c)).sqrt();
                let c_f = f10 / f10_over_cf::<f64>();
                let c_h = c_f / cf_over_ch::<f64>();
                let n_blocks = ((c * nf).ceil() as usize).max(1);
                (c, c_h, n_blocks, default_steps, default_substeps)
            }
            ConstantsMode::Desk => {
                let c_h = positive("C_h", params.c_h.unwrap_or(0.5))?;
                let n_blocks = match (params.n_blocks, params.c) {
                    (Some(nb), _) => nb,
                    (None, Some(c)) => ((positive("c", c)? * nf).ceil() as usize).max(1),
                    (None, None) => 8,
                };
                if n_blocks == 0 {
                    return Err(Error::Config("N must be at least 1".into()));
                }
                let steps = params.steps.unwrap_or(default_steps);
                let substeps = params.substeps.unwrap_or(default_substeps);
                if steps == 0 || substeps == 0 {
                    return Err(Error::Config("M and M' must be at least 1".into()));
                }
                (n_blocks as f64 / nf, c_h, n_blocks, steps, substeps)
            }
        };

        let mut blocks = BTreeMap::new();
        let mut next = 0usize;
        let mut needed = 0usize;
        for k in 0..=steps {
            for l in 1..=substeps {
                let size = (c_j * nf * 2f64.powf(-((k + l) as f64) / 8.0)).floor() as usize;
                needed += size;
                if needed <= n {
                    blocks.insert((k, l), CoordinateBlock::new(k, l, (next..next + size).collect()));
                    next += size;
                }
            }
        }
        if needed > n {
            return Err(Error::BlockBudgetExceeded { needed, available: n });
        }

        Ok(Self {
            mode: params.mode,
            n,
            c: T::lit(c),
            c_h: T::lit(c_h),
            c_f: T::lit(c_h) * cf_over_ch::<T>(),
            c_j: T::lit(c_j),
            c_l: T::lit(c_l),
            n_blocks,
            steps,
            substeps,
            blocks,
        })
    }

    /// `J(k, l)`; `None` outside `0 <= k <= M`, `1 <= l <= M'`.
    pub fn block(&self, k: usize, l: usize) -> Option<&CoordinateBlock> {
        self.blocks.get(&(k, l))
    }

    pub fn blocks(&self) -> impl Iterator<Item = &CoordinateBlock> {
        self.blocks.values()
    }

    /// `α_{k,l} = 16^{-k-l}`
    pub fn alpha(&self, k: usize, l: usize) -> T {
        T::lit(16.0).powi(-((k + l) as i32))
    }

    /// `f(0,0) = C_f + (1 − 2^{-1/4})^{-2} C_f`, decreasing by `C_f 2^{-(k+l)/4}` per substep,
    /// with `f(k,0)` the limit of `f(k-1, ·)`.
    pub fn f_value(&self, k: usize, l: usize) -> T {
        let rr = r::<T>();
        let one_minus = T::one() - rr;
        let f00 = self.c_f + self.c_f / (one_minus * one_minus);
        let s = rr / one_minus;
        f00 - self.c_f * s * head_sum::<T>(k) - self.c_f * rr.powi(k as i32) * tail_sum::<T>(l)
    }

    /// `h(0,0) = 0`, increasing by `C_h 2^{-(k+l)/4}` per substep.
    pub fn h_value(&self, k: usize, l: usize) -> T {
        let rr = r::<T>();
        let s = rr / (T::one() - rr);
        self.c_h * s * head_sum::<T>(k) + self.c_h * rr.powi(k as i32) * tail_sum::<T>(l)
    }

    /// Threshold on `|I(k,l)|` above which the perturbation falls back to a fixed vector:
    /// `N exp(-C_h² 2^{(k+l)/2} / 32)`.
    pub fn active_limit(&self, k: usize, l: usize) -> T {
        let e = self.c_h * self.c_h * T::lit(2.0).powf(T::lit((k + l) as f64 / 2.0)) / T::lit(32.0);
        T::lit(self.n_blocks as f64) * (-e).exp()
    }

    /// Relative residual of `8 c f(1,0)² = c_J c_L²`.
    pub fn relation_residual(&self) -> f64 {
        let f10 = self.f_value(1, 0).to_f64_lossy();
        let lhs = 8.0 * self.c.to_f64_lossy() * f10 * f10;
        let rhs = self.c_j.to_f64_lossy() * self.c_l.to_f64_lossy().powi(2);
        (lhs - rhs).abs() / rhs
    }

    pub fn summary(&self) -> ScheduleSummary {
        ScheduleSummary {
            mode: self.mode,
            n: self.n,
            c: self.c.to_f64_lossy(),
            c_h: self.c_h.to_f64_lossy(),
            c_f: self.c_f.to_f64_lossy(),
            c_j: self.c_j.to_f64_lossy(),
            c_l: self.c_l.to_f64_lossy(),
            n_blocks: self.n_blocks,
            steps: self.steps,
            substeps: self.substeps,
            relation_residual: self.relation_residual(),
        }
    }
}
