//! Constructive separating direction for a Brownian path on `[1, 2^N]`.
//!
//! A unit vector `n̄_0` is built on the block endpoints, then refined over steps `k = 1..=M`,
//! each split into `M'` substeps that add a small perturbation supported on a fresh coordinate
//! block. The result is checked deterministically on the grid and, optionally, certified between
//! grid points with Brownian-bridge exceedance bounds.

mod affine;
mod certify;
mod construction;
mod schedule;

pub use affine::{min_norm_affine_unit, AffineUnit, LEMMA_MAX_CONDITION};
pub use certify::{certify_continuum, ContinuumVerdict};
pub use construction::{
    block_statistic, block_statistics, initial_vector, run_construction, step_check,
    verify_certificate, CertificateCheck, FallbackReason, SeparatorResult, SeparatorState,
    StepCheck, SubstepEvent, TraceEntry, ACTIVE_THRESHOLD,
};
pub use schedule::{ConstantsMode, Schedule, ScheduleParams, ScheduleSummary};
