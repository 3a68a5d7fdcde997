use serde::{Deserialize, Serialize};

use super::affine::min_norm_affine_unit;
use super::schedule::{Schedule, ScheduleSummary};
use crate::bm_path::{block_grid, DyadicPath, TimeKey};
use crate::error::{Error, Result};
use crate::linalg::{norm, normalize, sub};
use crate::scalar::Real;

/// A block statistic counts as nonzero above this value.
pub const ACTIVE_THRESHOLD: f64 = 1e-14;

/// `a_i = 2^{i-1}` for `i >= 1`; block `0` starts at time zero.
fn block_start(i: usize) -> TimeKey {
    if i == 0 {
        TimeKey::Zero
    } else {
        TimeKey::exp(i as i64 - 1, 0)
    }
}

fn block_end(i: usize) -> TimeKey {
    TimeKey::exp(i as i64, 0)
}

/// `I_k^i`, empty for `i = 0` or `k = 0`.
fn interior(i: usize, k: usize) -> impl Iterator<Item = TimeKey> {
    let per = if i == 0 { 1i64 } else { 1i64 << k };
    (1..per).map(move |j| TimeKey::exp((i as i64 - 1) * per + j, k as u32))
}

/// `max(0, max_{t∈I_k^i} <u, BM(a_i) − BM(t)>/√a_i − h, <u, BM(a_i) − BM(a_{i+1})>/√a_{i+1} + f)`
fn statistic_with<T: Real>(
    path: &DyadicPath<T>,
    u: &[T],
    level: usize,
    i: usize,
    h: T,
    f: T,
) -> Result<T> {
    let start = block_start(i);
    let at_start = path.inner(u, &start)?;
    let end = block_end(i);
    let mut stat = (at_start - path.inner(u, &end)?) / T::lit(end.value().sqrt()) + f;
    if i > 0 {
        let root = T::lit(start.value().sqrt());
        for t in interior(i, level) {
            stat = stat.max((at_start - path.inner(u, &t)?) / root - h);
        }
    }
    Ok(stat.max(T::zero()))
}

/// The `i`-th block statistic `B_i(k, l)` of `u`.
pub fn block_statistic<T: Real>(
    path: &DyadicPath<T>,
    u: &[T],
    k: usize,
    l: usize,
    i: usize,
    sched: &Schedule<T>,
) -> Result<T> {
    statistic_with(path, u, k, i, sched.h_value(k, l), sched.f_value(k, l))
}

/// `B(k, l) = (B_0(k,l), …, B_N(k,l))`.
pub fn block_statistics<T: Real>(
    path: &DyadicPath<T>,
    u: &[T],
    k: usize,
    l: usize,
    sched: &Schedule<T>,
) -> Result<Vec<T>> {
    (0..=sched.n_blocks)
        .map(|i| block_statistic(path, u, k, l, i, sched))
        .collect()
}

fn active_set<T: Real>(stats: &[T]) -> Vec<usize> {
    let thr = T::lit(ACTIVE_THRESHOLD);
    stats
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > thr)
        .map(|(i, _)| i)
        .collect()
}

fn ensure_grid<T: Real>(path: &DyadicPath<T>, n_blocks: usize, level: usize) -> Result<()> {
    if block_grid(n_blocks, level as u32).iter().all(|t| path.contains(t)) {
        Ok(())
    } else {
        Err(Error::GridTooCoarse(level))
    }
}

/// `n̄_0`: the unit vector of `min_norm_affine_unit` applied to the normalised block increments
/// `P_1^0 (BM(a_{i+1}) − BM(a_i)) / √(a_{i+1} − a_i)`, `i = 0..=N`, with equal targets.
/// Supported on `J_1^0`.
pub fn initial_vector<T: Real>(path: &DyadicPath<T>, sched: &Schedule<T>) -> Result<Vec<T>> {
    ensure_grid(path, sched.n_blocks, 0)?;
    let block = sched.block(0, 1).expect("schedule always has J_1^0");
    let m = sched.n_blocks + 1;
    if block.len() < 2 * m {
        return Err(Error::BlockTooSmall { k: 0, l: 1, size: block.len(), needed: 2 * m });
    }
    let mut increments = Vec::with_capacity(m);
    for i in 0..m {
        let (a, b) = (block_start(i), block_end(i));
        let diff = sub(path.get(&b)?, path.get(&a)?);
        let root = T::lit((b.value() - a.value()).sqrt());
        increments.push(block.restrict(&diff).into_iter().map(|v| v / root).collect::<Vec<T>>());
    }
    // b_i = 2 f(1,0) / c_L for every i; only the direction of b matters
    let target = T::lit(2.0) * sched.f_value(1, 0) / sched.c_l;
    let unit = min_norm_affine_unit(&increments, &vec![target; m])?;
    Ok(block.embed(&unit.u, path.dim()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub k: usize,
    pub l: usize,
    pub active_count: usize,
    pub stat_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackReason {
    /// `I(k,l)` is empty; nothing to repair.
    EmptyActiveSet,
    /// `|I(k,l)| > N exp(-C_h² 2^{(k+l)/2}/32)`.
    LargeActiveSet,
    /// More increments than half the block size.
    TooManyIncrements,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubstepEvent {
    pub k: usize,
    pub l: usize,
    pub fallback: Option<FallbackReason>,
    /// `E_{k,l}`: `B_i(k, l+1) = 0` for every `i ∈ I(k, l)`.
    pub event_holds: bool,
}

/// Check of the step event `E_k` against both threshold pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCheck {
    pub k: usize,
    /// Smallest slack with thresholds `h(k+1,0)`, `f(k+1,0)`.
    pub margin_next_step: f64,
    /// Smallest slack with thresholds `h(k,M'+1)`, `f(k,M'+1)`.
    pub margin_last_substep: f64,
    pub holds: bool,
}

/// Minimum slack of `<u, BM(t) − BM(a_i)>/√a_i ≥ −h` (t ∈ I_k^i) and
/// `<u, BM(a_{i+1}) − BM(a_i)>/√a_{i+1} ≥ f` over all blocks.
fn event_margin<T: Real>(path: &DyadicPath<T>, u: &[T], level: usize, n_blocks: usize, h: T, f: T) -> Result<T> {
    let mut margin = T::infinity();
    for i in 0..=n_blocks {
        let start = block_start(i);
        let end = block_end(i);
        let at_start = path.inner(u, &start)?;
        margin = margin.min((path.inner(u, &end)? - at_start) / T::lit(end.value().sqrt()) - f);
        if i > 0 {
            let root = T::lit(start.value().sqrt());
            for t in interior(i, level) {
                margin = margin.min((path.inner(u, &t)? - at_start) / root + h);
            }
        }
    }
    Ok(margin)
}

/// Evaluates `E_k` for `n̄_k = u`. It holds when both margins are nonnegative; for `k = 0` the
/// two threshold pairs coincide.
pub fn step_check<T: Real>(path: &DyadicPath<T>, u: &[T], k: usize, sched: &Schedule<T>) -> Result<StepCheck> {
    let next = event_margin(path, u, k, sched.n_blocks, sched.h_value(k + 1, 0), sched.f_value(k + 1, 0))?;
    let last = if k == 0 {
        next
    } else {
        let l = sched.substeps + 1;
        event_margin(path, u, k, sched.n_blocks, sched.h_value(k, l), sched.f_value(k, l))?
    };
    Ok(StepCheck {
        k,
        margin_next_step: next.to_f64_lossy(),
        margin_last_substep: last.to_f64_lossy(),
        holds: next >= T::zero() && last >= T::zero(),
    })
}

#[derive(Debug, Clone)]
pub struct SeparatorState<T> {
    pub k: usize,
    pub l: usize,
    /// `n̄_{k,l}`
    pub u: Vec<T>,
    /// `B(k,l)` computed in the last substep.
    pub stats: Vec<T>,
    /// `I(k,l)`
    pub active: Vec<usize>,
    pub trace: Vec<TraceEntry>,
    pub events: Vec<SubstepEvent>,
    pub step_checks: Vec<StepCheck>,
}

impl<T: Real> SeparatorState<T> {
    /// State at `(0, 0)` holding `n̄_0`. Its trace entry records the deficits
    /// `max(0, f(1,0) − <n̄_0, BM(a_{i+1}) − BM(a_i)>/√a_{i+1})`.
    pub fn initial(path: &DyadicPath<T>, sched: &Schedule<T>) -> Result<Self> {
        let u = initial_vector(path, sched)?;
        let (h, f) = (sched.h_value(1, 0), sched.f_value(1, 0));
        let stats = (0..=sched.n_blocks)
            .map(|i| statistic_with(path, &u, 0, i, h, f))
            .collect::<Result<Vec<T>>>()?;
        let active = active_set(&stats);
        let entry = TraceEntry { k: 0, l: 0, active_count: active.len(), stat_norm: norm(&stats).to_f64_lossy() };
        let check = step_check(path, &u, 0, sched)?;
        Ok(Self { k: 0, l: 0, u, stats, active, trace: vec![entry], events: Vec::new(), step_checks: vec![check] })
    }

    /// Moves to `(k, 0)` with `n̄_{k,0} = n̄_{k-1}`.
    pub fn begin_step(&mut self, k: usize) {
        self.k = k;
        self.l = 0;
    }

    /// Substep `(k, l−1) → (k, l)`: block statistics of the current vector, a perturbation
    /// `Δ ∈ R^{J_l^k}` aimed at the active blocks, and `n̄_{k,l} = (n̄_{k,l−1} + α Δ)/√(1+α²)`.
    pub fn substep(mut self, path: &DyadicPath<T>, sched: &Schedule<T>) -> Result<Self> {
        let k = self.k;
        let l = self.l + 1;
        if k == 0 || k > sched.steps || l > sched.substeps {
            return Err(Error::InvalidArgument(format!("substep ({k},{l}) outside the schedule")));
        }
        ensure_grid(path, sched.n_blocks, k)?;
        let block = sched.block(k, l).expect("block exists inside the schedule");
        let stats = block_statistics(path, &self.u, k, l, sched)?;
        let active = active_set(&stats);
        let stat_norm = norm(&stats);

        let per_block = 1usize << k;
        let increments: usize = active.iter().map(|&i| if i == 0 { 1 } else { per_block }).sum();
        let fallback = if active.is_empty() {
            Some(FallbackReason::EmptyActiveSet)
        } else if T::lit(active.len() as f64) > sched.active_limit(k, l) {
            Some(FallbackReason::LargeActiveSet)
        } else if 2 * increments > block.len() {
            Some(FallbackReason::TooManyIncrements)
        } else {
            None
        };

        let delta = match fallback {
            Some(_) => {
                let mut d = vec![T::zero(); path.dim()];
                d[block.indices[0]] = T::one();
                d
            }
            None => {
                let mut xs: Vec<Vec<T>> = Vec::with_capacity(increments);
                let mut targets = Vec::with_capacity(increments);
                let scale = T::lit(2f64.powf(-(k as f64) / 2.0)) / stat_norm;
                for &i in &active {
                    let b = stats[i] * scale;
                    if i == 0 {
                        xs.push(block.restrict(path.get(&TimeKey::exp(0, 0))?));
                        targets.push(b);
                        continue;
                    }
                    for p in 0..per_block {
                        let base = (i as i64 - 1) * per_block as i64;
                        let t0 = TimeKey::exp(base + p as i64, k as u32);
                        let t1 = TimeKey::exp(base + p as i64 + 1, k as u32);
                        let root = T::lit((t1.value() - t0.value()).sqrt());
                        let diff = sub(path.get(&t1)?, path.get(&t0)?);
                        xs.push(block.restrict(&diff).into_iter().map(|v| v / root).collect());
                        targets.push(b);
                    }
                }
                let unit = min_norm_affine_unit(&xs, &targets)?;
                block.embed(&unit.u, path.dim())
            }
        };

        let alpha = sched.alpha(k, l);
        let denom = (T::one() + alpha * alpha).sqrt();
        let mut u: Vec<T> = self.u.iter().zip(&delta).map(|(&a, &d)| (a + alpha * d) / denom).collect();
        normalize(&mut u);

        let next = block_statistics(path, &u, k, l + 1, sched)?;
        let thr = T::lit(ACTIVE_THRESHOLD);
        let event_holds = active.iter().all(|&i| next[i] <= thr);

        self.trace.push(TraceEntry { k, l, active_count: active.len(), stat_norm: stat_norm.to_f64_lossy() });
        self.events.push(SubstepEvent { k, l, fallback, event_holds });
        self.l = l;
        self.u = u;
        self.stats = stats;
        self.active = active;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateCheck {
    /// `<u, BM(t)> > 0` for every grid time.
    pub positive: bool,
    /// `min_t <u, BM(t)/√t>`
    pub margin: f64,
}

/// Deterministic check of a candidate direction on a grid.
pub fn verify_certificate<T: Real>(path: &DyadicPath<T>, u: &[T], grid: &[TimeKey]) -> Result<CertificateCheck> {
    let mut positive = true;
    let mut margin = f64::INFINITY;
    for t in grid {
        let v = path.inner(u, t)?;
        positive &= v > T::zero();
        margin = margin.min(v.to_f64_lossy() / t.value().sqrt());
    }
    Ok(CertificateCheck { positive, margin })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatorResult<T> {
    pub u_final: Vec<T>,
    pub success: bool,
    pub margin: f64,
    pub trace: Vec<TraceEntry>,
    pub grid: Vec<TimeKey>,
    pub events: Vec<SubstepEvent>,
    pub step_checks: Vec<StepCheck>,
    pub constants: ScheduleSummary,
}

impl<T: Real> SeparatorResult<T> {
    pub fn fallback_count(&self) -> usize {
        self.events.iter().filter(|e| e.fallback.is_some()).count()
    }

    /// Every `E_k` and every `E_{k,l}` held.
    pub fn all_events_held(&self) -> bool {
        self.step_checks.iter().all(|c| c.holds) && self.events.iter().all(|e| e.event_holds)
    }
}

/// `n̄_0`, then `M` steps of `M'` substeps each; `success` is recomputed on `block_grid(N, M)`.
pub fn run_construction<T: Real>(path: &DyadicPath<T>, sched: &Schedule<T>) -> Result<SeparatorResult<T>> {
    ensure_grid(path, sched.n_blocks, sched.steps)?;
    let mut state = SeparatorState::initial(path, sched)?;
    for k in 1..=sched.steps {
        state.begin_step(k);
        for _ in 1..=sched.substeps {
            state = state.substep(path, sched)?;
        }
        let check = step_check(path, &state.u, k, sched)?;
        state.step_checks.push(check);
    }
    let grid = block_grid(sched.n_blocks, sched.steps as u32);
    let check = verify_certificate(path, &state.u, &grid)?;
    Ok(SeparatorResult {
        u_final: state.u,
        success: check.positive,
        margin: check.margin,
        trace: state.trace,
        grid,
        events: state.events,
        step_checks: state.step_checks,
        constants: sched.summary(),
    })
}
