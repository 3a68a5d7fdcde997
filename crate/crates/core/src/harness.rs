//! Monte Carlo experiment runners behind the CLI.
//!
//! Trial `j` of a run always uses the stream `(seed, j)`, so outputs depend only on the config.
//! Trials execute on a rayon pool but are collected in index order before anything is summed.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bm_path::{block_grid, poisson_times, DyadicPath, PathSnapshotEntry, TimeKey};
use crate::error::{Error, Result};
use crate::gaussian_stats::{
    check_singular_value_interval, gaussian_tail_bound, sample_truncated_norm, truncated_norm_bound,
};
use crate::hull::{default_tolerance, origin_membership, HullCertificate};
use crate::linalg::{dot, norm};
use crate::rng::{normal_vector, RngStream};
use crate::separator::{
    certify_continuum, min_norm_affine_unit, run_construction, ConstantsMode, ContinuumVerdict, Schedule,
    ScheduleParams, SeparatorResult,
};

/// 97.5% standard normal quantile.
pub const WILSON_Z: f64 = 1.959963984540054;

/// Refinement budget per interval for the continuum certificate.
pub const CONTINUUM_MAX_DEPTH: usize = 24;

const POISSON_TAG: u64 = 0x706f_6973;
const LEMMA_TAG: u64 = 0x6c65_6d6d;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    HullTest,
    Poisson,
    SeparatorRun,
    Sweep,
    LemmaChecks,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::HullTest => "hull-test",
            Experiment::Poisson => "poisson",
            Experiment::SeparatorRun => "separator-run",
            Experiment::Sweep => "sweep",
            Experiment::LemmaChecks => "lemma-checks",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

/// Parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    N,
    HorizonExp,
    Depth,
    Alpha,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(SweepParam::N),
            "horizon_exp" | "horizon-exp" => Ok(SweepParam::HorizonExp),
            "depth" => Ok(SweepParam::Depth),
            "alpha" => Ok(SweepParam::Alpha),
            _ => Err(Error::Config(format!("cannot sweep over '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// `hull-test`, `poisson` or `separator-run`.
    pub experiment: Experiment,
    pub over: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub n: usize,
    /// Horizon `T = 2^{horizon_exp}`.
    pub horizon_exp: f64,
    pub depth: u32,
    pub alpha: f64,
    pub trials: u64,
    pub seed: u64,
    pub preset: ConstantsMode,
    /// `KEY=VAL` constant overrides, applied in order.
    pub overrides: Vec<(String, String)>,
    pub sweep: Option<SweepSpec>,
    /// Multiplies the bridge fluctuation variance in the lemma checks. Only for mutation tests.
    pub bridge_variance_scale: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::HullTest,
            n: 2,
            horizon_exp: 1.0,
            depth: 0,
            alpha: 10.0,
            trials: 1000,
            seed: 0,
            preset: ConstantsMode::Desk,
            overrides: Vec::new(),
            sweep: None,
            bridge_variance_scale: 1.0,
        }
    }
}

/// Finest refinement level accepted for hull tests.
pub const MAX_DEPTH: u32 = 16;

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if !(self.horizon_exp > 0.0) || !self.horizon_exp.is_finite() {
            return bad(format!("horizon_exp must be positive, got {}", self.horizon_exp));
        }
        if self.horizon_exp > 60.0 {
            return bad(format!("horizon_exp {} exceeds 60", self.horizon_exp));
        }
        if self.depth > MAX_DEPTH {
            return bad(format!("depth {} exceeds {MAX_DEPTH}", self.depth));
        }
        if !(self.alpha > 0.0) || self.alpha > 1e9 {
            return bad(format!("alpha must lie in (0, 1e9], got {}", self.alpha));
        }
        if !(self.bridge_variance_scale > 0.0) {
            return bad("bridge variance scale must be positive".into());
        }
        if let Some(sweep) = &self.sweep {
            if !matches!(sweep.experiment, Experiment::HullTest | Experiment::Poisson | Experiment::SeparatorRun) {
                return bad(format!("cannot sweep experiment '{}'", sweep.experiment.name()));
            }
            if sweep.values.is_empty() {
                return bad("sweep needs at least one value".into());
            }
            for &v in &sweep.values {
                self.with_param(sweep.over, v)?.with_experiment(sweep.experiment).validate()?;
            }
        }
        if self.experiment == Experiment::SeparatorRun {
            self.schedule()?;
        }
        Ok(())
    }

    fn with_experiment(mut self, e: Experiment) -> Self {
        self.experiment = e;
        self.sweep = None;
        self
    }

    /// Copy with one parameter replaced.
    pub fn with_param(&self, p: SweepParam, v: f64) -> Result<Self> {
        let mut c = self.clone();
        let as_count = |v: f64| -> Result<u64> {
            if v >= 0.0 && v.fract() == 0.0 && v < 1e12 {
                Ok(v as u64)
            } else {
                Err(Error::Config(format!("expected a whole number, got {v}")))
            }
        };
        match p {
            SweepParam::N => c.n = as_count(v)? as usize,
            SweepParam::HorizonExp => c.horizon_exp = v,
            SweepParam::Depth => c.depth = u32::try_from(as_count(v)?).map_err(|e| Error::Config(e.to_string()))?,
            SweepParam::Alpha => c.alpha = v,
        }
        Ok(c)
    }

    pub fn schedule_params(&self) -> Result<ScheduleParams> {
        let mut p = match self.preset {
            ConstantsMode::Paper => ScheduleParams::paper(),
            ConstantsMode::Desk => ScheduleParams::desk(),
        };
        for (k, v) in &self.overrides {
            p.set(k, v)?;
        }
        Ok(p)
    }

    pub fn schedule(&self) -> Result<Schedule<f64>> {
        Schedule::new(self.n, &self.schedule_params()?)
    }

    /// Number of blocks `⌈horizon_exp⌉` covering `[1, 2^{horizon_exp}]`.
    pub fn hull_blocks(&self) -> usize {
        (self.horizon_exp.ceil() as usize).max(1)
    }

    /// `block_grid(⌈horizon_exp⌉, depth)` cut at `2^{horizon_exp}`.
    pub fn hull_grid(&self) -> Vec<TimeKey> {
        block_grid(self.hull_blocks(), self.depth)
            .into_iter()
            .filter(|t| match t {
                TimeKey::Exp(e) => e.to_f64() <= self.horizon_exp,
                _ => false,
            })
            .collect()
    }

    /// Random stream of trial `trial`; fixed by the seed alone, so it replays exactly.
    pub fn stream(&self, trial: u64) -> RngStream {
        RngStream::new(self.seed, trial)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    ContainsOrigin,
    AvoidsOrigin,
    Ambiguous,
    SeparatorSuccess,
    SeparatorFail,
}

impl Outcome {
    /// The indicator `p_hat` estimates: containment for hull experiments, success for the separator.
    pub fn indicator(self) -> bool {
        matches!(self, Outcome::ContainsOrigin | Outcome::SeparatorSuccess)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub stream_id: u64,
    pub outcome: Outcome,
    /// Outside margin for hull experiments (0 otherwise); `min ⟨u, BM(t)/√t⟩` for the separator.
    pub margin: f64,
    /// Number of points tested (hull experiments).
    pub points: usize,
    /// Substeps that used the fallback perturbation (separator).
    pub fallbacks: usize,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Wilson score interval for `successes / trials` at level `z`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Extra per-row diagnostics; absent fields do not apply to the experiment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ambiguous: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_points: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback_trials: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback_substeps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_successes: Option<u64>,
    /// Whether `‖B(k,l)‖` was nonincreasing in `l` within every step of the median trial.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_trace_nonincreasing: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_check_disagreements: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monotone_violations: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flagged: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub experiment: String,
    pub n: usize,
    pub horizon_exp: f64,
    pub depth: u32,
    pub alpha: Option<f64>,
    pub trials: u64,
    pub seed: u64,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub mean_margin: f64,
    pub diagnostics: Diagnostics,
}

impl SweepRow {
    fn from_trials(cfg: &ExperimentConfig, experiment: Experiment, reports: &[TrialReport]) -> Self {
        let hits = reports.iter().filter(|r| r.outcome.indicator()).count() as u64;
        let trials = reports.len() as u64;
        let (lo, hi) = wilson_interval(hits, trials, WILSON_Z);
        let mean_margin = reports.iter().map(|r| r.margin).sum::<f64>() / trials.max(1) as f64;
        SweepRow {
            experiment: experiment.name().to_string(),
            n: cfg.n,
            horizon_exp: cfg.horizon_exp,
            depth: cfg.depth,
            alpha: (experiment == Experiment::Poisson).then_some(cfg.alpha),
            trials,
            seed: cfg.seed,
            p_hat: hits as f64 / trials.max(1) as f64,
            ci_lo: lo,
            ci_hi: hi,
            mean_margin,
            diagnostics: Diagnostics::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
}

pub const CSV_HEADER: &str = "experiment,n,horizon_exp,depth,alpha,trials,seed,p_hat,ci_lo,ci_hi,mean_margin";

impl SweepSummary {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let alpha = r.alpha.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.experiment, r.n, r.horizon_exp, r.depth, alpha, r.trials, r.seed, r.p_hat, r.ci_lo, r.ci_hi,
                r.mean_margin
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serialises");
        s.push('\n');
        s
    }
}

/// Everything a run produced; the first trial's artefacts are kept for the dump flags.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: SweepSummary,
    pub trials: Vec<Vec<TrialReport>>,
    pub first_path: Option<Vec<PathSnapshotEntry>>,
    pub first_certificate: Option<serde_json::Value>,
}

struct TrialArtifacts {
    report: TrialReport,
    path: Option<Vec<PathSnapshotEntry>>,
    certificate: Option<serde_json::Value>,
}

fn run_trials<F>(cfg: &ExperimentConfig, keep_first: bool, trial: F) -> Result<Vec<TrialArtifacts>>
where
    F: Fn(u64, bool) -> Result<TrialArtifacts> + Sync,
{
    (0..cfg.trials)
        .into_par_iter()
        .map(|j| {
            let start = Instant::now();
            let mut a = trial(j, keep_first && j == 0)?;
            a.report.wall_time = start.elapsed();
            Ok(a)
        })
        .collect()
}

fn hull_outcome(cert: &HullCertificate<f64>) -> (Outcome, f64) {
    match cert {
        HullCertificate::Inside { .. } => (Outcome::ContainsOrigin, 0.0),
        HullCertificate::Outside { margin, .. } => (Outcome::AvoidsOrigin, *margin),
        HullCertificate::Ambiguous { .. } => (Outcome::Ambiguous, 0.0),
    }
}

/// `origin_membership` plus an independent re-check of the returned certificate.
fn checked_membership(points: &[Vec<f64>]) -> Result<HullCertificate<f64>> {
    let tol = default_tolerance(points);
    let cert = origin_membership(points, tol)?;
    if !cert.verify(points, tol) {
        return Err(Error::CertificateInvalid(format!("{cert:?}")));
    }
    Ok(cert)
}

fn finish(cfg: &ExperimentConfig, experiment: Experiment, arts: Vec<TrialArtifacts>) -> (SweepRow, RunOutput) {
    let mut first_path = None;
    let mut first_certificate = None;
    let mut reports = Vec::with_capacity(arts.len());
    for a in arts {
        if a.path.is_some() {
            first_path = a.path;
        }
        if a.certificate.is_some() {
            first_certificate = a.certificate;
        }
        reports.push(a.report);
    }
    let row = SweepRow::from_trials(cfg, experiment, &reports);
    let out = RunOutput {
        summary: SweepSummary { rows: vec![row.clone()] },
        trials: vec![reports],
        first_path,
        first_certificate,
    };
    (row, out)
}

/// Containment frequency of `{BM(t) : t ∈ Q}` for `Q` the block grid on `[1, 2^{horizon_exp}]`.
/// Trials share stream ids across horizons and depths, so nested grids see the same path values.
pub fn run_hull_test(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let grid = cfg.hull_grid();
    let blocks = cfg.hull_blocks();
    let arts = run_trials(cfg, true, |j, keep| {
        let path = DyadicPath::<f64>::on_block_grid(cfg.n, blocks, cfg.depth, cfg.stream(j))?;
        let points = grid.iter().map(|t| path.get(t).map(<[f64]>::to_vec)).collect::<Result<Vec<_>>>()?;
        let cert = checked_membership(&points)?;
        let (outcome, margin) = hull_outcome(&cert);
        Ok(TrialArtifacts {
            report: TrialReport { stream_id: j, outcome, margin, points: points.len(), fallbacks: 0, wall_time: Duration::ZERO },
            path: keep.then(|| path.snapshot()),
            certificate: keep.then(|| serde_json::to_value(&cert).expect("certificate serialises")),
        })
    })?;
    let (mut row, mut out) = finish(cfg, Experiment::HullTest, arts);
    row.diagnostics.ambiguous = Some(count(&out.trials[0], Outcome::Ambiguous));
    out.summary.rows[0] = row;
    Ok(out)
}

fn count(reports: &[TrialReport], o: Outcome) -> u64 {
    reports.iter().filter(|r| r.outcome == o).count() as u64
}

/// Containment frequency of `{BM(t_i)}` for Poisson(`alpha`) times on `(0, 1]`.
/// An empty point set avoids the origin.
pub fn run_poisson(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let arts = run_trials(cfg, true, |j, keep| {
        let stream = cfg.stream(j);
        let times = poisson_times(cfg.alpha, &stream.derive(POISSON_TAG))?;
        let path = DyadicPath::<f64>::init(cfg.n, &times, stream)?;
        let points = times.iter().map(|t| path.get(t).map(<[f64]>::to_vec)).collect::<Result<Vec<_>>>()?;
        let (outcome, margin, cert) = if points.is_empty() {
            (Outcome::AvoidsOrigin, 0.0, None)
        } else {
            let cert = checked_membership(&points)?;
            let (o, m) = hull_outcome(&cert);
            (o, m, Some(cert))
        };
        Ok(TrialArtifacts {
            report: TrialReport { stream_id: j, outcome, margin, points: points.len(), fallbacks: 0, wall_time: Duration::ZERO },
            path: keep.then(|| path.snapshot()),
            certificate: if keep { cert.map(|c| serde_json::to_value(&c).expect("certificate serialises")) } else { None },
        })
    })?;
    let (mut row, mut out) = finish(cfg, Experiment::Poisson, arts);
    let reports = &out.trials[0];
    row.diagnostics.ambiguous = Some(count(reports, Outcome::Ambiguous));
    row.diagnostics.mean_points = Some(reports.iter().map(|r| r.points as f64).sum::<f64>() / reports.len() as f64);
    out.summary.rows[0] = row;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
struct SeparatorDump<'a> {
    result: &'a SeparatorResult<f64>,
    continuum: &'a ContinuumVerdict,
}

/// Runs the construction per trial; success needs both the grid check and the continuum
/// certificate with budget `1/n`. Every grid success is cross-checked against the hull oracle on
/// the same grid values, and any disagreement aborts the run.
pub fn run_separator(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let sched = cfg.schedule()?;
    let eps = 1.0 / cfg.n as f64;
    struct Extra {
        grid_success: bool,
        trace_norms: Vec<(usize, usize, f64)>,
    }
    let extras = std::sync::Mutex::new(Vec::<(u64, Extra)>::new());
    let arts = run_trials(cfg, true, |j, keep| {
        let mut path = DyadicPath::<f64>::on_block_grid(cfg.n, sched.n_blocks, sched.steps as u32, cfg.stream(j))?;
        let result = run_construction(&path, &sched)?;
        let mut success = result.success;
        if result.success {
            let points = result.grid.iter().map(|t| path.get(t).map(<[f64]>::to_vec)).collect::<Result<Vec<_>>>()?;
            let cert = checked_membership(&points)?;
            if !cert.is_outside() {
                return Err(Error::CertificateInvalid(format!(
                    "trial {j}: separator verified on the grid but the hull oracle returned {cert:?}"
                )));
            }
        }
        let continuum = if result.success {
            certify_continuum(&mut path, &result.u_final, &result.grid, eps, CONTINUUM_MAX_DEPTH)?
        } else {
            ContinuumVerdict::Failed { refinements: 0, depth_exhausted: false }
        };
        success &= continuum.is_certified();
        let fallbacks = result.fallback_count();
        extras.lock().expect("extras lock").push((
            j,
            Extra {
                grid_success: result.success,
                trace_norms: result.trace.iter().map(|t| (t.k, t.l, t.stat_norm)).collect(),
            },
        ));
        Ok(TrialArtifacts {
            report: TrialReport {
                stream_id: j,
                outcome: if success { Outcome::SeparatorSuccess } else { Outcome::SeparatorFail },
                margin: result.margin,
                points: result.grid.len(),
                fallbacks,
                wall_time: Duration::ZERO,
            },
            path: keep.then(|| path.snapshot()),
            certificate: keep.then(|| {
                serde_json::to_value(SeparatorDump { result: &result, continuum: &continuum })
                    .expect("result serialises")
            }),
        })
    })?;
    let mut extras = extras.into_inner().expect("extras lock");
    extras.sort_by_key(|(j, _)| *j);

    let mut run_cfg = cfg.clone();
    run_cfg.horizon_exp = sched.n_blocks as f64;
    run_cfg.depth = sched.steps as u32;
    let (mut row, mut out) = finish(&run_cfg, Experiment::SeparatorRun, arts);
    let reports = &out.trials[0];
    let d = &mut row.diagnostics;
    d.fallback_trials = Some(reports.iter().filter(|r| r.fallbacks > 0).count() as u64);
    d.fallback_substeps = Some(reports.iter().map(|r| r.fallbacks as u64).sum());
    d.grid_successes = Some(extras.iter().filter(|(_, e)| e.grid_success).count() as u64);
    d.cross_check_disagreements = Some(0);
    // median trial by final margin
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| reports[a].margin.total_cmp(&reports[b].margin).then(a.cmp(&b)));
    let median = order[order.len() / 2];
    let norms = &extras[median].1.trace_norms;
    d.median_trace_nonincreasing = Some(
        norms.windows(2).filter(|w| w[0].0 == w[1].0 && w[0].0 > 0).all(|w| w[1].2 <= w[0].2),
    );
    out.summary.rows[0] = row;
    Ok(out)
}

fn run_single(cfg: &ExperimentConfig, experiment: Experiment) -> Result<RunOutput> {
    match experiment {
        Experiment::HullTest => run_hull_test(cfg),
        Experiment::Poisson => run_poisson(cfg),
        Experiment::SeparatorRun => run_separator(cfg),
        other => Err(Error::Config(format!("'{}' is not a single experiment", other.name()))),
    }
}

/// One row per sweep value. Hull tests over `horizon_exp` or `depth` check that every trial's
/// containment indicator is nondecreasing along the sorted values (nested grids, shared streams);
/// a violation is an error. Poisson sweeps over `alpha` flag, but do not fail on, a drop in
/// `p_hat` larger than two interval widths.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let spec = cfg.sweep.clone().ok_or_else(|| Error::Config("sweep needs --over and --values".into()))?;
    let mut rows = Vec::new();
    let mut trials = Vec::new();
    let mut first_path = None;
    let mut first_certificate = None;
    for &v in &spec.values {
        let c = cfg.with_param(spec.over, v)?;
        let out = run_single(&c, spec.experiment)?;
        if first_path.is_none() {
            first_path = out.first_path;
            first_certificate = out.first_certificate;
        }
        rows.extend(out.summary.rows);
        trials.extend(out.trials);
    }

    let nested = spec.experiment == Experiment::HullTest
        && matches!(spec.over, SweepParam::HorizonExp | SweepParam::Depth);
    if nested {
        let mut order: Vec<usize> = (0..spec.values.len()).collect();
        order.sort_by(|&a, &b| spec.values[a].total_cmp(&spec.values[b]));
        let mut violations = 0u64;
        for j in 0..cfg.trials as usize {
            for w in order.windows(2) {
                if trials[w[0]][j].outcome.indicator() && !trials[w[1]][j].outcome.indicator() {
                    violations += 1;
                }
            }
        }
        for r in &mut rows {
            r.diagnostics.monotone_violations = Some(violations);
        }
        if violations > 0 {
            return Err(Error::CertificateInvalid(format!(
                "{violations} containment indicators decreased along nested grids"
            )));
        }
    }
    if spec.experiment == Experiment::Poisson && spec.over == SweepParam::Alpha {
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| spec.values[a].total_cmp(&spec.values[b]));
        for w in order.windows(2) {
            let (lo, hi) = (&rows[w[0]], &rows[w[1]]);
            let width = (lo.ci_hi - lo.ci_lo).max(hi.ci_hi - hi.ci_lo);
            if lo.p_hat - hi.p_hat > 2.0 * width {
                let msg = format!("p_hat drops from alpha={} to alpha={}", spec.values[w[0]], spec.values[w[1]]);
                rows[w[1]].diagnostics.flagged = Some(msg);
            }
        }
    }
    Ok(RunOutput { summary: SweepSummary { rows }, trials, first_path, first_certificate })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    match cfg.experiment {
        Experiment::Sweep => run_sweep(cfg),
        Experiment::LemmaChecks => Err(Error::Config("use run_lemma_checks for lemma-checks".into())),
        e => run_single(cfg, e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub check: String,
    pub trials: u64,
    pub statistic: f64,
    pub bound: f64,
    pub pass: bool,
}

impl CheckRow {
    /// Passes when `statistic <= bound`.
    fn upper(check: &str, trials: u64, statistic: f64, bound: f64) -> Self {
        Self { check: check.to_string(), trials, statistic, bound, pass: statistic <= bound }
    }
}

pub const CHECK_CSV_HEADER: &str = "check,trials,statistic,bound,pass";

pub fn checks_to_csv(rows: &[CheckRow]) -> String {
    let mut s = String::from(CHECK_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.check, r.trials, r.statistic, r.bound, r.pass);
    }
    s
}

pub fn checks_to_json(rows: &[CheckRow]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("rows serialise");
    s.push('\n');
    s
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value at significance `level`.
pub fn ks_critical(level: f64, na: usize, nb: usize) -> f64 {
    let c = (-(level / 2.0).ln() / 2.0).sqrt();
    c * ((na + nb) as f64 / (na as f64 * nb as f64)).sqrt()
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

fn sample_cov(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1.0)
}

/// `BM(1), BM(1.5), BM(2)` in one coordinate, either refined from `{1, 2}` or sampled directly.
fn bridge_sample(stream: RngStream, refined: bool, scale: f64) -> Result<[f64; 3]> {
    let keys = [TimeKey::raw(1.0)?, TimeKey::raw(1.5)?, TimeKey::raw(2.0)?];
    let path = if refined {
        let mut p = DyadicPath::<f64>::init(1, &[keys[0], keys[2]], stream)?.with_bridge_variance_scale(scale);
        p.bridge_refine(keys[1])?;
        p
    } else {
        DyadicPath::<f64>::init(1, &keys, stream)?
    };
    Ok([path.get(&keys[0])?[0], path.get(&keys[1])?[0], path.get(&keys[2])?[0]])
}

/// The probabilistic sanity suite: Gaussian moments and tails, singular-value concentration,
/// truncated norms, bridge law and refinement-order invariance, and minimum-norm affine residuals.
/// Statistical checks allow three standard errors.
pub fn run_lemma_checks(cfg: &ExperimentConfig) -> Result<Vec<CheckRow>> {
    if cfg.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let trials = cfg.trials;
    let base = RngStream::new(cfg.seed, 0).derive(LEMMA_TAG);
    let mut rows = Vec::new();

    // standard normal draws, 100 per trial
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .flat_map_iter(|j| normal_vector(&mut base.derive_pair(1, j).generator(), 100))
        .collect();
    let ns = samples.len() as f64;
    let (m, v) = mean_var(&samples);
    rows.push(CheckRow::upper("gaussian_mean", trials, m.abs(), 3.0 / ns.sqrt()));
    rows.push(CheckRow::upper("gaussian_variance", trials, (v - 1.0).abs(), 3.0 * (2.0 / ns).sqrt()));
    for tau in [1.0f64, 2.0, 3.0] {
        let freq = samples.iter().filter(|&&x| x >= tau).count() as f64 / ns;
        let p = crate::gaussian_stats::normal_tail(tau);
        let bound = gaussian_tail_bound(tau)? + 3.0 * (p * (1.0 - p) / ns).sqrt();
        rows.push(CheckRow::upper(&format!("normal_tail_tau{tau}"), trials, freq, bound));
    }

    let svd = check_singular_value_interval(200, 50, 3.0, trials, &base.derive(2))?;
    rows.push(CheckRow::upper(
        "singular_value_interval",
        trials,
        svd.empirical_rate,
        svd.bound + 3.0 * (svd.bound / trials as f64).sqrt(),
    ));

    let tn = truncated_norm_bound(10_000, 3.0)?;
    let norms: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|j| sample_truncated_norm(10_000, 3.0, &base.derive_pair(3, j)))
        .collect::<Result<_>>()?;
    let exceed = norms.iter().filter(|&&x| x > tn.threshold).count() as f64 / trials as f64;
    let bound = tn.failure_prob + 3.0 * (tn.failure_prob / trials as f64).sqrt();
    rows.push(CheckRow::upper("truncated_norm", trials, exceed, bound));

    let scale = cfg.bridge_variance_scale;
    let refined: Vec<[f64; 3]> = (0..trials)
        .into_par_iter()
        .map(|j| bridge_sample(base.derive_pair(4, j), true, scale))
        .collect::<Result<_>>()?;
    let direct: Vec<[f64; 3]> = (0..trials)
        .into_par_iter()
        .map(|j| bridge_sample(base.derive_pair(5, j), false, 1.0))
        .collect::<Result<_>>()?;
    let nt = trials as f64;
    let fluct: Vec<f64> = refined.iter().map(|s| s[1] - 0.5 * (s[0] + s[2])).collect();
    let (_, vf) = mean_var(&fluct);
    rows.push(CheckRow::upper("bridge_fluctuation_variance", trials, (vf - 0.25).abs(), 3.0 * 0.25 * (2.0 / nt).sqrt()));
    let mid: Vec<f64> = refined.iter().map(|s| s[1]).collect();
    let (_, vm) = mean_var(&mid);
    rows.push(CheckRow::upper("bridge_marginal_variance", trials, (vm - 1.5).abs(), 3.0 * 1.5 * (2.0 / nt).sqrt()));
    let x1: Vec<f64> = refined.iter().map(|s| s[0]).collect();
    let x2: Vec<f64> = refined.iter().map(|s| s[2]).collect();
    // Var(X1 X2) = 3 for X1 = BM(1), X2 = BM(2)
    rows.push(CheckRow::upper("bm_covariance", trials, (sample_cov(&x1, &x2) - 1.0).abs(), 3.0 * (3.0 / nt).sqrt()));
    let direct_mid: Vec<f64> = direct.iter().map(|s| s[1]).collect();
    rows.push(CheckRow::upper(
        "refinement_order_ks",
        trials,
        ks_statistic(&mid, &direct_mid),
        ks_critical(1e-3, mid.len(), direct_mid.len()),
    ));

    let instances = trials.div_ceil(10);
    let worst = (0..instances)
        .into_par_iter()
        .map(|j| lemma2_residual(&base.derive_pair(6, j)))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0f64, f64::max);
    rows.push(CheckRow::upper("min_norm_affine_residual", instances, worst, 1e-9));

    let counts: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|j| poisson_times(100.0, &base.derive_pair(7, j)).map(|t| t.len() as f64))
        .collect::<Result<_>>()?;
    let (mc, _) = mean_var(&counts);
    rows.push(CheckRow::upper("poisson_mean_count", trials, (mc - 100.0).abs(), 3.0 * (100.0 / nt).sqrt()));

    Ok(rows)
}

/// Worst of the three residuals of one random `d = 64`, `m = 16` instance with unit `b`:
/// `|‖u‖ − 1|`, `max |⟨u,X_i⟩ − dist |b_i||`, and the relative error of `Σ⟨u,X_i⟩² = dist²`.
pub fn lemma2_residual(stream: &RngStream) -> Result<f64> {
    let mut g = stream.generator();
    let xs: Vec<Vec<f64>> = (0..16).map(|_| normal_vector(&mut g, 64)).collect();
    let mut b = normal_vector(&mut g, 16);
    let nb = norm(&b);
    b.iter_mut().for_each(|x| *x /= nb);
    let a = min_norm_affine_unit(&xs, &b)?;
    let unit = (norm(&a.u) - 1.0).abs();
    let fit = xs
        .iter()
        .zip(&b)
        .map(|(x, bi)| (dot(&a.u, x) - a.dist * bi.abs()).abs())
        .fold(0.0, f64::max);
    let sq: f64 = xs.iter().map(|x| dot(&a.u, x).powi(2)).sum();
    let rel = (sq - a.dist * a.dist).abs() / (a.dist * a.dist);
    Ok(unit.max(fit).max(rel))
}

/// Runs `f` on a pool with `threads` workers, or on the global pool when `None`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::Config("threads must be at least 1".into())),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hull_cfg() -> ExperimentConfig {
        ExperimentConfig { n: 2, horizon_exp: 2.0, depth: 3, trials: 64, seed: 7, ..Default::default() }
    }

    #[test]
    fn wilson_reference_values() {
        // z = 1.96, 5/10: centre 0.5, half 0.2692...
        let (lo, hi) = wilson_interval(5, 10, WILSON_Z);
        assert!((lo - 0.236593090512564).abs() < 1e-9, "{lo}");
        assert!((hi - 0.763406909487436).abs() < 1e-9, "{hi}");
        let (lo, hi) = wilson_interval(0, 100, WILSON_Z);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.05);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        for cfg in [
            ExperimentConfig { trials: 0, ..Default::default() },
            ExperimentConfig { n: 1, ..Default::default() },
            ExperimentConfig { horizon_exp: 0.0, ..Default::default() },
            ExperimentConfig { alpha: -1.0, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
        assert!(hull_cfg().validate().is_ok());
    }

    #[test]
    fn hull_grid_cut_at_horizon() {
        let cfg = ExperimentConfig { horizon_exp: 1.5, depth: 1, ..Default::default() };
        let g = cfg.hull_grid();
        assert_eq!(g, vec![TimeKey::exp(0, 0), TimeKey::exp(1, 1), TimeKey::exp(2, 1), TimeKey::exp(3, 1)]);
    }

    #[test]
    fn hull_test_is_deterministic_across_threads() {
        let cfg = hull_cfg();
        let a = with_threads(Some(1), || run_hull_test(&cfg)).unwrap().unwrap();
        let b = with_threads(Some(4), || run_hull_test(&cfg)).unwrap().unwrap();
        assert_eq!(a.summary.to_csv(), b.summary.to_csv());
        assert_eq!(a.summary.to_json(), b.summary.to_json());
        let r = &a.summary.rows[0];
        let hits = a.trials[0].iter().filter(|t| t.outcome.indicator()).count() as f64;
        assert_eq!(r.p_hat, hits / 64.0);
        assert!(r.ci_lo <= r.p_hat && r.p_hat <= r.ci_hi);
    }

    #[test]
    fn poisson_tiny_alpha_is_empty() {
        let cfg = ExperimentConfig { experiment: Experiment::Poisson, alpha: 1e-6, trials: 50, ..Default::default() };
        let out = run_poisson(&cfg).unwrap();
        assert_eq!(out.summary.rows[0].p_hat, 0.0);
        assert_eq!(out.summary.rows[0].diagnostics.mean_points, Some(0.0));
    }

    #[test]
    fn sweep_monotone_over_horizon() {
        let cfg = ExperimentConfig {
            experiment: Experiment::Sweep,
            sweep: Some(SweepSpec { experiment: Experiment::HullTest, over: SweepParam::HorizonExp, values: vec![3.0, 1.0, 2.0] }),
            ..hull_cfg()
        };
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.summary.rows.len(), 3);
        assert_eq!(out.summary.rows[0].diagnostics.monotone_violations, Some(0));
        let p: Vec<f64> = out.summary.rows.iter().map(|r| r.p_hat).collect();
        assert!(p[1] <= p[2] && p[2] <= p[0]);
    }

    #[test]
    fn ks_statistic_basics() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_statistic(&a, &a), 0.0);
        assert_eq!(ks_statistic(&a, &[10.0, 11.0]), 1.0);
        assert!((ks_critical(1e-3, 100, 100) - 1.9495 * 0.1414).abs() < 1e-3);
    }

    #[test]
    fn csv_header_and_row_count() {
        let out = run_hull_test(&hull_cfg()).unwrap();
        let csv = out.summary.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 2);
        assert!(csv.ends_with('\n'));
    }
}
