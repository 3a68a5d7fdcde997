//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line; run with
//! `cargo test --test acceptance -- --nocapture` to see them.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use rayon::prelude::*;

use hullwalk::bm_path::{DyadicPath, TimeKey};
use hullwalk::gaussian_stats::{
    check_singular_value_interval, gaussian_tail_bound, sample_truncated_norm, truncated_norm_bound,
};
use hullwalk::harness::{
    ks_critical, ks_statistic, lemma2_residual, run_experiment, with_threads, Experiment, ExperimentConfig,
    Outcome, SweepParam, SweepSpec,
};
use hullwalk::hull::{default_tolerance, oracle_2d, origin_membership, HullCertificate};
use hullwalk::rng::{normal_vector, RngStream};
use hullwalk::separator::{run_construction, verify_certificate, ConstantsMode, Schedule, ScheduleParams};

const SEED: u64 = 20_240_601;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn config(experiment: Experiment) -> ExperimentConfig {
    ExperimentConfig { experiment, seed: SEED, ..ExperimentConfig::default() }
}

fn minimum_norm_affine_exactness() -> Verdict {
    let base = RngStream::new(SEED, 1);
    let start = Instant::now();
    let worst = (0..1000u64)
        .into_par_iter()
        .map(|j| lemma2_residual(&base.derive(j)))
        .collect::<hullwalk::Result<Vec<f64>>>()
        .map_err(|e| e.to_string())?
        .into_iter()
        .fold(0.0f64, f64::max);
    let secs = start.elapsed().as_secs_f64();
    check(worst <= 1e-9 && secs < 5.0, format!("worst residual {worst:.2e}, {secs:.2} s"))
}

/// `(BM(1), BM(1.5), BM(2))` in one coordinate; refined from `{1, 2}` or sampled in time order.
fn bridge_triple(stream: RngStream, refined: bool) -> [f64; 3] {
    let keys = [1.0, 1.5, 2.0].map(|t| TimeKey::raw(t).unwrap());
    let path = if refined {
        let mut p = DyadicPath::<f64>::init(1, &[keys[0], keys[2]], stream).unwrap();
        p.bridge_refine(keys[1]).unwrap();
        p
    } else {
        DyadicPath::<f64>::init(1, &keys, stream).unwrap()
    };
    keys.map(|k| path.get(&k).unwrap()[0])
}

fn bridge_law() -> Verdict {
    let n = 100_000u64;
    let base = RngStream::new(SEED, 2);
    let refined: Vec<[f64; 3]> = (0..n).into_par_iter().map(|j| bridge_triple(base.derive_pair(0, j), true)).collect();
    let direct: Vec<[f64; 3]> = (0..n).into_par_iter().map(|j| bridge_triple(base.derive_pair(1, j), false)).collect();
    let nf = n as f64;
    let fluct: Vec<f64> = refined.iter().map(|s| s[1] - 0.5 * (s[0] + s[2])).collect();
    let fm = fluct.iter().sum::<f64>() / nf;
    let var = fluct.iter().map(|x| (x - fm).powi(2)).sum::<f64>() / (nf - 1.0);
    let (m1, m2) = (refined.iter().map(|s| s[0]).sum::<f64>() / nf, refined.iter().map(|s| s[2]).sum::<f64>() / nf);
    let cov = refined.iter().map(|s| (s[0] - m1) * (s[2] - m2)).sum::<f64>() / (nf - 1.0);
    let a: Vec<f64> = refined.iter().map(|s| s[1]).collect();
    let b: Vec<f64> = direct.iter().map(|s| s[1]).collect();
    let (ks, crit) = (ks_statistic(&a, &b), ks_critical(1e-3, a.len(), b.len()));
    check(
        (var - 0.25).abs() <= 0.005 && (cov - 1.0).abs() <= 0.02 && ks <= crit,
        format!("var {var:.5}, cov {cov:.4}, KS {ks:.5} (critical {crit:.5})"),
    )
}

fn planar_oracle_equivalence() -> Verdict {
    let base = RngStream::new(SEED, 3);
    let start = Instant::now();
    let results: Vec<(bool, bool, bool)> = (0..10_000u64)
        .into_par_iter()
        .map(|j| {
            let mut g = base.derive(j).generator();
            let size = 3 + (rand::Rng::random_range(&mut g, 0..18usize));
            let pts: Vec<[f64; 2]> = (0..size).map(|_| normal_vector(&mut g, 2)).map(|v| [v[0], v[1]]).collect();
            let vecs: Vec<Vec<f64>> = pts.iter().map(|p| p.to_vec()).collect();
            let tol = default_tolerance(&vecs);
            let cert = origin_membership(&vecs, tol).unwrap();
            let oracle = oracle_2d(&pts).unwrap();
            let ambiguous = matches!(cert, HullCertificate::Ambiguous { .. });
            (ambiguous, ambiguous || cert.is_inside() == oracle, cert.verify(&vecs, tol))
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let ambiguous = results.iter().filter(|r| r.0).count();
    let disagree = results.iter().filter(|r| !r.1).count();
    let invalid = results.iter().filter(|r| !r.2).count();
    check(
        disagree == 0 && invalid == 0 && (ambiguous as f64) < 0.001 * 10_000.0 && secs < 10.0,
        format!("{disagree} disagreements, {ambiguous} ambiguous, {invalid} invalid certificates, {secs:.2} s"),
    )
}

/// Every harness experiment re-verifies its certificates and aborts on a violation or on a
/// separator/hull disagreement, so finishing cleanly is the assertion.
fn certificate_soundness() -> Verdict {
    let mut runs = Vec::new();
    let mut hull = config(Experiment::HullTest);
    (hull.n, hull.horizon_exp, hull.depth, hull.trials) = (3, 4.0, 3, 500);
    runs.push(hull);
    let mut poisson = config(Experiment::Poisson);
    (poisson.n, poisson.alpha, poisson.trials) = (4, 50.0, 500);
    runs.push(poisson);
    let mut sep = config(Experiment::SeparatorRun);
    (sep.n, sep.trials) = (256, 100);
    runs.push(sep.clone());
    sep.overrides = vec![("C_h".into(), "0.0002".into())];
    runs.push(sep);
    let mut disagreements = 0;
    for cfg in &runs {
        let out = run_experiment(cfg).map_err(|e| format!("{}: {e}", cfg.experiment.name()))?;
        disagreements += out.summary.rows.iter().filter_map(|r| r.diagnostics.cross_check_disagreements).sum::<u64>();
    }
    check(disagreements == 0, format!("{} experiments, {disagreements} cross-check disagreements", runs.len()))
}

fn statistical_bounds() -> Verdict {
    let base = RngStream::new(SEED, 5);
    let svd = check_singular_value_interval(200, 50, 3.0, 10_000, &base.derive(0)).map_err(|e| e.to_string())?;

    let tn = truncated_norm_bound(10_000, 3.0).map_err(|e| e.to_string())?;
    let exceed = (0..1000u64)
        .into_par_iter()
        .filter(|&j| sample_truncated_norm(10_000, 3.0, &base.derive_pair(1, j)).unwrap() > tn.threshold)
        .count();

    let samples = normal_vector(&mut base.derive(2).generator(), 1_000_000);
    let mut tails = Vec::new();
    for tau in [1.0f64, 2.0, 3.0] {
        let freq = samples.iter().filter(|&&x| x >= tau).count() as f64 / samples.len() as f64;
        tails.push((tau, freq, gaussian_tail_bound(tau).unwrap()));
    }
    let tails_ok = tails.iter().all(|(_, f, b)| f <= b);
    let tail_text: Vec<String> = tails.iter().map(|(t, f, b)| format!("tail({t}) {f:.5} <= {b:.5}")).collect();
    check(
        svd.empirical_rate <= 0.03 && exceed == 0 && !tn.hypothesis_violated && tails_ok,
        format!(
            "singular-value rate {:.4}, truncated-norm exceedances {exceed}, {}",
            svd.empirical_rate,
            tail_text.join(", ")
        ),
    )
}

fn schedule_algebra() -> Verdict {
    let r = 2f64.powf(-0.25);
    let mut worst = 0.0f64;
    let mut ordered = true;
    let mut ratio_err = 0.0f64;
    let mut desk = ScheduleParams::desk();
    desk.set("C_h", "1.0").unwrap();
    for params in [ScheduleParams::desk(), desk, ScheduleParams::paper()] {
        let s = Schedule::<f64>::new(256, &params).map_err(|e| e.to_string())?;
        ratio_err = ratio_err.max((s.c_f / s.c_h - 2.0 * (1.0 - r).powi(-2)).abs());
        let (mut f, mut h) = (s.f_value(0, 0), 0.0);
        for k in 0..=8usize {
            if k > 0 {
                let tail = r.powi(k as i32 - 1) * r.powi(9) / (1.0 - r);
                f -= s.c_f * tail;
                h += s.c_h * tail;
            }
            for l in 0..=8usize {
                if l > 0 {
                    f -= s.c_f * r.powi((k + l) as i32);
                    h += s.c_h * r.powi((k + l) as i32);
                }
                worst = worst.max((f - s.f_value(k, l)).abs() / f.abs().max(1.0));
                worst = worst.max((h - s.h_value(k, l)).abs() / h.abs().max(1.0));
                ordered &= s.f_value(k, l) >= s.c_f && s.c_f >= 2.0 * s.h_value(k, l);
            }
        }
    }
    check(
        worst <= 1e-12 && ordered && ratio_err <= 1e-12,
        format!("replay error {worst:.1e}, ordering holds: {ordered}, ratio error {ratio_err:.1e}"),
    )
}

fn end_to_end_construction() -> Verdict {
    let mut cfg = config(Experiment::SeparatorRun);
    (cfg.n, cfg.trials, cfg.preset) = (256, 200, ConstantsMode::Desk);
    let sched = cfg.schedule().map_err(|e| e.to_string())?;
    if (sched.n_blocks, sched.steps, sched.substeps) != (8, 3, 2) {
        return Err(format!("desk shape N={}, M={}, M'={}", sched.n_blocks, sched.steps, sched.substeps));
    }
    let start = Instant::now();
    let out = with_threads(Some(1), || run_experiment(&cfg)).unwrap().map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let mut bad = 0;
    for r in out.trials[0].iter().filter(|r| r.outcome == Outcome::SeparatorSuccess) {
        let path = DyadicPath::<f64>::on_block_grid(256, sched.n_blocks, sched.steps as u32, cfg.stream(r.stream_id)).unwrap();
        let res = run_construction(&path, &sched).unwrap();
        let check = verify_certificate(&path, &res.u_final, &res.grid).unwrap();
        let points: Vec<Vec<f64>> = res.grid.iter().map(|t| path.get(t).unwrap().to_vec()).collect();
        let hull = origin_membership(&points, default_tolerance(&points)).unwrap();
        bad += usize::from(!check.positive || !hull.is_outside());
    }
    let row = &out.summary.rows[0];
    check(
        bad == 0 && secs < 60.0,
        format!(
            "success rate {:.3} [{:.3}, {:.3}], {} fallback substeps, {bad} unverified successes, {secs:.2} s",
            row.p_hat,
            row.ci_lo,
            row.ci_hi,
            row.diagnostics.fallback_substeps.unwrap_or(0)
        ),
    )
}

fn cli(threads: &str) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_hullwalk"))
        .args(["sweep", "--n", "2", "--over", "horizon_exp", "--values", "1,2,3", "--trials", "2000"])
        .args(["--seed", &SEED.to_string(), "--output", "json", "--threads", threads])
        .env_remove("HULLWALK_THREADS")
        .output()
        .expect("binary runs");
    assert!(out.status.success());
    out.stdout
}

fn monotonicity_and_determinism() -> Verdict {
    let mut cfg = config(Experiment::Sweep);
    (cfg.n, cfg.trials) = (2, 2000);
    cfg.sweep = Some(SweepSpec { experiment: Experiment::HullTest, over: SweepParam::HorizonExp, values: vec![1.0, 2.0, 3.0] });
    let out = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let mut violations = 0;
    for j in 0..2000 {
        let ind: Vec<bool> = out.trials.iter().map(|t| t[j].outcome.indicator()).collect();
        violations += ind.windows(2).filter(|w| w[0] && !w[1]).count();
    }
    let p: Vec<String> = out.summary.rows.iter().map(|r| format!("{:.4}", r.p_hat)).collect();
    let (a, b, c) = (cli("1"), cli("1"), cli("4"));
    let identical = a == b && a == c;
    check(
        violations == 0 && identical,
        format!("p_hat {}, {violations} monotonicity violations, byte-identical output: {identical}", p.join(" / ")),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("1 minimum-norm affine exactness", minimum_norm_affine_exactness),
        ("2 bridge law", bridge_law),
        ("3 planar hull oracle equivalence", planar_oracle_equivalence),
        ("4 certificate soundness", certificate_soundness),
        ("5 statistical bound checks", statistical_bounds),
        ("6 schedule algebra", schedule_algebra),
        ("7 end-to-end construction", end_to_end_construction),
        ("8 monotonicity and determinism", monotonicity_and_determinism),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        match verdict {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                println!("FAIL  {name}: {detail}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
