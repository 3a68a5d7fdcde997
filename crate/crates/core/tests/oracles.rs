//! Reference values computed independently (30-digit arithmetic or brute force) and the
//! Monte Carlo examples for each module.

use hullwalk::bm_path::{bridge_exceedance_prob, poisson_times, DyadicPath, TimeKey};
use hullwalk::gaussian_stats::{
    check_singular_value_interval, gaussian_tail_bound, normal_tail, truncated_norm_bound,
};
use hullwalk::hull::{min_norm_point, oracle_2d, origin_membership};
use hullwalk::linalg::{dot, norm};
use hullwalk::rng::{normal_vector, RngStream};
use hullwalk::separator::{
    initial_vector, min_norm_affine_unit, run_construction, step_check, Schedule, ScheduleParams,
};

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn frozen_closed_forms() {
    assert!(close(gaussian_tail_bound(1.0).unwrap(), 0.241970724519143350, 1e-14));
    assert!(close(gaussian_tail_bound(2.0).unwrap(), 0.0269954832565940260, 1e-14));
    assert!(close(gaussian_tail_bound(3.0).unwrap(), 0.00147728280397933573, 1e-14));
    assert!(close(normal_tail(1.0), 0.158655253931457051, 1e-13));
    assert!(close(normal_tail(2.0), 0.0227501319481792072, 1e-13));
    assert!(close(normal_tail(3.0), 0.00134989803163009453, 1e-13));
    let t = truncated_norm_bound(10_000, 3.0).unwrap();
    assert!(close(t.threshold, 129.860986943339892, 1e-14));
    assert!(close(t.failure_prob, (-200f64).exp(), 1e-14));
    assert!(!t.hypothesis_violated);
    assert!(truncated_norm_bound(1, 3.0).unwrap().hypothesis_violated);
    assert!(close(bridge_exceedance_prob(0.5).unwrap(), 0.606530659712633424, 1e-15));
    assert!(close(bridge_exceedance_prob(1.0).unwrap(), 0.135335283236612692, 1e-15));
}

#[test]
fn frozen_schedule_constants() {
    let mut p = ScheduleParams::desk();
    p.set("C_h", "1").unwrap();
    let s = Schedule::<f64>::new(256, &p).unwrap();
    assert!(close(s.c_f, 79.0078176793560167, 1e-13));
    assert!(close(s.f_value(0, 0) / s.c_f, 40.5039088396780084, 1e-13));
    assert_eq!(s.h_value(0, 0), 0.0);
    // all substeps together take C_f S/(1−r) off f(0,0), leaving C_f (1 + 1/(1−r)) ≥ C_f
    let r = 2f64.powf(-0.25);
    let big_s = 5.28521350788324520;
    assert!(close(r / (1.0 - r), big_s, 1e-14));
    let limit = s.f_value(0, 0) - s.c_f * big_s / (1.0 - r);
    assert!(close(s.f_value(400, 0), limit, 1e-12));
    assert!(close(limit, s.c_f * (1.0 + 1.0 / (1.0 - r)), 1e-12));
}

#[test]
fn singular_value_examples() {
    let r = check_singular_value_interval(200, 50, 3.0, 2000, &RngStream::new(11, 0)).unwrap();
    assert!(close(r.bound, 0.0222179930764846130, 1e-14));
    assert!(r.empirical_rate <= 0.03);
    let v = check_singular_value_interval(1, 1, 0.0, 1, &RngStream::new(11, 1)).unwrap();
    assert_eq!((v.bound, v.violations), (2.0, 0));
    assert!(check_singular_value_interval(3, 5, 1.0, 1, &RngStream::new(11, 2)).is_err());
}

/// Exact distance from the origin to the hull of 2-D points by enumerating vertices, segments and
/// triangles (Carathéodory).
fn brute_distance_2d(pts: &[Vec<f64>]) -> f64 {
    let mut best = pts.iter().map(|p| norm(p)).fold(f64::INFINITY, f64::min);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let (a, b) = (&pts[i], &pts[j]);
            let d = [b[0] - a[0], b[1] - a[1]];
            let len2 = d[0] * d[0] + d[1] * d[1];
            if len2 > 0.0 {
                let t = (-(a[0] * d[0] + a[1] * d[1]) / len2).clamp(0.0, 1.0);
                best = best.min(((a[0] + t * d[0]).powi(2) + (a[1] + t * d[1]).powi(2)).sqrt());
            }
            for c in &pts[j + 1..] {
                let cross = |p: &[f64], q: &[f64]| p[0] * q[1] - p[1] * q[0];
                let (s1, s2, s3) = (cross(a, b), cross(b, c), cross(c, a));
                if (s1 >= 0.0 && s2 >= 0.0 && s3 >= 0.0) || (s1 <= 0.0 && s2 <= 0.0 && s3 <= 0.0) {
                    return 0.0;
                }
            }
        }
    }
    best
}

#[test]
fn min_norm_point_matches_brute_force_in_2d() {
    let mut g = RngStream::new(12, 0).generator();
    for trial in 0..2000 {
        let count = 1 + trial % 12;
        let shift = (trial % 7) as f64 * 0.4;
        let pts: Vec<Vec<f64>> = (0..count)
            .map(|_| {
                let mut p = normal_vector(&mut g, 2);
                p[0] += shift;
                p
            })
            .collect();
        let r = min_norm_point(&pts, 1e-12).unwrap();
        assert!(r.optimal, "trial {trial}");
        let expect = brute_distance_2d(&pts);
        assert!((norm(&r.point) - expect).abs() < 1e-8, "trial {trial}: {} vs {expect}", norm(&r.point));
    }
}

#[test]
fn min_norm_point_examples() {
    let r = min_norm_point(&[vec![1.0, 0.0], vec![0.0, 1.0]], 1e-12).unwrap();
    assert!((norm(&r.point) - 0.5f64.sqrt()).abs() < 1e-14);
    let r = min_norm_point(&[vec![1.0, 2.0], vec![0.0, 0.0], vec![3.0, -1.0]], 1e-12).unwrap();
    assert_eq!(norm(&r.point), 0.0);
    let cross = [vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
    assert!(origin_membership(&cross, 1e-9).unwrap().is_inside());
}

#[test]
fn oracle_2d_examples() {
    assert!(oracle_2d(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap());
    assert!(!oracle_2d(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap());
    assert!(oracle_2d(&[[1.0, 0.0], [-0.5, 0.9], [-0.5, -0.9]]).unwrap());
    assert!(oracle_2d(&[[0.0, 0.0], [1.0, 0.0]]).is_err());
}

#[test]
fn path_moments() {
    let trials = 100_000u64;
    let keys = [TimeKey::exp(0, 0), TimeKey::exp(1, 0)];
    let (mut s1, mut s11, mut s12) = (0.0, 0.0, 0.0);
    for j in 0..trials {
        let p = DyadicPath::<f64>::init(1, &keys, RngStream::new(13, j)).unwrap();
        let (a, b) = (p.get(&keys[0]).unwrap()[0], p.get(&keys[1]).unwrap()[0]);
        s1 += a;
        s11 += a * a;
        s12 += a * b;
    }
    let n = trials as f64;
    let var = s11 / n - (s1 / n).powi(2);
    assert!((var - 1.0).abs() < 0.02, "{var}");
    assert!((s12 / n - 1.0).abs() < 0.03, "{}", s12 / n);
}

#[test]
fn poisson_count_moments() {
    let trials = 10_000u64;
    let total: usize = (0..trials).map(|j| poisson_times(100.0, &RngStream::new(14, j)).unwrap().len()).sum();
    let mean = total as f64 / trials as f64;
    assert!((mean - 100.0).abs() < 3.0 * (100.0 / trials as f64).sqrt() + 1e-9, "{mean}");
    let empty = (0..1000u64).filter(|&j| poisson_times(1e-6, &RngStream::new(14, j)).unwrap().is_empty()).count();
    assert!(empty >= 999);
}

/// Maximum of a standard Brownian bridge on a 1000-point grid exceeds τ = 1 with probability
/// close to, and at most slightly below, `exp(-2)`.
#[test]
fn bridge_maximum_frequency() {
    let trials = 100_000u64;
    let steps = 1000usize;
    let sd = (1.0 / steps as f64).sqrt();
    let mut hits = 0u64;
    for j in 0..trials {
        let z = normal_vector(&mut RngStream::new(15, j).generator(), steps);
        let mut w = 0.0;
        let walk: Vec<f64> = z
            .iter()
            .map(|x| {
                w += sd * x;
                w
            })
            .collect();
        let end = walk[steps - 1];
        let max = walk
            .iter()
            .enumerate()
            .map(|(i, x)| x - (i + 1) as f64 / steps as f64 * end)
            .fold(0.0, f64::max);
        if max >= 1.0 {
            hits += 1;
        }
    }
    let freq = hits as f64 / trials as f64;
    let e2 = (-2f64).exp();
    assert!(freq <= e2 + 0.01 && freq >= e2 - 0.02, "{freq}");
}

#[test]
fn lemma2_hand_examples() {
    let h = 0.5f64.sqrt();
    let r = min_norm_affine_unit(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[h, h]).unwrap();
    assert!((r.u[0] - h).abs() < 1e-14 && (r.u[1] - h).abs() < 1e-14);
    assert!((r.dist - 1.0).abs() < 1e-14);
    let x = vec![3.0f64, 4.0];
    let r = min_norm_affine_unit(&[x.clone()], &[2.0]).unwrap();
    assert!((r.dist - 2.5).abs() < 1e-14);
    assert!((dot(&r.u, &x) - 5.0).abs() < 1e-14);
}

fn desk(c_h: &str) -> Schedule<f64> {
    let mut p = ScheduleParams::desk();
    p.set("C_h", c_h).unwrap();
    Schedule::new(256, &p).unwrap()
}

/// `E_0` recomputed from the path agrees with the reported check, and a held `E_0` means every
/// block increment clears `f(1,0)√a_{i+1}`.
#[test]
fn initial_vector_event_recheck() {
    let sched = desk("0.0002");
    let mut held = 0;
    for j in 0..100u64 {
        let path = DyadicPath::<f64>::on_block_grid(256, sched.n_blocks, 0, RngStream::new(16, j)).unwrap();
        let u = initial_vector(&path, &sched).unwrap();
        let check = step_check(&path, &u, 0, &sched).unwrap();
        let direct = (0..=sched.n_blocks).all(|i| {
            let a = if i == 0 { TimeKey::Zero } else { TimeKey::exp(i as i64 - 1, 0) };
            let b = TimeKey::exp(i as i64, 0);
            path.inner(&u, &b).unwrap() - path.inner(&u, &a).unwrap() >= sched.f_value(1, 0) * b.value().sqrt()
        });
        assert_eq!(check.holds, direct, "trial {j}");
        held += usize::from(check.holds);
    }
    assert!(held > 0, "small C_h should let E_0 hold sometimes");
}

/// Runs where every event held end with the increments and dips the construction promises.
#[test]
fn all_events_imply_final_bounds() {
    let sched = desk("0.0002");
    let mut checked = 0;
    let mut perturbed = 0;
    for j in 0..200u64 {
        let path = DyadicPath::<f64>::on_block_grid(256, sched.n_blocks, sched.steps as u32, RngStream::new(17, j)).unwrap();
        let r = run_construction(&path, &sched).unwrap();
        perturbed += r.events.iter().filter(|e| e.fallback.is_none()).count();
        if !r.all_events_held() {
            continue;
        }
        checked += 1;
        let u = &r.u_final;
        for i in 1..=sched.n_blocks {
            let a = TimeKey::exp(i as i64 - 1, 0);
            let b = TimeKey::exp(i as i64, 0);
            let inc = path.inner(u, &b).unwrap() - path.inner(u, &a).unwrap();
            assert!(inc >= sched.c_f * b.value().sqrt(), "trial {j} block {i}");
            for t in r.grid.iter().filter(|t| **t > a && **t < b) {
                let dip = path.inner(u, t).unwrap() - path.inner(u, &a).unwrap();
                assert!(dip >= -(sched.c_f / 2.0) * a.value().sqrt(), "trial {j} at {t}");
            }
        }
        assert!(r.success);
    }
    assert!(perturbed > 0, "the perturbation branch should run at small C_h");
    eprintln!("runs with every event held: {checked}/200");
}
